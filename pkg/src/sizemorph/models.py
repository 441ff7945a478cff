"""Networks: condition encoder, mapping network, field generator, discriminators, size classifier.

The generator follows the StyleGAN2 layout (equalized learning rate, weight
modulation/demodulation, skip outputs summed across resolutions) except that
the constant 4×4 input is replaced by an encoding of the conditional input and
every resolution emits a 2-channel deformation field instead of RGB.
"""

from __future__ import annotations

import hashlib
import math
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import nn
from torchvision import models as tv_models

from . import config
from .deformation import compose_pyramid, labels_to_soft, warp_image, warp_segmentation
from .errors import ArgumentError, NonFiniteLossError, ShapeError
from .schemas import ClassifierConfig, GeneratorSpec

COND_CHANNELS = 3 + config.NUM_CLASSES


class EqualizedWeight(nn.Module):
    """Weights stored at N(0, 1) and scaled by 1/sqrt(fan_in) on use."""

    def __init__(self, shape: list[int]):
        super().__init__()
        self.c = 1 / math.sqrt(math.prod(shape[1:]))
        self.weight = nn.Parameter(torch.randn(shape))

    def forward(self):
        return self.weight * self.c


class EqualizedLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias: float = 0.0):
        super().__init__()
        self.weight = EqualizedWeight([out_features, in_features])
        self.bias = nn.Parameter(torch.ones(out_features) * bias)

    def forward(self, x: torch.Tensor):
        return F.linear(x, self.weight(), bias=self.bias)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_features: int, out_features: int, kernel_size: int, padding: int = 0):
        super().__init__()
        self.padding = padding
        self.weight = EqualizedWeight([out_features, in_features, kernel_size, kernel_size])
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x: torch.Tensor):
        return F.conv2d(x, self.weight(), bias=self.bias, padding=self.padding)


class Smooth(nn.Module):
    """3×3 binomial blur per channel."""

    def __init__(self):
        super().__init__()
        kernel = torch.tensor([[[[1, 2, 1], [2, 4, 2], [1, 2, 1]]]], dtype=torch.float32)
        self.register_buffer("kernel", kernel / kernel.sum())
        self.pad = nn.ReplicationPad2d(1)

    def forward(self, x: torch.Tensor):
        b, c, h, w = x.shape
        x = self.pad(x.reshape(-1, 1, h, w))
        return F.conv2d(x, self.kernel).reshape(b, c, h, w)


class DownSample(nn.Module):
    def __init__(self):
        super().__init__()
        self.smooth = Smooth()

    def forward(self, x: torch.Tensor):
        x = self.smooth(x)
        return F.interpolate(x, (x.shape[2] // 2, x.shape[3] // 2), mode="bilinear", align_corners=False)


class UpSample(nn.Module):
    def __init__(self):
        super().__init__()
        self.smooth = Smooth()

    def forward(self, x: torch.Tensor):
        return self.smooth(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))


class Conv2dWeightModulate(nn.Module):
    """Convolution whose weights are scaled per sample by a style vector, then demodulated."""

    def __init__(self, in_features: int, out_features: int, kernel_size: int, demodulate: bool = True,
                 eps: float = 1e-8):
        super().__init__()
        self.out_features = out_features
        self.demodulate = demodulate
        self.padding = (kernel_size - 1) // 2
        self.weight = EqualizedWeight([out_features, in_features, kernel_size, kernel_size])
        self.eps = eps

    def forward(self, x: torch.Tensor, s: torch.Tensor):
        b, _, h, w = x.shape
        weights = self.weight()[None] * s[:, None, :, None, None]
        if self.demodulate:
            weights = weights * torch.rsqrt((weights ** 2).sum(dim=(2, 3, 4), keepdim=True) + self.eps)
        x = x.reshape(1, -1, h, w)
        _, _, *ws = weights.shape
        weights = weights.reshape(b * self.out_features, *ws)
        # Grouped convolution applies each sample's kernel to that sample
        x = F.conv2d(x, weights, padding=self.padding, groups=b)
        return x.reshape(-1, self.out_features, h, w)


class StyleBlock(nn.Module):
    """Modulated 3×3 convolution + bias + leaky ReLU. No noise input: randomness enters only through z."""

    def __init__(self, style_dim: int, in_features: int, out_features: int):
        super().__init__()
        self.to_style = EqualizedLinear(style_dim, in_features, bias=1.0)
        self.conv = Conv2dWeightModulate(in_features, out_features, kernel_size=3)
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.activation = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, w: torch.Tensor):
        x = self.conv(x, self.to_style(w))
        return self.activation(x + self.bias[None, :, None, None])


class ToField(nn.Module):
    """1×1 head emitting a 2-channel displacement field, zero at initialization."""

    def __init__(self, features: int):
        super().__init__()
        self.conv = nn.Conv2d(features, 2, kernel_size=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x).permute(0, 2, 3, 1)


class ConditionEncoder(nn.Module):
    """Downsampling convolutions from the 12-channel (image + soft segmentation) input to a 4×4 grid."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.resolution = spec.final_resolution
        resolutions = spec.resolutions()
        top = spec.channels[self.resolution]
        self.from_input = nn.Sequential(EqualizedConv2d(COND_CHANNELS, top, 1), nn.LeakyReLU(0.2))
        blocks = []
        for res in reversed(resolutions[1:]):
            blocks += [
                EqualizedConv2d(spec.channels[res], spec.channels[res // 2], 3, padding=1),
                nn.LeakyReLU(0.2),
                DownSample(),
            ]
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = spec.channels[spec.base_resolution]

    def forward(self, image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"condition image must be (B, 3, H, W), got {tuple(image.shape)}")
        if seg.dim() != 4 or seg.shape[1] != config.NUM_CLASSES:
            raise ShapeError(f"condition segmentation must be (B, {config.NUM_CLASSES}, H, W), got {tuple(seg.shape)}")
        r = self.resolution
        if image.shape[-2:] != (r, r) or seg.shape[-2:] != (r, r):
            raise ShapeError(f"condition inputs must be {r}×{r}, got {tuple(image.shape[-2:])} and "
                             f"{tuple(seg.shape[-2:])}")
        x = torch.cat([image - 0.5, seg.to(image.dtype)], dim=1)
        return self.blocks(self.from_input(x))


class MappingNetwork(nn.Module):
    """MLP z → w."""

    def __init__(self, latent_dim: int, style_dim: int, n_layers: int):
        super().__init__()
        self.latent_dim = latent_dim
        layers = []
        for i in range(n_layers):
            layers += [EqualizedLinear(latent_dim if i == 0 else style_dim, style_dim), nn.LeakyReLU(0.2)]
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"z must be (B, {self.latent_dim}), got {tuple(z.shape)}")
        if not torch.isfinite(z).all():
            raise ArgumentError("z contains non-finite values")
        return self.net(F.normalize(z, dim=1))


class FieldGenerator(nn.Module):
    """Style-modulated blocks from 4×4 to R×R, one field head per resolution."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        resolutions = spec.resolutions()
        ch = spec.channels
        base = resolutions[0]
        self.base_block = StyleBlock(spec.style_dim, ch[base], ch[base])
        self.base_head = ToField(ch[base])
        self.up_sample = UpSample()
        self.blocks = nn.ModuleList()
        self.heads = nn.ModuleList()
        for prev, res in zip(resolutions, resolutions[1:]):
            self.blocks.append(nn.ModuleList([
                StyleBlock(spec.style_dim, ch[prev], ch[res]),
                StyleBlock(spec.style_dim, ch[res], ch[res]),
            ]))
            self.heads.append(ToField(ch[res]))

    def forward(self, cond: torch.Tensor, w: torch.Tensor) -> list[torch.Tensor]:
        if cond.shape[0] != w.shape[0]:
            raise ShapeError(f"condition batch {cond.shape[0]} does not match style batch {w.shape[0]}")
        x = self.base_block(cond, w)
        fields = [self.base_head(x)]
        for (block1, block2), head in zip(self.blocks, self.heads):
            x = self.up_sample(x)
            x = block2(block1(x, w), w)
            fields.append(head(x))
        return fields


class ResizeOutput(NamedTuple):
    image: torch.Tensor   # (B, 3, R, R)
    seg: torch.Tensor     # (B, 9, R, R) soft
    field: torch.Tensor   # (B, R, R, 2)
    levels: list[torch.Tensor]


class SizeGAN(nn.Module):
    """Conditional deformation-field generator: (image, segmentation, z) → resized image."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.encoder = ConditionEncoder(spec)
        self.mapping = MappingNetwork(spec.latent_dim, spec.style_dim, spec.mapping_layers)
        self.generator = FieldGenerator(spec)

    def encode_condition(self, image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
        return self.encoder(image, seg)

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        return self.mapping(z)

    def generate_fields(self, cond: torch.Tensor, w: torch.Tensor) -> list[torch.Tensor]:
        return self.generator(cond, w)

    def sample_latent(self, n: int, seed: int = config.LATENT_SEED, device=None) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        z = torch.randn(n, self.spec.latent_dim, generator=generator)
        return z.to(device) if device is not None else z

    def resize(self, image: torch.Tensor, seg: torch.Tensor, z: torch.Tensor) -> ResizeOutput:
        """Warp the source image and segmentation toward the target size.

        Args:
            image: (B, 3, R, R) in [0, 1]
            seg: (B, 9, R, R) soft segmentation, or (B, R, R) integer labels
            z: (B, latent_dim) latent vectors

        Returns:
            ResizeOutput(image, seg, field, levels)
        """
        if seg.dim() == 3 and not seg.is_floating_point():
            seg = labels_to_soft(seg).to(image.dtype)
        cond = self.encode_condition(image, seg)
        w = self.map_latent(z)
        levels = self.generate_fields(cond, w)
        field = compose_pyramid(levels)
        if not torch.isfinite(field).all():
            raise NonFiniteLossError("generated deformation field is not finite")
        return ResizeOutput(warp_image(image, field), warp_segmentation(seg, field), field, levels)

    def forward(self, image: torch.Tensor, seg: torch.Tensor, z: torch.Tensor) -> ResizeOutput:
        return self.resize(image, seg, z)


class DiscriminatorBlock(nn.Module):
    """Two 3×3 convolutions with a downsampled residual connection."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.residual = nn.Sequential(DownSample(), EqualizedConv2d(in_features, out_features, kernel_size=1))
        self.block = nn.Sequential(
            EqualizedConv2d(in_features, in_features, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2),
            EqualizedConv2d(in_features, out_features, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.down_sample = DownSample()
        self.scale = 1 / math.sqrt(2)

    def forward(self, x: torch.Tensor):
        return (self.down_sample(self.block(x)) + self.residual(x)) * self.scale


class Discriminator(nn.Module):
    """Residual downsampling discriminator from R×R to a single real logit per sample."""

    def __init__(self, resolution: int, in_channels: int = 3, n_features: int = 32, max_features: int = 256,
                 center_input: bool = True):
        super().__init__()
        self.resolution = resolution
        self.in_channels = in_channels
        self.center_input = center_input
        log_resolution = int(math.log2(resolution))
        features = [min(max_features, n_features * (2 ** i)) for i in range(log_resolution - 1)]
        self.from_input = nn.Sequential(EqualizedConv2d(in_channels, features[0], 1), nn.LeakyReLU(0.2))
        self.blocks = nn.Sequential(*[DiscriminatorBlock(features[i], features[i + 1])
                                      for i in range(len(features) - 1)])
        # Unpadded 3×3 takes the 4×4 map to 2×2
        self.conv = EqualizedConv2d(features[-1], features[-1], 3)
        self.final = EqualizedLinear(2 * 2 * features[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels or x.shape[-2:] != (self.resolution, self.resolution):
            raise ShapeError(f"discriminator expects (B, {self.in_channels}, {self.resolution}, {self.resolution}), "
                             f"got {tuple(x.shape)}")
        if self.center_input:
            x = x - 0.5
        x = self.blocks(self.from_input(x))
        x = F.leaky_relu(self.conv(x), 0.2)
        return self.final(x.reshape(x.shape[0], -1)).squeeze(-1)


class ImageDiscriminator(Discriminator):
    def __init__(self, resolution: int, **kwargs):
        super().__init__(resolution, in_channels=3, **kwargs)


class SegPairDiscriminator(Discriminator):
    """Judges (size A segmentation, size B segmentation) pairs; 18 input channels."""

    def __init__(self, resolution: int, **kwargs):
        super().__init__(resolution, in_channels=2 * config.NUM_CLASSES, center_input=False, **kwargs)

    def forward(self, seg_a: torch.Tensor, seg_x: torch.Tensor) -> torch.Tensor:
        if seg_a.shape != seg_x.shape:
            raise ShapeError(f"segmentation pair shapes differ: {tuple(seg_a.shape)} vs {tuple(seg_x.shape)}")
        return super().forward(torch.cat([seg_a, seg_x], dim=1))


_RESNETS = {18: tv_models.resnet18, 34: tv_models.resnet34, 50: tv_models.resnet50}


class SizeClassifier(nn.Module):
    """Residual network predicting the logit of PLUS for a garment image."""

    def __init__(self, classifier_config: ClassifierConfig):
        super().__init__()
        self.depth = classifier_config.depth
        self.input_resolution = classifier_config.input_resolution
        self.net = _RESNETS[self.depth](weights=None, num_classes=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"classifier expects (B, 3, H, W), got {tuple(image.shape)}")
        r = self.input_resolution
        if image.shape[-2:] != (r, r):
            image = F.interpolate(image, size=(r, r), mode="bilinear", align_corners=False)
        return self.net((image - 0.5) / 0.5).squeeze(-1)


class Networks(NamedTuple):
    """Everything trained or consulted by the GAN loop."""
    sizegan: SizeGAN
    d_image: ImageDiscriminator
    d_seg: SegPairDiscriminator
    classifier: SizeClassifier


def build_networks(spec: GeneratorSpec, classifier_config: ClassifierConfig, seed: Optional[int] = None,
                   device=None) -> Networks:
    """Instantiate all networks; ``seed`` fixes their initial parameters."""
    if seed is not None:
        torch.manual_seed(seed)
    r = spec.final_resolution
    nets = Networks(SizeGAN(spec), ImageDiscriminator(r), SegPairDiscriminator(r), SizeClassifier(classifier_config))
    if device is not None:
        for net in nets:
            net.to(device)
    return nets


def classify_size(classifier: SizeClassifier, image: torch.Tensor) -> torch.Tensor:
    return classifier(image)


def discriminate_image(discriminator: ImageDiscriminator, image: torch.Tensor) -> torch.Tensor:
    return discriminator(image)


def discriminate_seg_pair(discriminator: SegPairDiscriminator, seg_a: torch.Tensor, seg_x: torch.Tensor) -> torch.Tensor:
    return discriminator(seg_a, seg_x)


def parameter_hash(module: nn.Module) -> str:
    """Digest of every parameter and buffer, for frozen-weights checks."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    module.requires_grad_(False)
    return module
