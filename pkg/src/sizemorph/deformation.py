"""Deformation fields: pyramid composition, warping, smoothness and the single-axis baseline.

Fields are stored channels-last, ``(..., H, W, 2)`` with components ``(dx, dy)`` in
normalized coordinates: a displacement of ±1 spans half the image extent along
that axis, so one pixel in x is ``2 / W``. Output pixel ``(x, y)`` reads the input
at ``(x + dx * W / 2, y + dy * H / 2)`` (pixel-center grid), bilinearly, with
border clamping. Images and soft segmentations are channels-first ``(..., C, H, W)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from . import config
from .errors import ArgumentError, DimensionError, ShapeError

_DFIELD_HEADER = struct.Struct("<ii")


@dataclass
class DeformationField:
    """A single H×W×2 displacement grid."""
    displacements: torch.Tensor

    def __post_init__(self):
        if self.displacements.dim() != 3 or self.displacements.shape[-1] != 2:
            raise ShapeError(
                f"displacements must be H×W×2, got {tuple(self.displacements.shape)}"
            )
        if not torch.isfinite(self.displacements).all():
            raise ArgumentError("deformation field has non-finite entries")

    @property
    def height(self) -> int:
        return self.displacements.shape[0]

    @property
    def width(self) -> int:
        return self.displacements.shape[1]

    def batch(self) -> torch.Tensor:
        """View as a batch of one, ``(1, H, W, 2)``."""
        return self.displacements.unsqueeze(0)

    @classmethod
    def from_batch(cls, fields: torch.Tensor, index: int = 0) -> "DeformationField":
        return cls(fields[index].detach().cpu())

    def __str__(self):
        return f"DeformationField({self.height}×{self.width})"


FieldLike = Union[DeformationField, torch.Tensor]


def _as_batch(field: FieldLike) -> torch.Tensor:
    tensor = field.batch() if isinstance(field, DeformationField) else field
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 4 or tensor.shape[-1] != 2:
        raise ShapeError(f"expected a (B, H, W, 2) field, got {tuple(tensor.shape)}")
    return tensor


def _like(template: FieldLike, batch: torch.Tensor) -> FieldLike:
    """Return ``batch`` in the same form the caller passed in."""
    if isinstance(template, DeformationField):
        return DeformationField(batch[0])
    if template.dim() == 3:
        return batch[0]
    return batch


def identity_field(height: int, width: int, dtype: torch.dtype = torch.float32) -> DeformationField:
    """All-zero field: the identity warp."""
    if height < 1 or width < 1:
        raise DimensionError(f"field dimensions must be positive, got {height}×{width}")
    return DeformationField(torch.zeros(height, width, 2, dtype=dtype))


def upsample_field(field: FieldLike, target_h: int, target_w: int) -> FieldLike:
    """Bilinearly upsample each displacement component to ``target_h × target_w``.

    Normalized units mean magnitudes carry over unchanged.
    """
    batch = _as_batch(field)
    h, w = batch.shape[1:3]
    if target_h < h or target_w < w:
        raise DimensionError(f"cannot downsample a {h}×{w} field to {target_h}×{target_w}")
    if (target_h, target_w) == (h, w):
        return _like(field, batch)
    channels_first = batch.permute(0, 3, 1, 2)
    up = F.interpolate(channels_first, size=(target_h, target_w), mode="bilinear", align_corners=False)
    return _like(field, up.permute(0, 2, 3, 1).contiguous())


def compose_pyramid(fields: Sequence[FieldLike]) -> FieldLike:
    """Sum a coarse-to-fine list of fields at the finest resolution.

    Each level is upsampled straight to the final size before summing, so the
    result is exactly linear in the levels.
    """
    if not fields:
        raise ShapeError("field pyramid is empty")
    batches = [_as_batch(f) for f in fields]
    for coarse, fine in zip(batches, batches[1:]):
        if fine.shape[1] != 2 * coarse.shape[1] or fine.shape[2] != 2 * coarse.shape[2]:
            raise ShapeError(
                f"pyramid resolutions must double: {tuple(coarse.shape[1:3])} -> {tuple(fine.shape[1:3])}"
            )
    target_h, target_w = batches[-1].shape[1:3]
    total = batches[-1]
    for level in batches[:-1]:
        total = total + upsample_field(level, target_h, target_w)
    return _like(fields[-1], total)


def _bilinear_sample(values: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Sample ``values`` (B, C, H, W) at the pixel-center grid displaced by ``field``.

    Sampling positions are built in pixel units so a zero displacement lands
    exactly on grid points and reproduces the input bit for bit.
    """
    b, c, h, w = values.shape
    xs = torch.arange(w, dtype=field.dtype, device=field.device).view(1, 1, w)
    ys = torch.arange(h, dtype=field.dtype, device=field.device).view(1, h, 1)
    px = (xs + field[..., 0] * (w / 2)).clamp(0, w - 1)
    py = (ys + field[..., 1] * (h / 2)).clamp(0, h - 1)

    x0 = px.detach().floor().clamp(max=max(w - 2, 0))
    y0 = py.detach().floor().clamp(max=max(h - 2, 0))
    fx = (px - x0).to(values.dtype).unsqueeze(1)
    fy = (py - y0).to(values.dtype).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = values.reshape(b, c, h * w)

    def gather(yi: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
        index = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, index).view(b, c, h, w)

    top = gather(y0, x0) * (1 - fx) + gather(y0, x1) * fx
    bottom = gather(y1, x0) * (1 - fx) + gather(y1, x1) * fx
    return top * (1 - fy) + bottom * fy


def _warp(values: torch.Tensor, field: FieldLike) -> torch.Tensor:
    single = values.dim() == 3
    batch_values = values.unsqueeze(0) if single else values
    batch_field = _as_batch(field).to(batch_values.device)
    if batch_values.shape[-2:] != batch_field.shape[1:3]:
        raise ShapeError(
            f"image is {tuple(batch_values.shape[-2:])} but field is {tuple(batch_field.shape[1:3])}"
        )
    nb, nf = batch_values.shape[0], batch_field.shape[0]
    if nb != nf:
        if nf == 1:
            batch_field = batch_field.expand(nb, -1, -1, -1)
        elif nb == 1:
            batch_values = batch_values.expand(nf, -1, -1, -1)
        else:
            raise ShapeError(f"batch sizes differ: {nb} images, {nf} fields")
    out = _bilinear_sample(batch_values, batch_field)
    return out[0] if single and out.shape[0] == 1 else out


def warp_image(image: torch.Tensor, field: FieldLike) -> torch.Tensor:
    """Warp an image (C, H, W) or batch (B, C, H, W); differentiable in both arguments."""
    return _warp(image, field)


def warp_segmentation(seg: torch.Tensor, field: FieldLike) -> torch.Tensor:
    """Warp a soft segmentation channel-wise; per-pixel mass stays 1."""
    if seg.shape[-3] != config.NUM_CLASSES:
        raise ShapeError(f"soft segmentation needs {config.NUM_CLASSES} channels, got {seg.shape[-3]}")
    return _warp(seg, field)


def smoothness_loss(field: FieldLike) -> torch.Tensor:
    """Mean squared forward difference over all neighbor pairs (both axes, both components).

    Batched fields are averaged over the batch.
    """
    batch = _as_batch(field)
    if not torch.isfinite(batch).all():
        raise ArgumentError("smoothness_loss needs a finite field")
    h, w = batch.shape[1:3]
    n_pairs = h * (w - 1) + (h - 1) * w
    if n_pairs == 0:
        return batch.sum() * 0
    dx = batch[:, :, 1:, :] - batch[:, :, :-1, :]
    dy = batch[:, 1:, :, :] - batch[:, :-1, :, :]
    per_field = (dx.pow(2).sum(dim=(1, 2, 3)) + dy.pow(2).sum(dim=(1, 2, 3))) / n_pairs
    return per_field.mean()


def single_axis_field(height: int, width: int, ratio: float, dtype: torch.dtype = torch.float32) -> DeformationField:
    """Analytic field scaling content horizontally by ``ratio`` about the image center."""
    if ratio <= 0:
        raise ArgumentError(f"ratio must be positive, got {ratio}")
    if height < 1 or width < 1:
        raise DimensionError(f"field dimensions must be positive, got {height}×{width}")
    u = (2 * torch.arange(width, dtype=torch.float64) + 1) / width - 1
    dx = (u * (1.0 / ratio - 1.0)).to(dtype)
    displacements = torch.zeros(height, width, 2, dtype=dtype)
    displacements[..., 0] = dx.view(1, width)
    return DeformationField(displacements)


def single_axis_resize(image: torch.Tensor, ratio: float) -> torch.Tensor:
    """Single-axis baseline: stretch the image in x by ``ratio`` on a fixed canvas."""
    if ratio <= 0:
        raise ArgumentError(f"ratio must be positive, got {ratio}")
    h, w = image.shape[-2:]
    field = single_axis_field(h, w, ratio, dtype=image.dtype if image.is_floating_point() else torch.float32)
    return warp_image(image, field.displacements.to(image.device))


def estimate_hip_ratio(keypoints_a: Sequence[float], keypoints_b: Sequence[float]) -> float:
    """Ratio of mean hip-keypoint distances, size B over size A.

    Args:
        keypoints_a: Hip-pair distances (pixels) from size A images
        keypoints_b: Hip-pair distances from size B images

    Returns:
        mean(B) / mean(A)
    """
    for name, values in (("A", keypoints_a), ("B", keypoints_b)):
        if len(values) == 0:
            raise ArgumentError(f"no hip distances for size {name}")
        if any(v <= 0 for v in values):
            raise ArgumentError(f"hip distances for size {name} must be positive")
    return float(np.mean(keypoints_b) / np.mean(keypoints_a))


def labels_to_soft(labels: torch.Tensor) -> torch.Tensor:
    """One-hot (…, 9, H, W) float map from integer labels (…, H, W)."""
    if labels.min() < 0 or labels.max() >= config.NUM_CLASSES:
        raise ArgumentError(f"labels must lie in 0..{config.NUM_CLASSES - 1}")
    one_hot = F.one_hot(labels.long(), config.NUM_CLASSES).float()
    return one_hot.movedim(-1, -3).contiguous()


def soft_to_labels(soft: torch.Tensor) -> torch.Tensor:
    return soft.argmax(dim=-3)


def save_field(field: FieldLike, path: Path) -> Path:
    """Write a ``.dfield`` file: int32 H, W header then float32 (H, W, 2) payload, little-endian."""
    batch = _as_batch(field)
    if batch.shape[0] != 1:
        raise ShapeError("save_field writes one field at a time")
    data = batch[0].detach().cpu().numpy().astype("<f4")
    h, w = data.shape[:2]
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_DFIELD_HEADER.pack(h, w))
        f.write(data.tobytes(order="C"))
    return path


def load_field(path: Path) -> DeformationField:
    """Read a ``.dfield`` file written by save_field."""
    raw = Path(path).read_bytes()
    if len(raw) < _DFIELD_HEADER.size:
        raise ShapeError(f"{path}: truncated header")
    h, w = _DFIELD_HEADER.unpack_from(raw)
    expected = _DFIELD_HEADER.size + h * w * 2 * 4
    if h < 1 or w < 1 or len(raw) != expected:
        raise ShapeError(f"{path}: header says {h}×{w} but payload is {len(raw) - _DFIELD_HEADER.size} bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_DFIELD_HEADER.size).reshape(h, w, 2)
    return DeformationField(torch.from_numpy(data.astype(np.float32)))


def field_quiver_samples(field: FieldLike, stride: int = config.QUIVER_STRIDE) -> tuple[np.ndarray, ...]:
    """Arrow table (x, y, u, v) in pixels, every ``stride``-th pixel.

    Arrows show where content moves, the negated sampling offset.
    """
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    batch = _as_batch(field)
    disp = batch[0].detach().cpu().double().numpy()
    h, w = disp.shape[:2]
    ys, xs = np.mgrid[0:h:stride, 0:w:stride]
    u = -disp[ys, xs, 0] * (w / 2)
    v = -disp[ys, xs, 1] * (h / 2)
    return xs.ravel(), ys.ravel(), u.ravel(), v.ravel()


def visualize_field(
    field: FieldLike,
    stride: int = config.QUIVER_STRIDE,
    out_path: Optional[Path] = None,
    image: Optional[torch.Tensor] = None,
) -> Path:
    """Write a quiver plot of the field as PNG, optionally over the image it warps."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if out_path is None:
        raise ArgumentError("visualize_field needs an output path")
    xs, ys, u, v = field_quiver_samples(field, stride)
    h, w = _as_batch(field).shape[1:3]

    fig, ax = plt.subplots(figsize=(4, 4 * h / w), dpi=100)
    try:
        if image is not None:
            ax.imshow(image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy(), extent=(-0.5, w - 0.5, h - 0.5, -0.5))
        ax.scatter(xs, ys, s=2, c="tab:blue")
        ax.quiver(xs, ys, u, v, angles="xy", scale_units="xy", scale=1, color="tab:red", width=0.004)
        ax.set_xlim(-0.5, w - 0.5)
        ax.set_ylim(h - 0.5, -0.5)
        ax.set_aspect("equal")
        ax.set_axis_off()
        out_path = Path(out_path)
        fig.savefig(out_path, format="png", bbox_inches="tight", metadata={"Software": None})
    finally:
        plt.close(fig)
    return out_path
