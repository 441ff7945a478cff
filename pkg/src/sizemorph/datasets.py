"""Torch views of a dataset directory for GAN training and classifier pretraining."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from torch.utils.data import Dataset
from torchvision import transforms

from . import config
from .deformation import labels_to_soft
from .errors import ConfigurationError
from .synthetic_data import DatasetManifest


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H×W×3 float array → 3×H×W tensor."""
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1).contiguous()


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().permute(1, 2, 0).numpy().astype(np.float32)


def seg_to_tensor(seg: np.ndarray) -> torch.Tensor:
    """H×W labels → 9×H×W one-hot."""
    return labels_to_soft(torch.from_numpy(seg.astype(np.int64)))


class PairDataset(Dataset):
    """Conditional inputs (source size) and targets (target size) of one split, held in memory."""

    def __init__(self, manifest: DatasetManifest, split: str, direction: str = "small2plus"):
        self.manifest = manifest
        self.split = split
        self.source_size = config.SMALL if direction == "small2plus" else config.PLUS
        self.target_size = config.PLUS if direction == "small2plus" else config.SMALL
        self.ids = manifest.ids(split)
        if not self.ids:
            raise ConfigurationError(f"split {split!r} of {manifest.root} is empty")

        cond_images, cond_segs, target_images, target_segs = [], [], [], []
        for sample_id in self.ids:
            sample = manifest.load_sample(sample_id)
            image, seg, _ = sample.side(self.source_size)
            cond_images.append(image_to_tensor(image))
            cond_segs.append(seg_to_tensor(seg))
            image, seg, _ = sample.side(self.target_size)
            target_images.append(image_to_tensor(image))
            target_segs.append(seg_to_tensor(seg))
        self.cond_images = torch.stack(cond_images)
        self.cond_segs = torch.stack(cond_segs)
        self.target_images = torch.stack(target_images)
        self.target_segs = torch.stack(target_segs)

    @property
    def resolution(self) -> int:
        return self.cond_images.shape[-1]

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, index: int) -> dict:
        return {
            "id": self.ids[index],
            "cond_image": self.cond_images[index],
            "cond_seg": self.cond_segs[index],
            "target_image": self.target_images[index],
            "target_seg": self.target_segs[index],
        }

    def batch(self, indices: torch.Tensor, device: Optional[torch.device] = None) -> dict:
        """Stacked tensors for ``indices``; cond_seg[i] and target_seg[i] are a real size pair."""
        out = {
            "cond_image": self.cond_images[indices],
            "cond_seg": self.cond_segs[indices],
            "target_image": self.target_images[indices],
            "target_seg": self.target_segs[indices],
        }
        if device is not None:
            out = {k: v.to(device) for k, v in out.items()}
        return out


def classifier_transform(color_jitter: float, train: bool) -> Optional[transforms.Compose]:
    if not train:
        return None
    steps = [transforms.RandomHorizontalFlip()]
    if color_jitter > 0:
        steps.append(transforms.ColorJitter(brightness=color_jitter, contrast=color_jitter, saturation=color_jitter))
    return transforms.Compose(steps)


class SizeImageDataset(Dataset):
    """Every image of a split with its size label (PLUS = 1)."""

    def __init__(
        self,
        manifest: DatasetManifest,
        split: str,
        transform: Optional[transforms.Compose] = None,
        flip_labels: bool = False,
    ):
        self.transform = transform
        images, labels = [], []
        for sample in manifest.samples(split):
            for image, size in ((sample.image_a, sample.size_a), (sample.image_b, sample.size_b)):
                images.append(image_to_tensor(image))
                label = config.SIZE_TO_TARGET[size.value]
                labels.append(1.0 - label if flip_labels else label)
        if not images:
            raise ConfigurationError(f"split {split!r} of {manifest.root} has no images")
        self.images = torch.stack(images)
        self.labels = torch.tensor(labels, dtype=torch.float32)

    def classes(self) -> set[float]:
        return set(self.labels.tolist())

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, index: int):
        image = self.images[index]
        if self.transform is not None:
            image = self.transform(image)
        return image, self.labels[index]
