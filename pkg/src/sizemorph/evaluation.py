"""Automated stand-ins for sizing, faithfulness and realism judgements.

Sizing is measured with the frozen size classifier, faithfulness with garment
color histograms and stripe counts, realism with field statistics and image
grids. None of these replace a human study; reports say so.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, Field

from . import config
from .deformation import (
    DeformationField,
    FieldLike,
    single_axis_field,
    smoothness_loss,
    warp_image,
    warp_segmentation,
)
from .errors import ArgumentError, ShapeError
from .models import SizeClassifier, SizeGAN

PROXY_NOTE = (
    "Automated proxies: target-size accuracy from the frozen size classifier (sizing), "
    "garment histogram distance and stripe counts (faithfulness), field smoothness and grids (realism). "
    "They are surrogates for human judgement, not a reproduction of it."
)

ImageLike = Union[torch.Tensor, np.ndarray]


class SampleRecord(BaseModel):
    id: str
    target_size_prob: float
    histogram_distance: Optional[float] = None
    stripe_count_src: Optional[int] = None
    stripe_count_out: Optional[int] = None
    mean_abs_displacement: float = 0.0
    smoothness_energy: float = 0.0


class EvalReport(BaseModel):
    """Per-sample metrics of one method on one split, plus aggregates."""
    version: int = config.REPORT_VERSION
    method: str
    target_size: str
    per_sample: list[SampleRecord] = Field(default_factory=list)
    aggregates: dict[str, Optional[float]] = Field(default_factory=dict)

    def recompute_aggregates(self) -> dict[str, Optional[float]]:
        return aggregate(self.per_sample)

    def __str__(self):
        acc = self.aggregates.get("target_size_accuracy")
        hist = self.aggregates.get("mean_histogram_distance")
        return (f"{self.method}: target-size accuracy {_fmt(acc)}, "
                f"histogram distance {_fmt(hist)}, n={len(self.per_sample)}")


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def aggregate(records: Sequence[SampleRecord]) -> dict[str, Optional[float]]:
    """Aggregates of a report, recomputable from its records."""
    hist = [r.histogram_distance for r in records if r.histogram_distance is not None]
    stripes = [r for r in records if r.stripe_count_src is not None and r.stripe_count_out is not None]
    return {
        "n_samples": float(len(records)),
        "target_size_accuracy": _mean([1.0 if r.target_size_prob > 0.5 else 0.0 for r in records]),
        "mean_histogram_distance": _mean(hist),
        "stripe_preservation": _mean([1.0 if r.stripe_count_src == r.stripe_count_out else 0.0 for r in stripes]),
        "mean_abs_displacement": _mean([r.mean_abs_displacement for r in records]),
        "mean_smoothness_energy": _mean([r.smoothness_energy for r in records]),
    }


def _to_hwc(image: ImageLike) -> np.ndarray:
    if torch.is_tensor(image):
        if image.dim() != 3 or image.shape[0] != 3:
            raise ShapeError(f"expected a (3, H, W) image, got {tuple(image.shape)}")
        return image.detach().cpu().permute(1, 2, 0).numpy()
    array = np.asarray(image)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {array.shape}")
    return array


def _to_mask(mask: ImageLike) -> np.ndarray:
    return (mask.detach().cpu().numpy() if torch.is_tensor(mask) else np.asarray(mask)).astype(bool)


def garment_mask(seg: torch.Tensor) -> torch.Tensor:
    """Upper-garment mask from integer labels (H, W) or a soft map (9, H, W).

    Soft maps count a pixel only when it is garment with near certainty, so
    masked output pixels are interpolated from garment pixels alone.
    """
    if seg.is_floating_point():
        if seg.dim() != 3 or seg.shape[0] != config.NUM_CLASSES:
            raise ShapeError(f"soft segmentation must be ({config.NUM_CLASSES}, H, W), got {tuple(seg.shape)}")
        return seg[config.UPPER_GARMENT] >= config.STRICT_MASK_CONFIDENCE
    return seg == config.UPPER_GARMENT


def size_probabilities(classifier: SizeClassifier, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    """sigmoid(logit) of PLUS for a batch of (3, H, W) images."""
    device = next(classifier.parameters()).device
    was_training = classifier.training
    classifier.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size].to(device)
            probs.append(torch.sigmoid(classifier(chunk)).cpu())
    classifier.train(was_training)
    return torch.cat(probs) if probs else torch.empty(0)


def target_size_accuracy(outputs: Union[torch.Tensor, Sequence[torch.Tensor]], classifier: SizeClassifier,
                         target: str) -> float:
    """Fraction of outputs the classifier places on the ``target`` side of 0.5."""
    if len(outputs) == 0:
        raise ArgumentError("target_size_accuracy needs at least one output")
    images = outputs if torch.is_tensor(outputs) else torch.stack(list(outputs))
    probs = size_probabilities(classifier, images)
    on_target = probs > 0.5 if target == config.PLUS else probs < 0.5
    return float(on_target.double().mean())


def _histogram(image: np.ndarray, mask: np.ndarray, bins: int) -> np.ndarray:
    quantized = np.clip(np.round(image[mask] * 255.0), 0, 255).astype(np.int64)
    index = quantized * bins // 256
    hist = np.concatenate([np.bincount(index[:, c], minlength=bins) for c in range(3)]).astype(np.float64)
    return hist / hist.sum()


def garment_histogram_distance(
    source: ImageLike,
    source_garment_mask: ImageLike,
    output: ImageLike,
    output_garment_mask: ImageLike,
    bins: int = config.HISTOGRAM_BINS,
) -> Optional[float]:
    """L1 distance in [0, 2] between garment color histograms; None when either mask is empty."""
    src, out = _to_hwc(source), _to_hwc(output)
    src_mask, out_mask = _to_mask(source_garment_mask), _to_mask(output_garment_mask)
    if src_mask.shape != src.shape[:2] or out_mask.shape != out.shape[:2]:
        raise ShapeError("garment masks must match their images")
    if not src_mask.any() or not out_mask.any():
        return None
    return float(np.abs(_histogram(src, src_mask, bins) - _histogram(out, out_mask, bins)).sum())


def stripe_profile(image: ImageLike, mask: ImageLike, window: int = config.STRIPE_SMOOTHING) -> np.ndarray:
    """Smoothed, mean-centered luminance of garment rows, top to bottom.

    Rows are averaged over the central third of the garment's columns.
    """
    rgb = _to_hwc(image).astype(np.float64)
    m = _to_mask(mask)
    cols = np.flatnonzero(m.any(axis=0))
    if len(cols):
        third = (cols[-1] - cols[0] + 1) / 3
        central = np.zeros_like(m)
        central[:, int(cols[0] + third):int(np.ceil(cols[-1] + 1 - third))] = True
        if (m & central).any():
            m = m & central
    luminance = rgb @ np.array([0.299, 0.587, 0.114])
    rows = np.flatnonzero(m.any(axis=1))
    profile = np.array([luminance[r][m[r]].mean() for r in rows])
    if window > 1 and len(profile) >= window:
        half = window // 2
        padded = np.pad(profile, (half, window - 1 - half), mode="edge")
        profile = np.convolve(padded, np.ones(window) / window, mode="valid")
    return profile - profile.mean() if len(profile) else profile


def stripe_count(image: ImageLike, garment_mask: ImageLike, window: int = config.STRIPE_SMOOTHING,
                 tolerance: float = 0.02) -> Optional[int]:
    """Number of horizontal stripes on the garment; None when the mask is empty.

    Counts sign changes of the row profile, ignoring rows within ``tolerance``
    of the mean. A garment with k stripes shows 2k changes. Smoothing applies
    only when ``MAX_STRIPES`` stripes on the garment would be two windows tall.
    """
    m = _to_mask(garment_mask)
    if not m.any():
        return None
    if int(m.any(axis=1).sum()) < 2 * window * (2 * config.MAX_STRIPES + 1):
        window = 1
    profile = stripe_profile(image, m, window)
    signs = np.sign(profile[np.abs(profile) >= tolerance])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1])) if len(signs) > 1 else 0
    return (changes + 1) // 2


def field_statistics(field: FieldLike) -> dict[str, float]:
    """Mean and max displacement magnitude (normalized units) and smoothness energy."""
    batch = field.batch() if isinstance(field, DeformationField) else field
    batch = (batch.unsqueeze(0) if batch.dim() == 3 else batch).detach().double()
    magnitude = batch.norm(dim=-1)
    return {
        "mean_abs_displacement": float(magnitude.mean()),
        "max_abs_displacement": float(magnitude.max()),
        "smoothness_energy": float(smoothness_loss(batch)),
    }


def evaluate_outputs(
    method: str,
    ids: Sequence[str],
    sources: torch.Tensor,
    source_segs: torch.Tensor,
    outputs: torch.Tensor,
    output_segs: torch.Tensor,
    fields: torch.Tensor,
    classifier: SizeClassifier,
    target: str,
) -> EvalReport:
    """Build a report from already-computed outputs.

    Args:
        sources, outputs: (N, 3, R, R) images
        source_segs, output_segs: (N, 9, R, R) soft segmentations
        fields: (N, R, R, 2) final fields (one shared field is broadcast)
    """
    if len(ids) == 0:
        raise ArgumentError("no samples to evaluate")
    probs = size_probabilities(classifier, outputs)
    if target == config.SMALL:
        probs = 1.0 - probs
    if fields.shape[0] == 1 and len(ids) > 1:
        fields = fields.expand(len(ids), -1, -1, -1)

    records = []
    for i, sample_id in enumerate(ids):
        src_mask = garment_mask(source_segs[i].argmax(dim=0))
        out_mask = garment_mask(output_segs[i])
        stats = field_statistics(fields[i])
        records.append(SampleRecord(
            id=sample_id,
            target_size_prob=float(probs[i]),
            histogram_distance=garment_histogram_distance(sources[i], src_mask, outputs[i], out_mask),
            stripe_count_src=stripe_count(sources[i], src_mask),
            stripe_count_out=stripe_count(outputs[i], out_mask),
            mean_abs_displacement=stats["mean_abs_displacement"],
            smoothness_energy=stats["smoothness_energy"],
        ))
    return EvalReport(method=method, target_size=target, per_sample=records, aggregates=aggregate(records))


def baseline_tag(ratio: float) -> str:
    return f"single_axis_{ratio:g}"


class Comparison(NamedTuple):
    reports: dict[str, EvalReport]
    ids: list[str]
    sources: torch.Tensor
    outputs: dict[str, torch.Tensor]
    ground_truth: torch.Tensor


def run_sizegan(model: SizeGAN, images: torch.Tensor, segs: torch.Tensor, latent_seed: int = config.LATENT_SEED,
                batch_size: int = 16):
    """Resize a whole set in chunks with latents drawn from ``latent_seed``."""
    device = next(model.parameters()).device
    z_all = model.sample_latent(len(images), latent_seed)
    out_images, out_segs, fields = [], [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            stop = start + batch_size
            result = model.resize(images[start:stop].to(device), segs[start:stop].to(device), z_all[start:stop].to(device))
            out_images.append(result.image.cpu())
            out_segs.append(result.seg.cpu())
            fields.append(result.field.cpu())
    return torch.cat(out_images), torch.cat(out_segs), torch.cat(fields)


def run_baseline(images: torch.Tensor, segs: torch.Tensor, ratio: float):
    h, w = images.shape[-2:]
    field = single_axis_field(h, w, ratio).displacements.unsqueeze(0)
    return warp_image(images, field), warp_segmentation(segs, field), field


def compare_methods(
    test_set,
    model: SizeGAN,
    classifier: SizeClassifier,
    ratios: Sequence[float] = config.BASELINE_RATIOS,
    latent_seed: int = config.LATENT_SEED,
) -> Comparison:
    """Evaluate the model and each single-axis ratio on the same samples in the same order."""
    ids = list(test_set.ids)
    sources, source_segs = test_set.cond_images, test_set.cond_segs
    target = test_set.target_size
    reports, outputs = {}, {}

    images, segs, fields = run_sizegan(model, sources, source_segs, latent_seed)
    reports["sizegan"] = evaluate_outputs("sizegan", ids, sources, source_segs, images, segs, fields, classifier, target)
    outputs["sizegan"] = images
    for ratio in ratios:
        tag = baseline_tag(ratio)
        images, segs, field = run_baseline(sources, source_segs, ratio)
        reports[tag] = evaluate_outputs(tag, ids, sources, source_segs, images, segs, field, classifier, target)
        outputs[tag] = images
    for report in reports.values():
        print(f"  {report}")
    return Comparison(reports, ids, sources, outputs, test_set.target_images)


def _to_pil(image: torch.Tensor) -> Image.Image:
    data = (image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    return Image.fromarray(data, "RGB")


def render_grid(columns: list[torch.Tensor], rows: Sequence[int], out_path: Path) -> Path:
    """One row per sample, one column per image set."""
    r = columns[0].shape[-1]
    canvas = Image.new("RGB", (len(columns) * r, len(rows) * r), (255, 255, 255))
    for row, index in enumerate(rows):
        for col, images in enumerate(columns):
            canvas.paste(_to_pil(images[index]), (col * r, row * r))
    canvas.save(out_path, format="PNG")
    return out_path


def render_report(
    reports: Sequence[EvalReport],
    out_dir: Path,
    comparison: Optional[Comparison] = None,
    grid_samples: int = 6,
    ablation: Optional[dict] = None,
) -> dict[str, Path]:
    """Write report.json, report.md, grids/*.png and (when given) ablation.json."""
    if not reports:
        raise ArgumentError("render_report needs at least one report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    payload = {
        "version": config.REPORT_VERSION,
        "note": PROXY_NOTE,
        "reports": [r.model_dump(mode="json") for r in reports],
    }
    paths["json"] = out_dir / "report.json"
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    lines = ["# Evaluation report", "", PROXY_NOTE, "",
             "| method | target size | n | target-size acc. | hist. dist. | stripes kept | mean |disp| | smoothness |",
             "|---|---|---|---|---|---|---|---|"]
    for r in reports:
        a = r.aggregates
        lines.append(
            f"| {r.method} | {r.target_size} | {len(r.per_sample)} | {_fmt(a.get('target_size_accuracy'))} "
            f"| {_fmt(a.get('mean_histogram_distance'))} | {_fmt(a.get('stripe_preservation'))} "
            f"| {_fmt(a.get('mean_abs_displacement'))} | {_fmt(a.get('mean_smoothness_energy'))} |"
        )
    if ablation:
        lines += ["", "## Ablation", "", "| config | target-size acc. | smoothness |", "|---|---|---|"]
        for name, entry in ablation.get("configs", {}).items():
            lines.append(f"| {name} | {_fmt(entry.get('target_size_accuracy'))} "
                         f"| {_fmt(entry.get('smoothness_energy'))} |")
        if not ablation.get("ordering_holds", True):
            lines += ["", "**Flag:** full model accuracy is below the image-discriminator-only configuration."]
    paths["markdown"] = out_dir / "report.md"
    paths["markdown"].write_text("\n".join(lines) + "\n")

    if comparison is not None:
        grid_dir = out_dir / "grids"
        grid_dir.mkdir(exist_ok=True)
        columns = [comparison.sources]
        columns += [comparison.outputs[r.method] for r in reports if r.method in comparison.outputs]
        columns.append(comparison.ground_truth)
        n = len(comparison.ids)
        for chunk, start in enumerate(range(0, n, grid_samples)):
            rows = list(range(start, min(start + grid_samples, n)))
            paths[f"grid_{chunk:02d}"] = render_grid(columns, rows, grid_dir / f"{chunk:02d}.png")

    if ablation is not None:
        paths["ablation"] = out_dir / "ablation.json"
        paths["ablation"].write_text(json.dumps(ablation, indent=2, sort_keys=True) + "\n")
    return paths


def load_reports(path: Path) -> list[EvalReport]:
    payload = json.loads(Path(path).read_text())
    return [EvalReport.model_validate(r) for r in payload["reports"]]
