"""Tests for the automated sizing and faithfulness metrics and the report."""

import json

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn

from sizemorph import config
from sizemorph.datasets import PairDataset
from sizemorph.deformation import labels_to_soft, single_axis_resize, warp_segmentation, single_axis_field
from sizemorph.errors import ArgumentError
from sizemorph.evaluation import (
    PROXY_NOTE,
    SampleRecord,
    aggregate,
    baseline_tag,
    compare_methods,
    evaluate_outputs,
    field_statistics,
    garment_histogram_distance,
    garment_mask,
    load_reports,
    render_report,
    run_baseline,
    stripe_count,
    target_size_accuracy,
)
from sizemorph.models import SizeGAN
from sizemorph.schemas import GeneratorSpec
from sizemorph.synthetic_data import BodyParams, GarmentParams, generate_pair, load_dataset


class BrightnessClassifier(nn.Module):
    """Says PLUS for bright images."""

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(20.0))

    def forward(self, image):
        return self.scale * (image.mean(dim=(1, 2, 3)) - 0.5)


def striped_garment(stripes: int, rows: int = 60, cols: int = 20):
    image = np.full((rows, cols, 3), 0.8, dtype=np.float32)
    mask = np.zeros((rows, cols), dtype=bool)
    mask[5:54] = True
    edges = np.linspace(5, 54, 2 * stripes + 2).round().astype(int)
    for k in range(1, 2 * stripes + 1, 2):
        image[edges[k]:edges[k + 1]] = 0.2
    return image, mask


@pytest.mark.parametrize("stripes", [0, 1, 3, 5])
def test_stripe_count(stripes):
    """Test counting horizontal stripes from the row profile."""
    image, mask = striped_garment(stripes)
    assert stripe_count(image, mask) == stripes


def test_stripe_count_empty_mask():
    """Test that an empty garment mask gives no count."""
    image, mask = striped_garment(2)
    assert stripe_count(image, np.zeros_like(mask)) is None


@pytest.mark.parametrize("seed", range(10))
def test_stripe_count_of_generated_top(seed):
    """Test the count on a rotated 5-stripe top at 64 px against its generation parameters."""
    garment = GarmentParams(stripe_count=5, base_color=(0.85, 0.8, 0.3), stripe_color=(0.2, 0.2, 0.08),
                            top_length=0.44)
    pair = generate_pair(garment, rng_seed=seed, resolution=config.DESK_RESOLUTION)
    for image, seg in ((pair.image_a, pair.seg_a), (pair.image_b, pair.seg_b)):
        assert stripe_count(image, seg == config.UPPER_GARMENT) == 5

    image = torch.from_numpy(pair.image_a).permute(2, 0, 1)
    soft = labels_to_soft(torch.from_numpy(pair.seg_a.astype(np.int64)))
    field = single_axis_field(config.DESK_RESOLUTION, config.DESK_RESOLUTION, 1.36)
    assert stripe_count(single_axis_resize(image, 1.36), garment_mask(warp_segmentation(soft, field))) == 5


def test_histogram_distance_of_complement_recolor():
    """Test that recoloring a solid top to its complement is near the maximum distance."""
    garment = GarmentParams(stripe_count=0, base_color=(0.85, 0.8, 0.3), stripe_color=(0.85, 0.8, 0.3),
                            top_length=0.46)
    pair = generate_pair(garment, rng_seed=2, resolution=config.DESK_RESOLUTION)
    mask = pair.seg_a == config.UPPER_GARMENT
    recolored = pair.image_a.copy()
    recolored[mask] = 1.0 - recolored[mask]
    assert garment_histogram_distance(pair.image_a, mask, recolored, mask) > 1.9
    assert garment_histogram_distance(pair.image_a, mask, pair.image_a, mask) == 0.0


def test_single_axis_keeps_stripes():
    """Test that scaling in x leaves the stripe count of a synthetic top alone."""
    garment = GarmentParams(stripe_count=3, base_color=(0.85, 0.8, 0.3), stripe_color=(0.2, 0.2, 0.08),
                            top_length=0.46)
    pair = generate_pair(garment, BodyParams(max_rotation_deg=0.0), rng_seed=3, resolution=128)
    image = torch.from_numpy(pair.image_a).permute(2, 0, 1)
    soft = labels_to_soft(torch.from_numpy(pair.seg_a.astype(np.int64)))
    field = single_axis_field(128, 128, 1.36)
    out = single_axis_resize(image, 1.36)
    out_seg = warp_segmentation(soft, field)
    before = stripe_count(image, garment_mask(soft.argmax(dim=0)))
    after = stripe_count(out, garment_mask(out_seg))
    assert before is not None and before >= 1
    assert after == before


def test_histogram_distance_bounds():
    """Test identical garments (0) and disjoint colors (2)."""
    image, mask = striped_garment(2)
    assert garment_histogram_distance(image, mask, image, mask) == 0.0
    other = np.zeros_like(image)
    assert garment_histogram_distance(image, mask, other, mask) == pytest.approx(2.0)
    assert garment_histogram_distance(image, np.zeros_like(mask), image, mask) is None


def test_garment_mask_is_strict_for_soft_maps():
    """Test that partially garment pixels are left out."""
    soft = labels_to_soft(torch.ones(4, 4, dtype=torch.long))
    soft[:, 0, 0] = 0.5 * soft[:, 0, 0] + 0.5 * labels_to_soft(torch.zeros(4, 4, dtype=torch.long))[:, 0, 0]
    mask = garment_mask(soft)
    assert not mask[0, 0]
    assert mask.sum() == 15


def test_target_size_accuracy():
    """Test the fraction of outputs on the target side."""
    classifier = BrightnessClassifier()
    images = torch.cat([torch.full((3, 3, 8, 8), 0.9), torch.full((1, 3, 8, 8), 0.1)])
    assert target_size_accuracy(images, classifier, config.PLUS) == pytest.approx(0.75)
    assert target_size_accuracy(images, classifier, config.SMALL) == pytest.approx(0.25)
    with pytest.raises(ArgumentError):
        target_size_accuracy([], classifier, config.PLUS)


def test_field_statistics():
    """Test displacement statistics of a constant field."""
    stats = field_statistics(torch.full((8, 8, 2), 0.3))
    assert stats["mean_abs_displacement"] == pytest.approx(0.3 * 2 ** 0.5)
    assert stats["smoothness_energy"] == 0.0


def test_aggregate_skips_undefined():
    """Test aggregates with undefined per-sample metrics."""
    records = [
        SampleRecord(id="a", target_size_prob=0.9, histogram_distance=0.2, stripe_count_src=3, stripe_count_out=3),
        SampleRecord(id="b", target_size_prob=0.1, stripe_count_src=2, stripe_count_out=1),
    ]
    agg = aggregate(records)
    assert agg["target_size_accuracy"] == 0.5
    assert agg["mean_histogram_distance"] == pytest.approx(0.2)
    assert agg["stripe_preservation"] == 0.5
    assert aggregate([])["target_size_accuracy"] is None


def test_evaluate_outputs_for_baseline():
    """Test a baseline report: one shared field, a sample per id."""
    images = torch.rand(3, 3, 16, 16)
    segs = labels_to_soft(torch.randint(0, config.NUM_CLASSES, (3, 16, 16)))
    out, out_segs, field = run_baseline(images, segs, 1.36)
    report = evaluate_outputs(baseline_tag(1.36), ["a", "b", "c"], images, segs, out, out_segs, field,
                              BrightnessClassifier(), config.PLUS)
    assert report.method == "single_axis_1.36"
    assert [r.id for r in report.per_sample] == ["a", "b", "c"]
    assert report.aggregates == report.recompute_aggregates()
    assert report.per_sample[0].mean_abs_displacement > 0


@pytest.fixture
def comparison(tiny_dataset):
    test_set = PairDataset(load_dataset(tiny_dataset), "test")
    model = SizeGAN(GeneratorSpec(final_resolution=16, latent_dim=8, style_dim=8, mapping_layers=2))
    return compare_methods(test_set, model, BrightnessClassifier())


def test_compare_methods(comparison):
    """Test that every method is scored on the same samples."""
    assert list(comparison.reports) == ["sizegan", "single_axis_1.2", "single_axis_1.36", "single_axis_1.5"]
    for report in comparison.reports.values():
        assert [r.id for r in report.per_sample] == comparison.ids
    # untrained generator is the identity
    sizegan = comparison.reports["sizegan"].per_sample[0]
    assert sizegan.mean_abs_displacement == 0.0
    assert sizegan.histogram_distance in (None, 0.0)


def test_render_report(comparison, tmp_path):
    """Test report.json, report.md and the image grid."""
    reports = list(comparison.reports.values())
    ablation = {"configs": {"img_disc_only": {"target_size_accuracy": 0.9}, "full": {"target_size_accuracy": 0.5}},
                "ordering_holds": False}
    paths = render_report(reports, tmp_path, comparison, grid_samples=1, ablation=ablation)

    payload = json.loads(paths["json"].read_text())
    assert payload["note"] == PROXY_NOTE
    loaded = load_reports(paths["json"])
    assert [r.method for r in loaded] == [r.method for r in reports]
    for report in loaded:
        assert report.aggregates == report.recompute_aggregates()

    text = paths["markdown"].read_text()
    assert "single_axis_1.36" in text
    assert "**Flag:**" in text

    with Image.open(tmp_path / "grids" / "00.png") as grid:
        assert grid.size == (6 * 16, 16)
    assert json.loads(paths["ablation"].read_text())["ordering_holds"] is False


def test_render_report_needs_reports(tmp_path):
    """Test rendering with nothing to report."""
    with pytest.raises(ArgumentError):
        render_report([], tmp_path)
