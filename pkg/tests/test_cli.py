"""Tests for the command-line interface."""

import json

import numpy as np
import pytest
import yaml

from sizemorph.checkpoints import save_checkpoint
from sizemorph.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from sizemorph.deformation import load_field
from sizemorph.models import build_networks
from sizemorph.synthetic_data import MANIFEST_NAME, generate_pair, load_dataset, write_image, write_labels
from sizemorph.training import _gan_state


@pytest.fixture
def untrained_checkpoint(tiny_config, tmp_path):
    """A generator checkpoint straight from initialization (identity fields)."""
    networks = build_networks(tiny_config.model, tiny_config.classifier, seed=0)
    return save_checkpoint(_gan_state(tiny_config, networks, {}, 0, {}), tmp_path / "generator.ckpt")


def test_gen_data(tmp_path):
    """Test dataset generation from flags."""
    out = tmp_path / "data"
    assert main(["gen-data", "--n", "20", "--resolution", "16", "--seed", "1", "--out", str(out)]) == EXIT_OK
    manifest = load_dataset(out)
    assert len(manifest) == 20
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["data"]["n_pairs"] == 20
    assert resolved["model"]["final_resolution"] == 16


def test_gen_data_too_few_pairs(tmp_path):
    """Test that an unsplittable dataset size is a usage error."""
    assert main(["gen-data", "--n", "2", "--out", str(tmp_path / "d")]) == EXIT_USAGE


def test_dry_run_touches_nothing(tmp_path, capsys):
    """Test that --dry-run only prints the resolved config."""
    out = tmp_path / "gan"
    assert main(["train-gan", "--steps", "5", "--out", str(out), "--dry-run"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "steps: 5" in printed
    assert "30/1000/1/1" in printed
    assert not out.exists()


def test_config_file_and_flags(tmp_path, capsys):
    """Test that flags override the config file."""
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"train": {"steps": 40, "batch_size": 3}}))
    assert main(["train-gan", "--config", str(path), "--steps", "9", "--dry-run"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "  steps: 9\n" in printed
    assert "  batch_size: 3\n" in printed


def test_usage_errors(capsys):
    """Test unknown commands and bad flag values."""
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["gen-data", "--n", "many"]) == EXIT_USAGE
    assert main(["train-gan", "--direction", "sideways"]) == EXIT_USAGE


def test_train_gan_without_dataset(tmp_path):
    """Test that a missing dataset is a configuration error."""
    assert main(["train-gan", "--out", str(tmp_path / "gan")]) == EXIT_USAGE


def test_missing_checkpoint_is_runtime_error(tiny_dataset, tmp_path):
    """Test evaluate with a checkpoint that does not exist."""
    args = ["evaluate", "--checkpoint", str(tmp_path / "nope.ckpt"), "--dataset", str(tiny_dataset),
            "--out", str(tmp_path / "eval")]
    assert main(args) == EXIT_RUNTIME


def test_baseline(tiny_dataset, tmp_path):
    """Test the single-axis baseline on a dataset split."""
    out = tmp_path / "baseline"
    assert main(["baseline", "--ratio", "1.36", "--input-dir", str(tiny_dataset), "--out", str(out)]) == EXIT_OK
    sample_id = load_dataset(tiny_dataset).ids("test")[0]
    assert (out / f"{sample_id}.png").is_file()
    assert (out / f"{sample_id}_seg.png").is_file()
    assert load_field(out / "field.dfield").height == 16
    assert (out / "field_quiver.png").is_file()


def test_baseline_auto_ratio(tiny_dataset, tmp_path, capsys):
    """Test the ratio estimated from hip keypoints."""
    args = ["baseline", "--ratio", "auto", "--dataset", str(tiny_dataset), "--input-dir", str(tiny_dataset),
            "--out", str(tmp_path / "b")]
    assert main(args) == EXIT_OK
    line = next(l for l in capsys.readouterr().out.splitlines() if "estimated hip ratio" in l)
    assert float(line.split(":")[-1]) > 1.0


def test_baseline_auto_needs_dataset(tiny_dataset, tmp_path):
    """Test --ratio auto without keypoints to estimate from."""
    args = ["baseline", "--ratio", "auto", "--input-dir", str(tiny_dataset), "--out", str(tmp_path / "b")]
    assert main(args) == EXIT_USAGE


def test_baseline_rejects_bad_ratio(tiny_dataset, tmp_path):
    """Test ratios that are neither auto nor a positive number."""
    for ratio in ("wide", "0", "-1.2"):
        args = ["baseline", "--ratio", ratio, "--input-dir", str(tiny_dataset), "--out", str(tmp_path / "b")]
        assert main(args) == EXIT_USAGE


def test_resize_folder(untrained_checkpoint, tmp_path):
    """Test resizing a folder of image + segmentation PNGs."""
    pair = generate_pair(rng_seed=0, resolution=16)
    inputs = tmp_path / "in"
    inputs.mkdir()
    write_image(pair.image_a, inputs / "look1.png")
    write_labels(pair.seg_a, inputs / "look1_seg.png")
    out = tmp_path / "out"
    args = ["resize", "--checkpoint", str(untrained_checkpoint), "--input-dir", str(inputs), "--out", str(out),
            "--stride", "4"]
    assert main(args) == EXIT_OK
    for name in ("look1.png", "look1_seg.png", "look1.dfield", "look1_quiver.png"):
        assert (out / name).is_file()
    assert np.all(load_field(out / "look1.dfield").displacements.numpy() == 0)


def test_resize_missing_segmentation(untrained_checkpoint, tmp_path):
    """Test an input image without its segmentation."""
    inputs = tmp_path / "in"
    inputs.mkdir()
    write_image(generate_pair(rng_seed=0, resolution=16).image_a, inputs / "look1.png")
    args = ["resize", "--checkpoint", str(untrained_checkpoint), "--input-dir", str(inputs),
            "--out", str(tmp_path / "out")]
    assert main(args) == EXIT_USAGE


def test_evaluate(untrained_checkpoint, tiny_dataset, tmp_path):
    """Test the evaluation report from the command line."""
    out = tmp_path / "eval"
    args = ["evaluate", "--checkpoint", str(untrained_checkpoint), "--dataset", str(tiny_dataset), "--out", str(out)]
    assert main(args) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert [r["method"] for r in report["reports"]][:2] == ["sizegan", "single_axis_1.2"]
    assert (out / "report.md").is_file()


def test_evaluate_records_checkpoint_config(untrained_checkpoint, tiny_dataset, tmp_path):
    """Test that resolved_config.yaml describes the checkpoint's 16 px model."""
    out = tmp_path / "eval"
    args = ["evaluate", "--checkpoint", str(untrained_checkpoint), "--dataset", str(tiny_dataset), "--out", str(out)]
    assert main(args) == EXIT_OK
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["model"]["final_resolution"] == 16


def test_resize_records_checkpoint_config(untrained_checkpoint, tiny_dataset, tmp_path):
    """Test that resize writes the checkpoint's config, not the defaults."""
    out = tmp_path / "resized"
    args = ["resize", "--checkpoint", str(untrained_checkpoint), "--input-dir", str(tiny_dataset),
            "--stride", "4", "--out", str(out)]
    assert main(args) == EXIT_OK
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["model"]["final_resolution"] == 16


def test_viz_field(tmp_path):
    """Test the quiver plot of a saved field."""
    from sizemorph.deformation import save_field, single_axis_field

    field = save_field(single_axis_field(32, 32, 1.36), tmp_path / "f.dfield")
    out = tmp_path / "plots" / "f.png"
    assert main(["viz-field", "--field", str(field), "--out", str(out)]) == EXIT_OK
    assert out.read_bytes()[:4] == b"\x89PNG"


def test_default_output_root(tmp_path, monkeypatch):
    """Test that SIZEMORPH_OUT sets where outputs go."""
    monkeypatch.setenv("SIZEMORPH_OUT", str(tmp_path / "elsewhere"))
    assert main(["gen-data", "--n", "20", "--resolution", "16"]) == EXIT_OK
    assert (tmp_path / "elsewhere" / "data" / MANIFEST_NAME).is_file()
