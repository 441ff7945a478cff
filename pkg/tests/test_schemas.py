"""Tests for run configuration and its resolution order."""

import pytest
import yaml

from sizemorph import config
from sizemorph.errors import ConfigurationError
from sizemorph.schemas import (
    ClassifierConfig,
    GeneratorSpec,
    LossWeights,
    RunConfig,
    architecture_hash,
    classifier_hash,
    resolve_config,
)


def test_default_weights():
    """Test the default loss weights and their printed form."""
    weights = LossWeights()
    assert (weights.smooth, weights.bce, weights.adv_img, weights.adv_seg) == (30.0, 1000.0, 1.0, 1.0)
    assert str(weights) == "30/1000/1/1"


def test_negative_weight_rejected():
    """Test that loss weights must be non-negative."""
    with pytest.raises(ValueError):
        LossWeights(smooth=-1)


def test_channels_filled_from_schedule():
    """Test the per-resolution channel widths."""
    spec = GeneratorSpec(final_resolution=16)
    assert spec.channels == {4: 256, 8: 256, 16: 128}


def test_full_scale_preset():
    """Test the 512 px / ResNet50 preset."""
    run = RunConfig.full_scale()
    assert run.model.final_resolution == 512
    assert run.train.resolution == 512
    assert run.classifier.depth == 50
    assert run.classifier.input_resolution == config.FULL_CLASSIFIER_RESOLUTION


def test_resolutions_must_agree():
    """Test a train resolution different from the generator output."""
    with pytest.raises(ValueError):
        RunConfig.model_validate({"train": {"resolution": 32}})


def test_flag_beats_file_beats_default(tmp_path):
    """Test resolution precedence."""
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"train": {"steps": 50, "batch_size": 4}, "weights": {"smooth": 10}}))
    run = resolve_config(path, {"train.steps": 7, "train.seed": None})
    assert run.train.steps == 7
    assert run.train.batch_size == 4
    assert run.train.seed == config.LATENT_SEED
    assert run.weights.smooth == 10


def test_resolution_override_moves_every_section():
    """Test the resolution flag."""
    run = resolve_config(overrides={"resolution": 32})
    assert run.data.resolution == run.model.final_resolution == run.train.resolution == 32
    assert run.model.resolutions() == [4, 8, 16, 32]


def test_bad_config_file(tmp_path):
    """Test unreadable or invalid config files."""
    with pytest.raises(ConfigurationError):
        resolve_config(tmp_path / "missing.yaml")
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        resolve_config(path)
    path.write_text(yaml.safe_dump({"train": {"direction": "sideways"}}))
    with pytest.raises(ConfigurationError):
        resolve_config(path)


def test_yaml_round_trip(tmp_path):
    """Test that a dumped config resolves to itself."""
    run = resolve_config(overrides={"resolution": 16, "train.direction": "plus2small"})
    path = tmp_path / "resolved_config.yaml"
    path.write_text(run.to_yaml())
    again = resolve_config(path)
    assert again == run
    assert again.config_hash() == run.config_hash()
    assert again.train.target_size == config.SMALL


def test_architecture_hash_ignores_schedule():
    """Test that training settings do not change the architecture hash."""
    a = RunConfig()
    b = resolve_config(overrides={"train.steps": 5, "weights.bce": 0})
    assert architecture_hash(a.model, a.classifier) == architecture_hash(b.model, b.classifier)
    assert a.config_hash() != b.config_hash()
    c = resolve_config(overrides={"resolution": 32})
    assert architecture_hash(a.model, a.classifier) != architecture_hash(c.model, c.classifier)


def test_classifier_hash():
    """Test that only classifier shape settings matter."""
    assert classifier_hash(ClassifierConfig(epochs=1)) == classifier_hash(ClassifierConfig(epochs=9))
    assert classifier_hash(ClassifierConfig(depth=18)) != classifier_hash(ClassifierConfig(depth=34))
