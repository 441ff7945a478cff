"""Shared fixtures: tiny datasets and configs that train in seconds on CPU."""

import tempfile
from pathlib import Path

import pytest

from sizemorph.schemas import resolve_config
from sizemorph.synthetic_data import generate_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_output_root(tmp_path, monkeypatch):
    """Keep the run registry and default outputs out of the real output root."""
    monkeypatch.setenv("SIZEMORPH_OUT", str(tmp_path / "out"))


@pytest.fixture(scope="session")
def tiny_dataset():
    """20 pairs at 16×16: 18 train, 1 val, 1 test."""
    with tempfile.TemporaryDirectory() as tmpdir:
        root = Path(tmpdir) / "data"
        generate_dataset(20, resolution=16, seed=3, root=root)
        yield root


@pytest.fixture
def tiny_config(tiny_dataset):
    """Run config for the 16px dataset with a 2-step GAN run."""
    overrides = {
        "resolution": 16,
        "data.root": str(tiny_dataset),
        "train.dataset": str(tiny_dataset),
        "train.steps": 2,
        "train.batch_size": 2,
        "train.checkpoint_every": 1,
        "train.eval_every": 1,
        "classifier.depth": 18,
        "classifier.input_resolution": 32,
        "classifier.epochs": 1,
        "classifier.batch_size": 8,
        "eval.grid_samples": 1,
    }
    return resolve_config(overrides=overrides)


@pytest.fixture(scope="session")
def desk_dataset():
    """The default 600 pairs at 64×64, for the slow training tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        root = Path(tmpdir) / "data"
        generate_dataset(600, resolution=64, seed=7, root=root)
        yield root
