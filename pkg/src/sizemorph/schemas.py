"""Run configuration schemas (pydantic) and their YAML resolution."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from . import config
from .errors import ConfigurationError

Direction = Literal["small2plus", "plus2small"]


class LossWeights(BaseModel):
    """Weights of the four generator loss terms."""
    smooth: float = Field(config.LAMBDA_SMOOTH, ge=0)
    bce: float = Field(config.LAMBDA_BCE, ge=0)
    adv_img: float = Field(config.LAMBDA_ADV_IMG, ge=0)
    adv_seg: float = Field(config.LAMBDA_ADV_SEG, ge=0)

    def __str__(self):
        return f"{self.smooth:g}/{self.bce:g}/{self.adv_img:g}/{self.adv_seg:g}"


class GeneratorSpec(BaseModel):
    """Architecture of the conditional deformation-field generator."""
    base_resolution: Literal[4] = 4
    final_resolution: int = config.DESK_RESOLUTION
    latent_dim: int = Field(128, ge=1)
    style_dim: int = Field(128, ge=1)
    mapping_layers: int = Field(8, ge=1)
    channels: dict[int, int] = Field(default_factory=dict)

    @field_validator("final_resolution")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 4 or value & (value - 1):
            raise ValueError(f"final_resolution must be a power of 2 >= 4, got {value}")
        return value

    @model_validator(mode="after")
    def _fill_channels(self) -> "GeneratorSpec":
        filled = {}
        for res in self.resolutions():
            filled[res] = self.channels.get(res) or config.CHANNEL_SCHEDULE.get(res, 16)
        self.channels = filled
        return self

    def resolutions(self) -> list[int]:
        """Field resolutions 4, 8, ..., R."""
        out = []
        res = self.base_resolution
        while res <= self.final_resolution:
            out.append(res)
            res *= 2
        return out


class ClassifierConfig(BaseModel):
    """Size classifier architecture and pretraining schedule."""
    depth: Literal[18, 34, 50] = 18
    input_resolution: int = Field(config.DESK_RESOLUTION, ge=16)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(5, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    seed: int = 0
    color_jitter: float = Field(0.2, ge=0)
    flip_labels: bool = False


class DataConfig(BaseModel):
    """Synthetic dataset generation."""
    root: Optional[str] = None
    n_pairs: int = Field(600, ge=1)
    resolution: int = Field(config.DESK_RESOLUTION, ge=8)
    seed: int = 7
    split_fractions: tuple[float, float, float] = config.DEFAULT_SPLIT_FRACTIONS


class TrainConfig(BaseModel):
    """Adversarial training of the deformation generator."""
    resolution: int = config.DESK_RESOLUTION
    batch_size: int = Field(16, ge=1)
    steps: int = Field(20000, ge=0)
    lr_generator: float = Field(2e-3, gt=0)
    lr_discriminator: float = Field(2e-3, gt=0)
    r1_weight: float = Field(1.0, ge=0)
    seed: int = config.LATENT_SEED
    direction: Direction = "small2plus"
    dataset: Optional[str] = None
    classifier_checkpoint: Optional[str] = None
    checkpoint_every: int = Field(1000, ge=1)
    eval_every: int = Field(500, ge=1)
    flip_augment: bool = True
    deterministic: bool = True

    @property
    def source_size(self) -> str:
        return config.SMALL if self.direction == "small2plus" else config.PLUS

    @property
    def target_size(self) -> str:
        return config.PLUS if self.direction == "small2plus" else config.SMALL


class EvalConfig(BaseModel):
    """Evaluation against the single-axis baselines."""
    split: Literal["train", "val", "test"] = "test"
    ratios: tuple[float, ...] = config.BASELINE_RATIOS
    latent_seed: int = config.LATENT_SEED
    stride: int = Field(config.QUIVER_STRIDE, ge=1)
    grid_samples: int = Field(6, ge=1)


class RunConfig(BaseModel):
    """Everything needed to reproduce a run."""
    data: DataConfig = Field(default_factory=DataConfig)
    model: GeneratorSpec = Field(default_factory=GeneratorSpec)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _resolutions_agree(self) -> "RunConfig":
        if self.train.resolution != self.model.final_resolution:
            raise ValueError(
                f"train.resolution ({self.train.resolution}) must equal "
                f"model.final_resolution ({self.model.final_resolution})"
            )
        return self

    @classmethod
    def full_scale(cls) -> "RunConfig":
        """512 px fields with a ResNet50 classifier at 224 px."""
        return cls(
            data=DataConfig(resolution=config.FULL_RESOLUTION),
            model=GeneratorSpec(final_resolution=config.FULL_RESOLUTION),
            classifier=ClassifierConfig(depth=50, input_resolution=config.FULL_CLASSIFIER_RESOLUTION),
            train=TrainConfig(resolution=config.FULL_RESOLUTION),
        )

    def config_hash(self) -> str:
        return _hash(self.model_dump(mode="json"))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def architecture_hash(spec: GeneratorSpec, classifier: ClassifierConfig) -> str:
    """Hash of everything that changes parameter shapes."""
    return _hash({
        "generator": spec.model_dump(mode="json"),
        "classifier": {"depth": classifier.depth, "input_resolution": classifier.input_resolution},
    })


def classifier_hash(classifier: ClassifierConfig) -> str:
    return _hash({"classifier": {"depth": classifier.depth, "input_resolution": classifier.input_resolution}})


def _hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _set_dotted(tree: dict, dotted: str, value: Any):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"Cannot override {dotted}: {key} is not a section")
    node[keys[-1]] = value


def _merge(base: dict, update: dict) -> dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def resolve_config(
    config_file: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
    base: Optional[RunConfig] = None,
) -> RunConfig:
    """Resolve a RunConfig with precedence flag > file > default.

    Args:
        config_file: Optional YAML file with (possibly partial) nested sections
        overrides: Dotted keys from command-line flags; None values are ignored
        base: Defaults to start from (RunConfig() when omitted)

    Returns:
        The validated RunConfig
    """
    tree = (base or RunConfig()).model_dump(mode="json")

    if config_file is not None:
        try:
            loaded = yaml.safe_load(Path(config_file).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Cannot read config file {config_file}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"Config file {config_file} must hold a mapping")
        _merge(tree, loaded)

    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(tree, dotted, value)

    # A resolution flag moves every resolution-bearing section together
    resolution = (overrides or {}).get("resolution")
    if resolution is not None:
        tree["data"]["resolution"] = resolution
        tree["model"]["final_resolution"] = resolution
        tree["train"]["resolution"] = resolution
        tree.pop("resolution", None)
        tree["model"]["channels"] = {}

    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e
