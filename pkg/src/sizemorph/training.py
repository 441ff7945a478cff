"""Size classifier pretraining and adversarial training of the field generator."""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader
from tqdm import tqdm

from . import config
from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .database import Database
from .datasets import PairDataset, SizeImageDataset, classifier_transform
from .deformation import smoothness_loss
from .errors import CheckpointError, ConfigurationError, NonFiniteLossError
from .evaluation import field_statistics, run_sizegan, target_size_accuracy
from .models import (
    Networks,
    ResizeOutput,
    SizeClassifier,
    SizeGAN,
    build_networks,
    classify_size,
    discriminate_image,
    discriminate_seg_pair,
    freeze,
    parameter_hash,
)
from .schemas import LossWeights, RunConfig, architecture_hash, classifier_hash
from .synthetic_data import load_dataset


def get_device() -> torch.device:
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def _require_finite(total: torch.Tensor, message: str, breakdown: dict[str, float]):
    if not torch.isfinite(total):
        raise NonFiniteLossError(message, breakdown)


# --- classifier pretraining ---

class ClassifierResult(NamedTuple):
    checkpoint: Path
    best_val_accuracy: float
    history: list[dict]


def classifier_accuracy(classifier: SizeClassifier, dataset: SizeImageDataset, batch_size: int = 128) -> float:
    """Accuracy of ``classifier`` on the true labels of ``dataset``."""
    device = next(classifier.parameters()).device
    classifier.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start:start + batch_size].to(device)
            labels = dataset.labels[start:start + batch_size].to(device)
            correct += int(((classifier(images) > 0).float() == labels).sum())
    return correct / len(dataset)


def pretrain_classifier(run_config: RunConfig, dataset_root: Path, out_dir: Path,
                        progress: bool = True) -> ClassifierResult:
    """Train the size classifier and keep the best-validation checkpoint.

    Training images get horizontal flips and color jitter. With
    ``classifier.flip_labels`` the training labels are inverted while validation
    keeps the true labels.
    """
    cfg = run_config.classifier
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_dataset(dataset_root)

    train_set = SizeImageDataset(manifest, "train", classifier_transform(cfg.color_jitter, train=True),
                                 flip_labels=cfg.flip_labels)
    if len(train_set.classes()) < 2:
        raise ConfigurationError(f"training split of {dataset_root} holds a single size class")
    val_set = SizeImageDataset(manifest, "val")

    device = get_device()
    torch.manual_seed(cfg.seed)
    classifier = SizeClassifier(cfg).to(device)
    optimizer = torch.optim.Adam(classifier.parameters(), lr=cfg.learning_rate)
    loader = DataLoader(train_set, batch_size=cfg.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(cfg.seed))

    checkpoint_path = out_dir / "classifier.ckpt"
    metrics_path = out_dir / "metrics.jsonl"
    best, history = -1.0, []
    with open(metrics_path, "w") as log:
        for epoch in range(1, cfg.epochs + 1):
            classifier.train()
            total, seen = 0.0, 0
            for images, labels in tqdm(loader, desc=f"classifier epoch {epoch}/{cfg.epochs}", disable=not progress,
                                       leave=False):
                images, labels = images.to(device), labels.to(device)
                loss = F.binary_cross_entropy_with_logits(classifier(images), labels)
                _require_finite(loss, "classifier loss is not finite", {"bce": float(loss)})
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss) * len(labels)
                seen += len(labels)

            accuracy = classifier_accuracy(classifier, val_set)
            record = {"epoch": epoch, "train_loss": total / seen, "val_accuracy": accuracy}
            history.append(record)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            print(f"Epoch {epoch}: loss {record['train_loss']:.4f}, val accuracy {accuracy:.3f}")

            if accuracy > best:
                best = accuracy
                state = Checkpoint(kind="classifier", config=run_config.model_dump(mode="json"),
                                   architecture=classifier_hash(cfg), step=epoch,
                                   metrics={"val_accuracy": accuracy})
                state.add_module("classifier", classifier)
                save_checkpoint(state, checkpoint_path)

    print(f"Best validation accuracy {best:.3f}; saved {checkpoint_path}")
    return ClassifierResult(checkpoint_path, best, history)


def load_classifier(path: Path, classifier_config, device=None) -> SizeClassifier:
    """Load a pretrained classifier, frozen and in eval mode."""
    state = load_checkpoint(path, expected_architecture=classifier_hash(classifier_config))
    classifier = SizeClassifier(classifier_config)
    state.load_module("classifier", classifier)
    if device is not None:
        classifier.to(device)
    return freeze(classifier)


# --- GAN losses and steps ---

def _flip(x: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if mask is None:
        return x
    return torch.where(mask.view(-1, 1, 1, 1), x.flip(-1), x)


def _set_requires_grad(module: nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def loss_terms(
    batch: dict,
    networks: Networks,
    output: ResizeOutput,
    target_size: str,
    flips: Optional[torch.Tensor] = None,
) -> dict[str, torch.Tensor]:
    """Unweighted generator loss terms for an already-generated output."""
    _, d_image, d_seg, classifier = networks
    fake_image = _flip(output.image, flips)
    adv_img = F.softplus(-discriminate_image(d_image, fake_image)).mean()
    seg_logit = discriminate_seg_pair(d_seg, _flip(batch["cond_seg"], flips), _flip(output.seg, flips))
    adv_seg = F.softplus(-seg_logit).mean()
    logits = classify_size(classifier, output.image)
    target = torch.full_like(logits, config.SIZE_TO_TARGET[target_size])
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return {"adv_img": adv_img, "adv_seg": adv_seg, "bce": bce, "smooth": smoothness_loss(output.field)}


def weighted_total(terms: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return (weights.adv_img * terms["adv_img"] + weights.adv_seg * terms["adv_seg"]
            + weights.bce * terms["bce"] + weights.smooth * terms["smooth"])


class GeneratorLoss(NamedTuple):
    total: torch.Tensor
    terms: dict[str, torch.Tensor]
    output: ResizeOutput

    def breakdown(self) -> dict[str, float]:
        return {"total": float(self.total), **{k: float(v) for k, v in self.terms.items()}}


def generator_loss(
    batch: dict,
    networks: Networks,
    weights: LossWeights,
    z: torch.Tensor,
    target_size: str = config.PLUS,
    flips: Optional[torch.Tensor] = None,
) -> GeneratorLoss:
    """λ_adv_img·L_img + λ_adv_seg·L_seg + λ_bce·L_bce + λ_smooth·L_smooth.

    Args:
        batch: cond_image, cond_seg (source size) and the real targets
        networks: generator, both discriminators, frozen classifier
        weights: Loss weights
        z: Latent vectors, one per sample
        target_size: Size the classifier should report for the output
        flips: Per-sample horizontal flips applied to discriminator inputs

    Returns:
        GeneratorLoss(total, terms, output)
    """
    output = networks.sizegan.resize(batch["cond_image"], batch["cond_seg"], z)
    terms = loss_terms(batch, networks, output, target_size, flips)
    return GeneratorLoss(weighted_total(terms, weights), terms, output)


def r1_penalty(logits: torch.Tensor, inputs: list[torch.Tensor], weight: float) -> torch.Tensor:
    """weight/2 · E‖∇D(real)‖²."""
    if weight == 0:
        return logits.new_zeros(())
    grads = torch.autograd.grad(outputs=logits.sum(), inputs=inputs, create_graph=True)
    squared = sum(g.pow(2).reshape(g.shape[0], -1).sum(dim=1) for g in grads)
    return weight / 2 * squared.mean()


def discriminator_step(
    batch: dict,
    networks: Networks,
    optimizers: dict[str, torch.optim.Optimizer],
    weights: LossWeights,
    r1_weight: float,
    z: torch.Tensor,
    flips: Optional[dict[str, torch.Tensor]] = None,
) -> dict[str, float]:
    """One logistic + R1 update of both discriminators. The generator and classifier are not touched.

    The segmentation discriminator is skipped while its loss weight is 0.
    """
    sizegan, d_image, d_seg, _ = networks
    flips = flips or {}
    with torch.no_grad():
        fake = sizegan.resize(batch["cond_image"], batch["cond_seg"], z)

    _set_requires_grad(d_image, True)
    real_image = _flip(batch["target_image"], flips.get("real")).detach().requires_grad_(r1_weight > 0)
    real_logit = d_image(real_image)
    fake_logit = d_image(_flip(fake.image, flips.get("fake")))
    loss_img = F.softplus(fake_logit).mean() + F.softplus(-real_logit).mean()
    r1_img = r1_penalty(real_logit, [real_image], r1_weight)
    total = loss_img + r1_img
    losses = {
        "d_img": float(loss_img), "r1_img": float(r1_img),
        "real_logit": float(real_logit.mean()), "fake_logit": float(fake_logit.mean()),
        "d_seg": 0.0, "r1_seg": 0.0,
    }

    seg_active = weights.adv_seg > 0
    if seg_active:
        _set_requires_grad(d_seg, True)
        real_a = _flip(batch["cond_seg"], flips.get("real")).detach().requires_grad_(r1_weight > 0)
        real_b = _flip(batch["target_seg"], flips.get("real")).detach().requires_grad_(r1_weight > 0)
        real_seg_logit = d_seg(real_a, real_b)
        fake_seg_logit = d_seg(_flip(batch["cond_seg"], flips.get("fake")), _flip(fake.seg, flips.get("fake")))
        loss_seg = F.softplus(fake_seg_logit).mean() + F.softplus(-real_seg_logit).mean()
        r1_seg = r1_penalty(real_seg_logit, [real_a, real_b], r1_weight)
        total = total + loss_seg + r1_seg
        losses.update({"d_seg": float(loss_seg), "r1_seg": float(r1_seg)})

    _require_finite(total, "discriminator loss is not finite", losses)
    optimizers["d_image"].zero_grad()
    optimizers["d_seg"].zero_grad()
    total.backward()
    optimizers["d_image"].step()
    if seg_active:
        optimizers["d_seg"].step()
    return losses


def generator_step(
    batch: dict,
    networks: Networks,
    optimizer: torch.optim.Optimizer,
    weights: LossWeights,
    z: torch.Tensor,
    target_size: str,
    flips: Optional[torch.Tensor] = None,
) -> dict[str, float]:
    """One generator update; discriminators and classifier receive no gradients."""
    _set_requires_grad(networks.d_image, False)
    _set_requires_grad(networks.d_seg, False)
    try:
        loss = generator_loss(batch, networks, weights, z, target_size, flips)
        breakdown = loss.breakdown()
        _require_finite(loss.total, "generator loss is not finite", breakdown)
        optimizer.zero_grad()
        loss.total.backward()
        optimizer.step()
    finally:
        _set_requires_grad(networks.d_image, True)
        _set_requires_grad(networks.d_seg, True)
    return breakdown


# --- training loop ---

class StepDraws(NamedTuple):
    indices: torch.Tensor
    z_d: torch.Tensor
    z_g: torch.Tensor
    flips: dict[str, Optional[torch.Tensor]]


def draw_step(seed: int, step: int, n_items: int, batch_size: int, latent_dim: int, flip_augment: bool) -> StepDraws:
    """All randomness of one step, derived from (seed, step) alone."""
    step_seed = int(np.random.SeedSequence([seed, step]).generate_state(1)[0])
    generator = torch.Generator().manual_seed(step_seed)
    indices = torch.randint(n_items, (batch_size,), generator=generator)
    z_d = torch.randn(batch_size, latent_dim, generator=generator)
    z_g = torch.randn(batch_size, latent_dim, generator=generator)
    flips: dict[str, Optional[torch.Tensor]] = {"real": None, "fake": None, "gen": None}
    if flip_augment:
        for key in flips:
            flips[key] = torch.rand(batch_size, generator=generator) < 0.5
    return StepDraws(indices, z_d, z_g, flips)


def validate(networks: Networks, val_set: PairDataset, latent_seed: int = config.LATENT_SEED) -> dict[str, float]:
    """Target-size accuracy and field statistics on a held-out split."""
    images, _, fields = run_sizegan(networks.sizegan, val_set.cond_images, val_set.cond_segs, latent_seed)
    networks.sizegan.train()
    stats = field_statistics(fields)
    return {
        "val_target_accuracy": target_size_accuracy(images, networks.classifier, val_set.target_size),
        **{f"field_{k}": v for k, v in stats.items()},
    }


class GanResult(NamedTuple):
    checkpoint: Path
    metrics: Path
    final: dict
    classifier_unchanged: bool


def _gan_state(run_config: RunConfig, networks: Networks, optimizers: dict, step: int, metrics: dict) -> Checkpoint:
    state = Checkpoint(kind="gan", config=run_config.model_dump(mode="json"),
                       architecture=architecture_hash(run_config.model, run_config.classifier),
                       step=step, rng_state=torch.get_rng_state(), metrics=metrics)
    state.add_module("sizegan", networks.sizegan)
    state.add_module("d_image", networks.d_image)
    state.add_module("d_seg", networks.d_seg)
    state.add_module("classifier", networks.classifier)
    for name, optimizer in optimizers.items():
        state.add_optimizer(name, optimizer)
    return state


def _latest_checkpoint(database: Optional[Database], run_id: Optional[int], ckpt_dir: Path) -> Optional[Path]:
    if database is not None and run_id is not None:
        found = database.latest_checkpoint(run_id)
        if found:
            return found[1]
    candidates = sorted(ckpt_dir.glob("step_*.ckpt"))
    return candidates[-1] if candidates else None


def _truncate_metrics(path: Path, last_step: int):
    if not path.exists():
        return
    kept = [line for line in path.read_text().splitlines() if line and json.loads(line)["step"] <= last_step]
    path.write_text("".join(line + "\n" for line in kept))


def train_gan(
    run_config: RunConfig,
    out_dir: Path,
    resume: bool = False,
    database: Optional[Database] = None,
    progress: bool = True,
) -> GanResult:
    """Train the deformation generator against both discriminators and the frozen classifier.

    Writes metrics.jsonl (one record per step, validation every ``eval_every``
    steps), periodic checkpoints under checkpoints/ and generator.ckpt at the end.
    """
    cfg = run_config.train
    out_dir = Path(out_dir)
    dataset_root = cfg.dataset or run_config.data.root
    if not dataset_root:
        raise ConfigurationError("train.dataset is not set")
    if not cfg.classifier_checkpoint or not Path(cfg.classifier_checkpoint).is_file():
        raise ConfigurationError(f"pretrained classifier not found: {cfg.classifier_checkpoint}")

    manifest = load_dataset(dataset_root)
    if manifest.resolution != cfg.resolution:
        raise ConfigurationError(f"dataset is {manifest.resolution}×{manifest.resolution}, "
                                 f"training expects {cfg.resolution}")
    train_set = PairDataset(manifest, "train", cfg.direction)
    val_set = PairDataset(manifest, "val", cfg.direction)

    if cfg.deterministic:
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
    device = get_device()
    networks = build_networks(run_config.model, run_config.classifier, seed=cfg.seed, device=device)
    try:
        state = load_checkpoint(cfg.classifier_checkpoint, expected_architecture=classifier_hash(run_config.classifier))
    except CheckpointError as e:
        raise ConfigurationError(f"cannot use classifier checkpoint: {e}") from e
    state.load_module("classifier", networks.classifier)
    freeze(networks.classifier)
    classifier_digest = parameter_hash(networks.classifier)

    optimizers = {
        "generator": torch.optim.Adam(networks.sizegan.parameters(), lr=cfg.lr_generator, betas=(0.0, 0.99)),
        "d_image": torch.optim.Adam(networks.d_image.parameters(), lr=cfg.lr_discriminator, betas=(0.0, 0.99)),
        "d_seg": torch.optim.Adam(networks.d_seg.parameters(), lr=cfg.lr_discriminator, betas=(0.0, 0.99)),
    }

    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    run_id = database.start_run(str(out_dir.resolve()), "gan", run_config.config_hash(), out_dir) if database else None

    start_step = 0
    if resume:
        latest = _latest_checkpoint(database, run_id, ckpt_dir)
        if latest is None:
            print(f"Warning: nothing to resume in {ckpt_dir}; starting from step 0")
        else:
            state = load_checkpoint(latest, expected_architecture=architecture_hash(run_config.model,
                                                                                    run_config.classifier))
            for name in ("sizegan", "d_image", "d_seg"):
                state.load_module(name, getattr(networks, name))
            for name, optimizer in optimizers.items():
                state.load_optimizer(name, optimizer)
            if state.rng_state is not None:
                torch.set_rng_state(state.rng_state)
            start_step = state.step
            print(f"Resuming from {latest} at step {start_step}")
    if start_step:
        _truncate_metrics(metrics_path, start_step)
    elif metrics_path.exists():
        metrics_path.unlink()

    print(f"Training {cfg.direction} at {cfg.resolution}×{cfg.resolution}, weights {run_config.weights}, "
          f"{cfg.steps} steps on {device}")
    record: dict = {}
    try:
        with open(metrics_path, "a") as log:
            steps = tqdm(range(start_step + 1, cfg.steps + 1), desc="train-gan", disable=not progress,
                         initial=start_step, total=cfg.steps)
            for step in steps:
                draws = draw_step(cfg.seed, step, len(train_set), cfg.batch_size, run_config.model.latent_dim,
                                  cfg.flip_augment)
                batch = train_set.batch(draws.indices, device)
                d_losses = discriminator_step(batch, networks, optimizers, run_config.weights, cfg.r1_weight,
                                              draws.z_d.to(device), {k: _on(v, device) for k, v in draws.flips.items()})
                g_losses = generator_step(batch, networks, optimizers["generator"], run_config.weights,
                                          draws.z_g.to(device), train_set.target_size, _on(draws.flips["gen"], device))
                record = {"step": step, **{f"g_{k}": v for k, v in g_losses.items()}, **d_losses}
                if step % cfg.eval_every == 0 or step == cfg.steps:
                    record.update(validate(networks, val_set, run_config.eval.latent_seed))
                log.write(json.dumps(record, sort_keys=True) + "\n")
                log.flush()
                steps.set_postfix(g=f"{g_losses['total']:.3f}", d=f"{d_losses['d_img']:.3f}")

                if step % cfg.checkpoint_every == 0 and step != cfg.steps:
                    path = save_checkpoint(_gan_state(run_config, networks, optimizers, step, record),
                                           ckpt_dir / f"step_{step:07d}.ckpt")
                    if database:
                        database.add_checkpoint(run_id, step, path)
    except KeyboardInterrupt:
        if database:
            database.finish_run(run_id, status="interrupted")
        raise
    except Exception:
        if database:
            database.finish_run(run_id, status="failed")
        raise

    if not record:
        record = {"step": cfg.steps, **validate(networks, val_set, run_config.eval.latent_seed)}
    final_path = save_checkpoint(_gan_state(run_config, networks, optimizers, cfg.steps, record),
                                 ckpt_dir / f"step_{cfg.steps:07d}.ckpt")
    generator_path = save_checkpoint(_gan_state(run_config, networks, optimizers, cfg.steps, record),
                                     out_dir / "generator.ckpt")
    unchanged = parameter_hash(networks.classifier) == classifier_digest
    if not unchanged:
        print("Warning: classifier parameters changed during GAN training")
    if database:
        database.add_checkpoint(run_id, cfg.steps, final_path)
        database.finish_run(run_id, summary={**record, "classifier_unchanged": unchanged})
    print(f"Saved {generator_path}")
    return GanResult(generator_path, metrics_path, record, unchanged)


def _on(tensor: Optional[torch.Tensor], device) -> Optional[torch.Tensor]:
    return tensor.to(device) if tensor is not None else None


class TrainedModel(NamedTuple):
    sizegan: SizeGAN
    classifier: SizeClassifier
    run_config: RunConfig
    step: int


def load_trained(path: Path, expected: Optional[RunConfig] = None, device=None) -> TrainedModel:
    """Restore a trained generator and its classifier from a GAN checkpoint.

    Raises:
        CheckpointError: not a GAN checkpoint, or built for a different architecture than ``expected``
    """
    expected_arch = architecture_hash(expected.model, expected.classifier) if expected else None
    state = load_checkpoint(path, expected_architecture=expected_arch)
    if state.kind != "gan":
        raise CheckpointError(f"{path} is a {state.kind} checkpoint, not a generator")
    run_config = RunConfig.model_validate(state.config)
    sizegan = SizeGAN(run_config.model)
    state.load_module("sizegan", sizegan)
    classifier = SizeClassifier(run_config.classifier)
    state.load_module("classifier", classifier)
    if device is not None:
        sizegan.to(device)
        classifier.to(device)
    sizegan.eval()
    return TrainedModel(sizegan, freeze(classifier), run_config, state.step)


# --- ablations ---

ABLATIONS = {
    "img_disc_only": {"adv_seg": 0.0, "bce": 0.0},
    "img_seg_disc": {"bce": 0.0},
    "full": {},
}


def _variant(run_config: RunConfig, weight_updates: dict, seed: Optional[int] = None) -> RunConfig:
    tree = run_config.model_dump(mode="json")
    tree["weights"].update(weight_updates)
    if seed is not None:
        tree["train"]["seed"] = seed
    return RunConfig.model_validate(tree)


def ablation_suite(
    run_config: RunConfig,
    out_dir: Path,
    seeds: Optional[list[int]] = None,
    database: Optional[Database] = None,
    progress: bool = True,
) -> dict:
    """Train {image disc only, + seg disc, + seg disc + classifier} and compare them.

    Returns the ablation summary also written to ``out_dir/ablation.json``.
    """
    out_dir = Path(out_dir)
    seeds = seeds or [run_config.train.seed]
    manifest = load_dataset(run_config.train.dataset or run_config.data.root)
    eval_set = PairDataset(manifest, run_config.eval.split, run_config.train.direction)

    summary: dict = {"seeds": seeds, "split": run_config.eval.split, "configs": {}}
    for name, updates in ABLATIONS.items():
        runs = []
        for seed in seeds:
            variant = _variant(run_config, updates, seed)
            result = train_gan(variant, out_dir / f"{name}_seed{seed}", database=database, progress=progress)
            trained = load_trained(result.checkpoint, device=get_device())
            images, _, fields = run_sizegan(trained.sizegan, eval_set.cond_images, eval_set.cond_segs,
                                            run_config.eval.latent_seed)
            runs.append({
                "seed": seed,
                "config_hash": variant.config_hash(),
                "weights": str(variant.weights),
                "target_size_accuracy": target_size_accuracy(images, trained.classifier, eval_set.target_size),
                "smoothness_energy": field_statistics(fields)["smoothness_energy"],
            })
        summary["configs"][name] = {
            "runs": runs,
            "target_size_accuracy": float(np.mean([r["target_size_accuracy"] for r in runs])),
            "smoothness_energy": float(np.mean([r["smoothness_energy"] for r in runs])),
        }
        print(f"{name}: target-size accuracy {summary['configs'][name]['target_size_accuracy']:.3f}")

    configs = summary["configs"]
    summary["ordering_holds"] = configs["full"]["target_size_accuracy"] >= configs["img_disc_only"]["target_size_accuracy"]
    if not summary["ordering_holds"]:
        print("Warning: full model is below the image-discriminator-only configuration")
    (out_dir / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def smoothness_control(run_config: RunConfig, out_dir: Path, database: Optional[Database] = None,
                       progress: bool = True) -> GanResult:
    """Same run with λ_smooth = 0, the reference for the smoothness comparison."""
    return train_gan(_variant(run_config, {"smooth": 0.0}), out_dir, database=database, progress=progress)
