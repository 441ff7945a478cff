#!/usr/bin/env python3
"""Command-line interface for sizemorph.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

import torch

from . import config
from .database import get_database
from .datasets import image_to_tensor, seg_to_tensor, tensor_to_image
from .deformation import (
    estimate_hip_ratio,
    load_field,
    save_field,
    single_axis_field,
    soft_to_labels,
    visualize_field,
    warp_image,
    warp_segmentation,
)
from .errors import ArgumentError, ConfigurationError, ShapeError, SizeMorphError
from .schemas import RunConfig, resolve_config
from .synthetic_data import (
    MANIFEST_NAME,
    generate_dataset,
    hip_distances,
    ingest_pairs,
    load_dataset,
    read_image,
    read_labels,
    write_image,
    write_labels,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="YAML run config (flags override it)")
    parser.add_argument("--dry-run", action="store_true", help="Print the resolved config and exit")
    parser.add_argument("--full-scale", action="store_true", help="Start from the 512px / ResNet50 preset")


def _ratio(value: str):
    if value == "auto":
        return value
    try:
        ratio = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {value!r}") from None
    if not ratio > 0:
        raise argparse.ArgumentTypeError(f"ratio must be positive, got {value}")
    return ratio


def _resolve(args, overrides: dict) -> RunConfig:
    base = RunConfig.full_scale() if args.full_scale else None
    return resolve_config(args.config, overrides, base)


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else config.output_root() / default


def _start(args, command: str, run_config: RunConfig, out_dir: Path, **paths) -> bool:
    """Print the run header; write resolved_config.yaml unless this is a dry run."""
    print(f"sizemorph {command}")
    print(f"  output: {out_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    if args.dry_run:
        print(run_config.to_yaml(), end="")
        return False
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(run_config.to_yaml())
    return True


def cmd_gen_data(args) -> int:
    from_flags = {"data.n_pairs": args.n, "data.seed": args.seed, "resolution": args.resolution}
    run_config = _resolve(args, from_flags)
    out_dir = _out(args, "data")
    if not _start(args, "gen-data", run_config, out_dir):
        return EXIT_OK
    cfg = run_config.data
    generate_dataset(cfg.n_pairs, cfg.split_fractions, cfg.resolution, cfg.seed, out_dir)
    return EXIT_OK


def cmd_ingest(args) -> int:
    run_config = _resolve(args, {})
    dataset = Path(args.dataset)
    if not _start(args, "ingest", run_config, dataset, source=args.source):
        return EXIT_OK
    ingest_pairs(Path(args.source), dataset, split=args.split)
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    overrides = {
        "data.root": args.dataset,
        "classifier.seed": args.seed,
        "classifier.epochs": args.epochs,
        "classifier.depth": args.depth,
        "classifier.flip_labels": True if args.flip_labels else None,
    }
    run_config = _resolve(args, overrides)
    out_dir = _out(args, "classifier")
    if not run_config.data.root:
        raise ConfigurationError("no dataset given (--dataset or data.root)")
    if not _start(args, "train-classifier", run_config, out_dir, dataset=run_config.data.root):
        return EXIT_OK
    from .training import pretrain_classifier

    pretrain_classifier(run_config, Path(run_config.data.root), out_dir)
    return EXIT_OK


def _gan_overrides(args) -> dict:
    return {
        "train.dataset": args.dataset,
        "train.classifier_checkpoint": args.classifier,
        "train.direction": args.direction,
        "train.steps": args.steps,
        "train.batch_size": args.batch_size,
        "train.seed": args.seed,
        "resolution": args.resolution,
    }


def cmd_train_gan(args) -> int:
    run_config = _resolve(args, _gan_overrides(args))
    out_dir = _out(args, f"gan_{run_config.train.direction}")
    proceed = _start(args, "train-gan", run_config, out_dir, dataset=run_config.train.dataset,
                     classifier=run_config.train.classifier_checkpoint)
    print(f"  loss weights (smooth/bce/adv_img/adv_seg): {run_config.weights}")
    if not proceed:
        return EXIT_OK
    from .training import train_gan

    train_gan(run_config, out_dir, resume=args.resume, database=get_database())
    return EXIT_OK


def cmd_ablate(args) -> int:
    run_config = _resolve(args, _gan_overrides(args))
    out_dir = _out(args, "ablation")
    if not _start(args, "ablate", run_config, out_dir, dataset=run_config.train.dataset):
        return EXIT_OK
    from .pipeline import evaluate_run
    from .training import ablation_suite, smoothness_control

    database = get_database()
    summary = ablation_suite(run_config, out_dir, seeds=args.seeds, database=database)
    if args.smoothness_control:
        smoothness_control(run_config, out_dir / "no_smooth", database=database)
    seed = (args.seeds or [run_config.train.seed])[0]
    evaluate_run(run_config, out_dir / f"full_seed{seed}" / "generator.ckpt", out_dir, ablation=summary)
    return EXIT_OK


def _read_inputs(input_dir: Path, split: str, direction: str) -> list[tuple[str, torch.Tensor, torch.Tensor]]:
    """(name, image, soft seg) for a dataset split or a folder of NAME.png + NAME_seg.png."""
    if (input_dir / MANIFEST_NAME).is_file():
        manifest = load_dataset(input_dir)
        size = config.SMALL if direction == "small2plus" else config.PLUS
        items = []
        for sample in manifest.samples(split):
            image, seg, _ = sample.side(size)
            items.append((sample.sample_id, image_to_tensor(image), seg_to_tensor(seg)))
        return items
    items = []
    for image_path in sorted(input_dir.glob("*.png")):
        if image_path.stem.endswith("_seg"):
            continue
        seg_path = image_path.with_name(f"{image_path.stem}_seg.png")
        if not seg_path.is_file():
            raise ConfigurationError(f"{image_path} has no segmentation {seg_path.name}")
        items.append((image_path.stem, image_to_tensor(read_image(image_path)), seg_to_tensor(read_labels(seg_path))))
    if not items:
        raise ConfigurationError(f"no input images in {input_dir}")
    return items


def _write_outputs(out_dir: Path, name: str, image: torch.Tensor, seg: torch.Tensor, field: torch.Tensor,
                   stride: int, with_field: bool = True):
    write_image(tensor_to_image(image), out_dir / f"{name}.png")
    write_labels(soft_to_labels(seg).cpu().numpy().astype("uint8"), out_dir / f"{name}_seg.png")
    if with_field:
        save_field(field.unsqueeze(0), out_dir / f"{name}.dfield")
        visualize_field(field.unsqueeze(0), stride, out_dir / f"{name}_quiver.png", image)


def cmd_resize(args) -> int:
    from .training import get_device, load_trained

    expected = _resolve(args, {}) if args.config else None
    out_dir = _out(args, "resized")
    device = get_device()
    trained = load_trained(Path(args.checkpoint), expected=expected, device=device)
    if not _start(args, "resize", trained.run_config, out_dir, checkpoint=args.checkpoint, input=args.input_dir):
        return EXIT_OK
    items = _read_inputs(Path(args.input_dir), args.split, trained.run_config.train.direction)
    z_all = trained.sizegan.sample_latent(len(items), args.seed)
    with torch.no_grad():
        for i, (name, image, seg) in enumerate(items):
            if image.shape[-1] != trained.sizegan.spec.final_resolution:
                raise ShapeError(f"{name} is {image.shape[-1]}px, the model expects "
                                 f"{trained.sizegan.spec.final_resolution}px")
            out = trained.sizegan.resize(image[None].to(device), seg[None].to(device), z_all[i:i + 1].to(device))
            _write_outputs(out_dir, name, out.image[0].cpu(), out.seg[0].cpu(), out.field[0].cpu(), args.stride)
    print(f"Wrote {len(items)} resized images to {out_dir}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    run_config = _resolve(args, {})
    out_dir = _out(args, "baseline")
    if not _start(args, "baseline", run_config, out_dir, input=args.input_dir):
        return EXIT_OK
    if args.ratio == "auto":
        if not args.dataset:
            raise ConfigurationError("--ratio auto needs --dataset")
        manifest = load_dataset(Path(args.dataset))
        ratio = estimate_hip_ratio(hip_distances(manifest, "train", config.SMALL),
                                   hip_distances(manifest, "train", config.PLUS))
        if args.direction == "plus2small":
            ratio = 1.0 / ratio
        print(f"  estimated hip ratio: {ratio:.3f}")
    else:
        ratio = args.ratio
    items = _read_inputs(Path(args.input_dir), args.split, args.direction)
    h, w = items[0][1].shape[-2:]
    field = single_axis_field(h, w, ratio).displacements
    for name, image, seg in items:
        _write_outputs(out_dir, name, warp_image(image, field), warp_segmentation(seg, field), field, args.stride,
                       with_field=False)
    save_field(field, out_dir / "field.dfield")
    visualize_field(field, args.stride, out_dir / "field_quiver.png")
    print(f"Wrote {len(items)} images scaled by {ratio:g} in x to {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_run
    from .training import load_trained

    overrides = {"train.dataset": args.dataset, "eval.split": args.split}
    if args.config:
        run_config = _resolve(args, overrides)
    else:
        # Architecture comes from the checkpoint itself
        run_config = resolve_config(overrides=overrides, base=load_trained(Path(args.checkpoint)).run_config)
    out_dir = _out(args, "eval")
    if not _start(args, "evaluate", run_config, out_dir, checkpoint=args.checkpoint, dataset=args.dataset):
        return EXIT_OK
    paths = evaluate_run(run_config, Path(args.checkpoint), out_dir, Path(args.dataset) if args.dataset else None)
    for path in paths.values():
        print(f"  wrote {path}")
    return EXIT_OK


def cmd_viz_field(args) -> int:
    run_config = _resolve(args, {})
    out_path = Path(args.out) if args.out else config.output_root() / f"{Path(args.field).stem}_quiver.png"
    if not _start(args, "viz-field", run_config, out_path.parent, field=args.field):
        return EXIT_OK
    field = load_field(Path(args.field))
    image = image_to_tensor(read_image(Path(args.image))) if args.image else None
    visualize_field(field, args.stride, out_path, image)
    print(f"Wrote {out_path}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    overrides = {"data.n_pairs": args.n, "train.steps": args.steps, "train.direction": args.direction,
                 "resolution": args.resolution}
    run_config = _resolve(args, overrides)
    out_dir = _out(args, "run")
    if not _start(args, "run-all", run_config, out_dir):
        return EXIT_OK
    from .pipeline import run_all

    state = run_all(run_config, out_dir, database=get_database())
    print(f"Completed: {', '.join(state['completed'])}")
    print(f"Report: {state['report_dir']}")
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="sizemorph", description="Resize garments and models with deformation fields")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("gen-data", help="Generate the synthetic paired dataset")
    p.add_argument("--n", type=int, help="Number of pairs")
    p.add_argument("--resolution", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Dataset root")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="Add annotated real pairs to a dataset")
    p.add_argument("--source", required=True, help="Folder of pair folders")
    p.add_argument("--dataset", required=True, help="Existing dataset root")
    p.add_argument("--split", default="train", choices=config.SPLIT_NAMES)
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-classifier", help="Pretrain the size classifier")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--depth", type=int, choices=(18, 34, 50))
    p.add_argument("--flip-labels", action="store_true", help="Sanity run with inverted training labels")
    _common(p)
    p.set_defaults(func=cmd_train_classifier)

    for name, func, text in (("train-gan", cmd_train_gan, "Train the deformation generator"),
                             ("ablate", cmd_ablate, "Train and compare the three loss configurations")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--dataset")
        p.add_argument("--classifier", help="Pretrained classifier checkpoint")
        p.add_argument("--direction", choices=("small2plus", "plus2small"))
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--seed", type=int, help=f"Training seed (default {config.LATENT_SEED})")
        p.add_argument("--resolution", type=int)
        p.add_argument("--out")
        _common(p)
        p.set_defaults(func=func)
        if name == "train-gan":
            p.add_argument("--resume", action="store_true", help="Continue from the last checkpoint")
        else:
            p.add_argument("--seeds", type=int, nargs="+", help="One run per seed and configuration")
            p.add_argument("--smoothness-control", action="store_true", help="Also train with λ_smooth = 0")

    p = sub.add_parser("resize", help="Resize images with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-dir", required=True, help="Dataset root or folder of NAME.png + NAME_seg.png")
    p.add_argument("--split", default="test", choices=config.SPLIT_NAMES)
    p.add_argument("--seed", type=int, default=config.LATENT_SEED, help="Latent sampling seed")
    p.add_argument("--stride", type=int, default=config.QUIVER_STRIDE)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_resize)

    p = sub.add_parser("baseline", help="Single-axis (x only) scaling baseline")
    p.add_argument("--ratio", type=_ratio, default=config.BASELINE_RATIO,
                   help="Scale factor, or 'auto' from hip keypoints")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--dataset", help="Dataset for --ratio auto")
    p.add_argument("--direction", default="small2plus", choices=("small2plus", "plus2small"))
    p.add_argument("--split", default="test", choices=config.SPLIT_NAMES)
    p.add_argument("--stride", type=int, default=config.QUIVER_STRIDE)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="Compare a generator with the baselines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=config.SPLIT_NAMES)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("viz-field", help="Quiver plot of a .dfield file")
    p.add_argument("--field", required=True)
    p.add_argument("--image", help="Optional PNG to draw under the arrows")
    p.add_argument("--stride", type=int, default=config.QUIVER_STRIDE)
    p.add_argument("--out", help="Output PNG")
    _common(p)
    p.set_defaults(func=cmd_viz_field)

    p = sub.add_parser("run-all", help="Generate data, train, and evaluate")
    p.add_argument("--n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--direction", choices=("small2plus", "plus2small"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ArgumentError, ConfigurationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SizeMorphError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\nInterrupted; rerun with --resume to continue", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
