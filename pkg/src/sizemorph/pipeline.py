"""End-to-end run: data → classifier → generator → evaluation, as a LangGraph state graph."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, TypedDict

from langgraph.graph import END, START, StateGraph

from .database import Database
from .datasets import PairDataset
from .errors import ConfigurationError
from .evaluation import compare_methods, render_report
from .schemas import RunConfig
from .synthetic_data import MANIFEST_NAME, generate_dataset, load_dataset
from .training import get_device, load_trained, pretrain_classifier, train_gan


class PipelineState(TypedDict, total=False):
    run_config: RunConfig
    out_dir: str
    dataset_root: str
    classifier_checkpoint: str
    generator_checkpoint: str
    report_dir: str
    completed: list[str]
    progress: bool
    database: Optional[Database]


def evaluate_run(run_config: RunConfig, checkpoint: Path, out_dir: Path, dataset_root: Optional[Path] = None,
                 ablation: Optional[dict] = None) -> dict[str, Path]:
    """Compare a trained generator with the single-axis baselines and write the report."""
    trained = load_trained(checkpoint, expected=run_config, device=get_device())
    root = dataset_root or run_config.train.dataset or run_config.data.root
    if not root:
        raise ConfigurationError("no dataset to evaluate on (--dataset or train.dataset)")
    manifest = load_dataset(root)
    test_set = PairDataset(manifest, run_config.eval.split, trained.run_config.train.direction)
    print(f"Evaluating {checkpoint} on {len(test_set)} {run_config.eval.split} pairs")
    comparison = compare_methods(test_set, trained.sizegan, trained.classifier, run_config.eval.ratios,
                                 run_config.eval.latent_seed)
    return render_report(list(comparison.reports.values()), out_dir, comparison, run_config.eval.grid_samples,
                         ablation=ablation)


def _paths(state: PipelineState) -> dict[str, Path]:
    out = Path(state["out_dir"])
    return {"data": out / "data", "classifier": out / "classifier", "gan": out / "gan", "eval": out / "eval"}


def gen_data(state: PipelineState) -> dict:
    cfg = state["run_config"].data
    root = _paths(state)["data"]
    generate_dataset(cfg.n_pairs, cfg.split_fractions, cfg.resolution, cfg.seed, root)
    return {"dataset_root": str(root), "completed": state.get("completed", []) + ["gen_data"]}


def train_classifier(state: PipelineState) -> dict:
    result = pretrain_classifier(state["run_config"], Path(state["dataset_root"]), _paths(state)["classifier"],
                                 progress=state.get("progress", True))
    return {"classifier_checkpoint": str(result.checkpoint),
            "completed": state.get("completed", []) + ["train_classifier"]}


def train_generator(state: PipelineState) -> dict:
    tree = state["run_config"].model_dump(mode="json")
    tree["train"]["dataset"] = state["dataset_root"]
    tree["train"]["classifier_checkpoint"] = state["classifier_checkpoint"]
    run_config = RunConfig.model_validate(tree)
    result = train_gan(run_config, _paths(state)["gan"], resume=True, database=state.get("database"),
                       progress=state.get("progress", True))
    return {"run_config": run_config, "generator_checkpoint": str(result.checkpoint),
            "completed": state.get("completed", []) + ["train_gan"]}


def evaluate(state: PipelineState) -> dict:
    out = _paths(state)["eval"]
    evaluate_run(state["run_config"], Path(state["generator_checkpoint"]), out, Path(state["dataset_root"]))
    return {"report_dir": str(out), "completed": state.get("completed", []) + ["evaluate"]}


def _has_dataset(state: PipelineState) -> bool:
    return (Path(state["dataset_root"]) / MANIFEST_NAME).is_file()


def _has_classifier(state: PipelineState) -> bool:
    return Path(state["classifier_checkpoint"]).is_file()


def route_start(state: PipelineState) -> str:
    """Skip the stages whose outputs already exist."""
    if not _has_dataset(state):
        return "gen_data"
    if not _has_classifier(state):
        return "train_classifier"
    return "train_gan"


def route_after_data(state: PipelineState) -> str:
    return "train_gan" if _has_classifier(state) else "train_classifier"


def create_pipeline():
    """Build the run-all graph."""
    graph = StateGraph(PipelineState)

    graph.add_node("gen_data", gen_data)
    graph.add_node("train_classifier", train_classifier)
    graph.add_node("train_gan", train_generator)
    graph.add_node("evaluate", evaluate)

    graph.add_conditional_edges(START, route_start, {
        "gen_data": "gen_data", "train_classifier": "train_classifier", "train_gan": "train_gan",
    })
    graph.add_conditional_edges("gen_data", route_after_data, {
        "train_classifier": "train_classifier", "train_gan": "train_gan",
    })
    graph.add_edge("train_classifier", "train_gan")
    graph.add_edge("train_gan", "evaluate")
    graph.add_edge("evaluate", END)

    return graph.compile()


_pipeline = None


def get_pipeline():
    """Get or create the compiled graph."""
    global _pipeline
    if _pipeline is None:
        _pipeline = create_pipeline()
    return _pipeline


def run_all(run_config: RunConfig, out_dir: Path, database: Optional[Database] = None,
            progress: bool = True) -> PipelineState:
    """Run (or finish) every stage under ``out_dir``.

    Returns:
        Final pipeline state, with ``completed`` listing the stages that ran
    """
    out_dir = Path(out_dir)
    state: PipelineState = {
        "run_config": run_config,
        "out_dir": str(out_dir),
        "dataset_root": str(out_dir / "data"),
        "classifier_checkpoint": str(out_dir / "classifier" / "classifier.ckpt"),
        "completed": [],
        "progress": progress,
        "database": database,
    }
    return get_pipeline().invoke(state)
