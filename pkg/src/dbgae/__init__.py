"""Dual bipartite graph autoencoder for group-level partial label learning."""

from .data import (
    NULL_CLASS,
    GeneratorConfig,
    GpllDataset,
    Group,
    Instance,
    LabelOccurrence,
    ambiguity_ratio,
    dataset_stats,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .evaluation import EvalReport, MethodReport, build_report, evaluate
from .graph import DualBipartiteGraph, build_dual_graph, dbscan, load_graph, save_graph
from .inference import (
    Prediction,
    baseline_cluster_voting,
    baseline_pair_clustering,
    pool_labels,
)
from .model import ModelConfig, RatingMatrix, TrainResult, train
from .pipeline import RunConfig, SweepSpec, run_pipeline, run_sweep

__all__ = [
    "NULL_CLASS",
    "GeneratorConfig",
    "GpllDataset",
    "Group",
    "Instance",
    "LabelOccurrence",
    "ambiguity_ratio",
    "dataset_stats",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "DualBipartiteGraph",
    "build_dual_graph",
    "dbscan",
    "load_graph",
    "save_graph",
    "ModelConfig",
    "RatingMatrix",
    "TrainResult",
    "train",
    "Prediction",
    "pool_labels",
    "baseline_cluster_voting",
    "baseline_pair_clustering",
    "EvalReport",
    "MethodReport",
    "evaluate",
    "build_report",
    "RunConfig",
    "SweepSpec",
    "run_pipeline",
    "run_sweep",
]
