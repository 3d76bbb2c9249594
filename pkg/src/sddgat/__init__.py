"""Dual-graph directional graph attention for spatial risk regression and classification."""

from .data import NodeTable, SplitSpec, SyntheticSpec, generate_synthetic, load_csv, make_split, write_csv
from .graph import DualGraph, GraphConfig, build_dual_graph, graph_stats
from .losses import LossConfig, MetricsReport, morans_i
from .model import ModelConfig, SddGatModel, load_checkpoint, save_checkpoint
from .training import RunConfig, TrainConfig, evaluate, linear_baseline, run_experiment, run_single, train

__version__ = "0.1.0"

__all__ = [
    "DualGraph", "GraphConfig", "LossConfig", "MetricsReport", "ModelConfig", "NodeTable", "RunConfig",
    "SddGatModel", "SplitSpec", "SyntheticSpec", "TrainConfig", "build_dual_graph", "evaluate",
    "generate_synthetic", "graph_stats", "linear_baseline", "load_checkpoint", "load_csv", "make_split",
    "morans_i", "run_experiment", "run_single", "save_checkpoint", "train", "write_csv",
]
