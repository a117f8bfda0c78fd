"""Continuous-time latent embeddings of interval graphs driven by a
sequential survival process."""

__version__ = "0.1.0"

from .estimator import GraSSP
from .graph import DatasetSplit, EventSequence, TemporalGraph, load_graph, save_graph, split_dataset
from .model import ModelConfig, ModelParams

__all__ = [
    "__version__",
    "GraSSP",
    "DatasetSplit",
    "EventSequence",
    "TemporalGraph",
    "load_graph",
    "save_graph",
    "split_dataset",
    "ModelConfig",
    "ModelParams",
]
