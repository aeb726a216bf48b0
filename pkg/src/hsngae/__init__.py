"""Graph autoencoder transfer learning for activity recognition across smart homes."""

from .events import CLUSTERS, EventLog, LabelMap, load_event_log
from .experiments import ExperimentConfig, baseline_run, transfer_run
from .layers import GaeHyper, GaeModel, MlpHead
from .losses import LossWeights
from .sitegraph import AdjacencyDesign, SiteLayout, build_adjacency, build_dataset, normalize_adjacency
from .synthhome import SynthConfig, generate_homes
from .training import GraphSet, LabeledGraphSet, TrainConfig, train_gae

__version__ = "0.1.0"

__all__ = [
    "CLUSTERS",
    "AdjacencyDesign",
    "EventLog",
    "ExperimentConfig",
    "GaeHyper",
    "GaeModel",
    "GraphSet",
    "LabelMap",
    "LabeledGraphSet",
    "LossWeights",
    "MlpHead",
    "SiteLayout",
    "SynthConfig",
    "TrainConfig",
    "baseline_run",
    "build_adjacency",
    "build_dataset",
    "generate_homes",
    "load_event_log",
    "normalize_adjacency",
    "train_gae",
    "transfer_run",
]
