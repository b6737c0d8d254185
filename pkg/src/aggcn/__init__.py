"""Attention guided graph convolutional networks for relation extraction, on a small numpy autograd engine."""

from .depgraph import (
    FULL,
    DependencyGraph,
    build_adjacency,
    dependency_path,
    lca,
    link_sentence_roots,
    prune_tree,
    restrict_graph,
)
from .model import AggcnModel, Instance, ModelConfig, attention_maps, classify, gcn_baseline_config, init_model
from .numerics import Rng, Tensor, backward, finite_diff_check
from .train import EvalResult, TrainConfig, evaluate

__version__ = "0.1.0"
