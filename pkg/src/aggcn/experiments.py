"""Desk-scale experiments shared by the acceptance tests and the notebooks."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, replace

from . import data
from .model import ModelConfig, gcn_baseline_config, init_model
from .numerics import Rng
from .train import TrainConfig, evaluate, train


@dataclass(frozen=True)
class SeparationRun:
    seed: int
    aggcn_dev: float
    gcn_dev: float
    majority_dev: float
    aggcn_epochs: int
    gcn_epochs: int
    seconds: float

    @property
    def margin(self) -> float:
        return self.aggcn_dev - self.gcn_dev


def majority_accuracy(train_c: data.Corpus, dev_c: data.Corpus) -> float:
    """Dev accuracy of always predicting the most frequent training label."""
    top, _ = Counter(i.label for i in train_c.instances).most_common(1)[0]
    return sum(i.label == top for i in dev_c.instances) / len(dev_c)


def _fit(config: ModelConfig, train_c, dev_c, tc: TrainConfig, seed: int, stop_loss: float) -> tuple[float, int]:
    model = init_model(config, train_c.token_vocab, train_c.label_vocab, Rng(seed))
    res = train(model, train_c, tc, on_epoch=lambda e, r: r.history[-1]["loss"] < stop_loss)
    return evaluate(model, dev_c).accuracy, res.history[-1]["epoch"]


def soft_vs_hard(
    seed: int,
    d: int = 24,
    n_instances: int = 500,
    off_path_distance: int = 2,
    epochs: int = 40,
    learning_rate: float = 0.02,
    stop_loss: float = 1e-3,
) -> SeparationRun:
    """Full-tree AGGCN against a K=0 pruned plain GCN on a cue-off-path corpus.

    Both models train on the same 60% split until the mean training loss drops
    below ``stop_loss`` or ``epochs`` run out; the remaining 40% is the dev set.
    """
    start = time.perf_counter()
    spec = data.SyntheticSpec(n_instances=n_instances, off_path_distance=off_path_distance, seed=seed)
    corpus = data.generate_synthetic(spec)
    train_c, dev_c, _ = data.split(corpus, (0.6, 0.4, 0.0), seed)
    tc = TrainConfig(epochs=epochs, learning_rate=learning_rate, seed=seed)
    aggcn = ModelConfig(d=d, d_word=d, n_labels=len(corpus.label_vocab))
    a_acc, a_ep = _fit(aggcn, train_c, dev_c, tc, seed, stop_loss)
    g_acc, g_ep = _fit(gcn_baseline_config(aggcn, 0), train_c, dev_c, tc, seed, stop_loss)
    return SeparationRun(seed, a_acc, g_acc, majority_accuracy(train_c, dev_c), a_ep, g_ep,
                         time.perf_counter() - start)


def desk_config(d: int = 24, **overrides) -> ModelConfig:
    """The default architecture (N=3, M=2, L1=2, L2=4) at a reduced width."""
    return replace(ModelConfig(d=d, d_word=d), **overrides)
