"""Loss, SGD, scoring and the training loop."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .data import Corpus
from .model import AggcnModel, classify, make_dropout
from .numerics import ContractError, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared; the message names the instance."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.02
    optimizer: str = "sgd"
    momentum: float = 0.9
    grad_clip_norm: float | None = 5.0
    batch_size: int = 1
    seed: int = 0
    dropout_p: float = 0.0
    eval_every: int = 1

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError("dropout_p must be in [0, 1)")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.eval_every < 1:
            raise ContractError("epochs must be >= 0 and eval_every >= 1")


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log-likelihood of ``gold`` under ``softmax(logits)``."""
    c = logits.size
    if c < 2:
        raise ContractError("cross_entropy needs at least two classes")
    if not 0 <= gold < c:
        raise ContractError(f"gold label {gold} outside 0..{c - 1}")
    return nx.scale(nx.pick(nx.log_softmax(logits), gold), -1.0)


class SGD:
    """Plain or momentum SGD with optional global gradient-norm clipping."""

    def __init__(self, params: Sequence[Tensor], config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.velocity = [np.zeros_like(p.data) for p in self.params] if config.optimizer == "sgd_momentum" else None

    def step(self, grad_scale: float = 1.0) -> None:
        sgd_step(self.params, self.config, self.velocity, grad_scale)


def sgd_step(
    params: Sequence[Tensor],
    config: TrainConfig,
    velocity: list[np.ndarray] | None = None,
    grad_scale: float = 1.0,
) -> None:
    """Apply ``theta -= lr * g`` (with clipping/momentum) from ``p.grad``, then zero the grads."""
    grads = [p.grad * grad_scale for p in params]
    if config.grad_clip_norm is not None:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
        if norm > config.grad_clip_norm:
            factor = config.grad_clip_norm / norm
            grads = [g * factor for g in grads]
    for i, (p, g) in enumerate(zip(params, grads)):
        if velocity is not None:
            velocity[i] *= config.momentum
            velocity[i] += g
            g = velocity[i]
        p.data -= config.learning_rate * g
        p.zero_grad()


@dataclass
class EvalResult:
    accuracy: float
    precision: float
    recall: float
    micro_f1: float
    macro_f1: float
    per_label: dict[str, dict[str, int]]
    confusion: list[list[int]]
    labels: list[str]
    n: int

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "accuracy", "precision", "recall", "micro_f1", "macro_f1")}

    def confusion_csv(self) -> str:
        lines = ["gold\\pred," + ",".join(self.labels)]
        for name, row in zip(self.labels, self.confusion):
            lines.append(name + "," + ",".join(str(c) for c in row))
        return "\n".join(lines) + "\n"


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def score(gold: Sequence[int], pred: Sequence[int], labels: Sequence[str], negative_label: int | None = None) -> EvalResult:
    """Accuracy, micro/macro P/R/F1 over non-negative labels, and the confusion matrix."""
    c = len(labels)
    confusion = np.zeros((c, c), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[g, p] += 1
    n = len(gold)
    positives = [k for k in range(c) if k != negative_label]
    per_label, tp_sum, fp_sum, fn_sum, f1s = {}, 0, 0, 0, []
    for k in range(c):
        tp = int(confusion[k, k])
        fp = int(confusion[:, k].sum() - tp)
        fn = int(confusion[k, :].sum() - tp)
        per_label[labels[k]] = {"tp": tp, "fp": fp, "fn": fn}
        if k not in positives:
            continue
        tp_sum, fp_sum, fn_sum = tp_sum + tp, fp_sum + fp, fn_sum + fn
        if tp + fp + fn == 0:
            continue
        p_k, r_k = _safe_div(tp, tp + fp), _safe_div(tp, tp + fn)
        f1s.append(_safe_div(2 * p_k * r_k, p_k + r_k))
    precision = _safe_div(tp_sum, tp_sum + fp_sum)
    recall = _safe_div(tp_sum, tp_sum + fn_sum)
    return EvalResult(
        accuracy=_safe_div(int(np.trace(confusion)), n),
        precision=precision,
        recall=recall,
        micro_f1=_safe_div(2 * precision * recall, precision + recall),
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        per_label=per_label,
        confusion=confusion.tolist(),
        labels=list(labels),
        n=n,
    )


def predict(model: AggcnModel, corpus: Corpus, pruning=None, workers: int = 1) -> list[int]:
    """Argmax label per instance, in corpus order."""
    def one(inst):
        return int(np.argmax(classify(inst, model, pruning).data.reshape(-1)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, corpus.instances))
    return [one(inst) for inst in corpus.instances]


def evaluate(model: AggcnModel, corpus: Corpus, negative_label: int | None = None, pruning=None, workers: int = 1) -> EvalResult:
    if not corpus.instances:
        raise ContractError("cannot evaluate on an empty corpus")
    if negative_label is None:
        negative_label = corpus.negative_label
    pred = predict(model, corpus, pruning, workers)
    gold = [inst.label for inst in corpus.instances]
    return score(gold, pred, model.labels, negative_label)


@dataclass
class TrainResult:
    model: AggcnModel
    history: list[dict] = field(default_factory=list)
    best_dev: float | None = None
    best_params: list[np.ndarray] | None = None

    def history_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.history)


def train(
    model: AggcnModel,
    corpus: Corpus,
    config: TrainConfig,
    pruning=None,
    dev: Corpus | None = None,
    on_epoch: Callable[[int, TrainResult], bool] | None = None,
) -> TrainResult:
    """Seeded SGD over shuffled instances, accumulating ``batch_size`` gradients per step.

    History gets one record per ``eval_every`` epochs with the mean training
    loss and, when ``dev`` is given, dev metrics.  The parameters with the best
    dev micro-F1 are kept in ``best_params``.  ``on_epoch`` may return True to
    stop early.
    """
    config.validate()
    if not corpus.instances:
        raise ContractError("training set is empty")
    params = model.parameters()
    opt = SGD(params, config)
    rng = nx.Rng(config.seed)
    order_rng = rng.derive("order")
    dropout = make_dropout(config.dropout_p, rng.derive("dropout")) if config.dropout_p > 0 else None
    result = TrainResult(model)
    nx.zero_grads(params)
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        pending = 0
        for idx in order_rng.permutation(len(corpus)):
            inst = corpus.instances[idx]
            try:
                loss = cross_entropy(classify(inst, model, pruning, dropout=dropout), inst.label)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"non-finite values on instance {inst.id!r} (epoch {epoch}): {exc}") from None
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} on instance {inst.id!r} (epoch {epoch})")
            total += value
            nx.backward(loss)
            pending += 1
            if pending == config.batch_size:
                opt.step(1.0 / pending)
                pending = 0
        if pending:
            opt.step(1.0 / pending)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            rec = {"epoch": epoch, "loss": total / len(corpus)}
            if dev is not None and dev.instances:
                res = evaluate(model, dev, pruning=pruning)
                rec.update({f"dev_{k}": v for k, v in res.summary().items() if k != "n"})
                if result.best_dev is None or res.micro_f1 > result.best_dev:
                    result.best_dev = res.micro_f1
                    result.best_params = [p.data.copy() for p in params]
            result.history.append(rec)
            log.info("epoch %d loss %.4f", epoch, rec["loss"])
        if on_epoch is not None and on_epoch(epoch, result):
            break
    return result


def restore(model: AggcnModel, values: Sequence[np.ndarray]) -> None:
    for p, v in zip(model.parameters(), values):
        p.data[...] = v
