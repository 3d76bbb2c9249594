"""Training objectives and evaluation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .errors import ConfigError, DegenerateError, DimensionError
from .graph import EdgeSet
from .tensor import Tensor

DFI_THRESHOLD = 1.5


@dataclass(frozen=True)
class LossConfig:
    lambda_smooth: float = 1e-4
    task: str = "dual"
    cls_threshold_dfi: float = DFI_THRESHOLD

    def validate(self) -> "LossConfig":
        if not self.lambda_smooth >= 0:
            raise ConfigError(f"lambda_smooth must be >= 0, got {self.lambda_smooth}")
        if self.task not in ("regression", "classification", "dual"):
            raise ConfigError(f"unknown task {self.task!r}")
        return self


def mse(pred, target) -> Tensor:
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("loss of an empty batch")
    return T.mean(T.square(T.sub(pred, Tensor(target))))


def bce_with_logits(logits, labels) -> Tensor:
    """Mean of softplus(z) - y*z, the stable form of binary cross-entropy."""
    logits = T.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise DimensionError(f"logit shape {logits.shape} != label shape {labels.shape}")
    if logits.size == 0:
        raise ValueError("loss of an empty batch")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("classification labels must be 0 or 1")
    return T.mean(T.sub(T.softplus(logits), T.mul(logits, Tensor(labels))))


def task_loss(pred, target, mode: str) -> Tensor:
    """``pred`` and ``target`` are pairs ``(regression, classification)`` in dual mode."""
    if mode == "regression":
        return mse(pred, target)
    if mode == "classification":
        return bce_with_logits(pred, target)
    if mode == "dual":
        (reg, logit), (y, label) = pred, target
        return T.add(mse(reg, y), bce_with_logits(logit, label))
    raise ConfigError(f"unknown task {mode!r}")


def smoothness_loss(pred, edges: EdgeSet) -> Tensor:
    """Sum over directed edges of w_ij * (y_i - y_j)^2. Symmetric graphs count each pair twice."""
    pred = T.as_tensor(pred)
    nl = edges.non_loop()
    if len(nl) == 0:
        return T.mul(T.tsum(pred), 0.0)
    diff = T.sub(T.take_rows(pred, nl.dst), T.take_rows(pred, nl.src))
    return T.tsum(T.mul(T.square(diff), Tensor(nl.weight)))


def total_loss(preds, targets, smooth_edges: EdgeSet, cfg: LossConfig, index=None) -> Tensor:
    """Task loss on ``index`` (all nodes if None) plus lambda times the smoothness over ``smooth_edges``.

    ``preds`` is ``(regression_out, logits)`` over all nodes and ``targets`` is
    ``(dfi, label)``. The smoothness term acts on logits in classification mode
    and on regression outputs otherwise.
    """
    reg, logit = (T.as_tensor(p) for p in preds)
    y, label = (np.asarray(t, dtype=np.float64) for t in targets)
    if index is not None:
        index = np.asarray(index, dtype=np.int64)
        reg_i, logit_i, y, label = T.take_rows(reg, index), T.take_rows(logit, index), y[index], label[index]
    else:
        reg_i, logit_i = reg, logit
    if cfg.task == "regression":
        task = task_loss(reg_i, y, "regression")
    elif cfg.task == "classification":
        task = task_loss(logit_i, label, "classification")
    else:
        task = task_loss((reg_i, logit_i), (y, label), "dual")
    if cfg.lambda_smooth == 0:
        return task
    signal = logit if cfg.task == "classification" else reg
    return T.add(task, T.mul(smoothness_loss(signal, smooth_edges), cfg.lambda_smooth))


# ---------------------------------------------------------------- metrics


def regression_metrics(pred, target) -> tuple[float, float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError("prediction and target lengths differ")
    if len(pred) < 2:
        raise ValueError("regression metrics need at least two samples")
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    sst = float(np.sum((target - target.mean()) ** 2))
    if sst == 0:
        raise DegenerateError("R^2 undefined: target has zero variance")
    r2 = 1.0 - float(np.sum(err ** 2)) / sst
    return mae, rmse, r2


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores get half credit through average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateError("AUC undefined: only one class present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(logits, labels, threshold_prob: float = 0.5) -> dict:
    """Accuracy, precision, recall, F1 and AUC. ``auc`` is None when only one class is present."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    prob = T._sigmoid_np(logits)
    yhat = (prob > threshold_prob).astype(int)
    tp = int(np.sum((yhat == 1) & (labels == 1)))
    fp = int(np.sum((yhat == 1) & (labels == 0)))
    fn = int(np.sum((yhat == 0) & (labels == 1)))
    acc = float(np.mean(yhat == labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    try:
        auc = roc_auc(logits, labels)
    except DegenerateError:
        auc = None
    return {"accuracy": acc, "precision": precision, "recall": recall, "f1": f1, "auc": auc}


def morans_i(values, edges: EdgeSet) -> float:
    """Global Moran's I over the non-loop edges, with the kernel weights as w_ij."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise DegenerateError("Moran's I needs at least two values")
    if n != edges.n_nodes:
        raise DimensionError(f"{n} values for a graph of {edges.n_nodes} nodes")
    nl = edges.non_loop()
    w_total = float(nl.weight.sum())
    if w_total <= 0:
        raise DegenerateError("Moran's I undefined: no spatial weights")
    z = y - y.mean()
    denom = float(np.sum(z * z))
    if denom == 0:
        raise DegenerateError("Moran's I undefined: values are constant")
    num = float(np.sum(nl.weight * z[nl.dst] * z[nl.src]))
    return (n / w_total) * num / denom


@dataclass
class MetricsReport:
    n_eval: int = 0
    mae: float | None = None
    rmse: float | None = None
    r2: float | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    auc: float | None = None
    morans_i: float | None = None
    notes: list = field(default_factory=list)

    METRICS = ("mae", "rmse", "r2", "accuracy", "precision", "recall", "f1", "auc", "morans_i")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in ("n_eval",) + self.METRICS}

    def to_text(self) -> str:
        lines = [f"n_eval={self.n_eval}"]
        for k in self.METRICS:
            v = getattr(self, k)
            lines.append(f"{k}={'NA' if v is None else format(v, '.6g')}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return format(v, ".6g") if isinstance(v, float) else str(v)
