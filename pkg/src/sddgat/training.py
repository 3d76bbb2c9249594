"""Training loop, evaluation, linear baseline and experiment sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import NodeTable, Split, SplitSpec, fit_and_apply_standardizer, make_split, perturb_dropout, perturb_noise
from .errors import ConfigError, DegenerateError, DivergenceError, NumericError, SplitError
from .geometry import CoordTransform, standardize_coords
from .graph import DualGraph, EdgeSet, GraphConfig, build_dual_graph
from .losses import (LossConfig, MetricsReport, classification_metrics, fmt, morans_i, regression_metrics,
                     total_loss)
from .model import VARIANTS, ModelConfig, SddGatModel
from .optim import AdamConfig, AdamState, adam_step, xavier_init  # noqa: F401  (re-exported)
from .tensor import Tensor

logger = logging.getLogger(__name__)

NOISE_LEVELS = (0.01, 0.05, 0.10, 0.20)
DROPOUT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)
EXPERIMENT_KINDS = ("ablation", "noise_sweep", "dropout_sweep", "region_holdout")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 30
    seed: int = 0
    divergence_threshold: float = 1e6

    def validate(self) -> "TrainConfig":
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie strictly between 0 and 1")
        if not self.adam_eps > 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if int(self.patience) != self.patience or self.patience < 1:
            raise ConfigError(f"patience must be an integer >= 1, got {self.patience}")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be an integer >= 1, got {self.max_epochs}")
        return self

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.adam_beta1, self.adam_beta2, self.adam_eps)


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_metric", "seconds"])
            for e, row in enumerate(zip(self.train_loss, self.val_loss, self.val_metric, self.seconds), start=1):
                w.writerow([e, *(repr(float(v)) for v in row)])


def _numpy_task_loss(reg, logit, y, label, task: str) -> float:
    total = 0.0
    if task in ("regression", "dual"):
        total += float(np.mean((reg - y) ** 2))
    if task in ("classification", "dual"):
        sp = np.maximum(logit, 0.0) + np.log1p(np.exp(-np.abs(logit)))
        total += float(np.mean(sp - logit * label))
    return total


def smoothing_edges(model: SddGatModel, graph: DualGraph, nodes) -> EdgeSet:
    """Non-loop edges of the variant's smoothing graph with both endpoints in ``nodes``."""
    edges = model.recipe.edges(graph, model.recipe.smoothing).non_loop()
    inside = np.zeros(graph.n_nodes, dtype=bool)
    inside[np.asarray(nodes, dtype=np.int64)] = True
    return edges.subset(inside[edges.src] & inside[edges.dst])


def effective_loss_config(model: SddGatModel, loss_cfg: LossConfig) -> LossConfig:
    cfg = replace(loss_cfg, task=model.config.task)
    return cfg if model.recipe.smooth else replace(cfg, lambda_smooth=0.0)


def train(model: SddGatModel, table: NodeTable, graph: DualGraph, split: Split,
          train_cfg: TrainConfig, loss_cfg: LossConfig) -> tuple[dict, TrainLog]:
    """Full-graph transductive training with early stopping on validation task loss.

    The loss covers training nodes; the smoothness term covers edges whose
    endpoints are both training or validation nodes. Returns the parameters
    of the best validation epoch (also loaded into ``model``) and the log.
    """
    train_cfg.validate()
    cfg = effective_loss_config(model, loss_cfg).validate()
    if len(split.train) == 0:
        raise SplitError("training split is empty")
    if len(split.val) == 0:
        raise SplitError("early stopping needs a non-empty validation split")
    x = Tensor(table.features)
    y, label = table.dfi, table.label.astype(np.float64)
    smooth_edges = smoothing_edges(model, graph, np.concatenate([split.train, split.val]))
    val = split.val
    adam = train_cfg.adam
    state = AdamState()
    log = TrainLog()
    best_loss, best_state, wait = np.inf, model.state_dict(), 0

    for epoch in range(1, int(train_cfg.max_epochs) + 1):
        t0 = time.perf_counter()
        model.zero_grad()
        try:
            out = model.forward(x, graph)
            loss = total_loss((out.reg_out, out.cls_logit), (y, label), smooth_edges, cfg, split.train)
        except NumericError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", best_state, log) from None
        lval = loss.item()
        if not np.isfinite(lval) or lval > train_cfg.divergence_threshold:
            raise DivergenceError(f"epoch {epoch}: training loss {lval} diverged", best_state, log)
        vloss = _numpy_task_loss(out.reg_out.data[val], out.cls_logit.data[val], y[val], label[val], cfg.task)
        if cfg.task == "classification":
            vmetric = float(np.mean((out.cls_logit.data[val] > 0) == (label[val] == 1)))
        else:
            vmetric = float(np.mean(np.abs(out.reg_out.data[val] - y[val])))
        # parameters that produced this epoch's val loss, before the update
        if vloss < best_loss:
            best_loss, best_state, wait = vloss, model.state_dict(), 0
            log.best_epoch = epoch
        else:
            wait += 1
        loss.backward()
        params = model.state_dict()
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.params.items()}
        try:
            new, state = adam_step(params, grads, state, adam)
        except NumericError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", best_state, log) from None
        model.load_state(new)
        log.train_loss.append(lval)
        log.val_loss.append(vloss)
        log.val_metric.append(vmetric)
        log.seconds.append(time.perf_counter() - t0)
        if wait >= train_cfg.patience:
            log.stopped_early = True
            break

    model.load_state(best_state)
    return best_state, log


def _metrics_from_predictions(reg, logit, table: NodeTable, index, spatial: EdgeSet | None,
                              task: str, smooth_values) -> MetricsReport:
    index = np.asarray(index, dtype=np.int64)
    rep = MetricsReport(n_eval=len(index))
    if task in ("regression", "dual"):
        try:
            rep.mae, rep.rmse, rep.r2 = regression_metrics(reg[index], table.dfi[index])
        except DegenerateError as exc:
            err = reg[index] - table.dfi[index]
            rep.mae = float(np.mean(np.abs(err)))
            rep.rmse = float(np.sqrt(np.mean(err ** 2)))
            rep.notes.append(str(exc))
    if task in ("classification", "dual"):
        cm = classification_metrics(logit[index], table.label[index])
        for k, v in cm.items():
            setattr(rep, k, v)
        if cm["auc"] is None:
            rep.notes.append("AUC undefined: evaluation labels contain a single class")
    if spatial is not None:
        try:
            rep.morans_i = morans_i(np.asarray(smooth_values)[index], spatial.induced(index))
        except DegenerateError as exc:
            rep.notes.append(f"Moran's I not reported ({exc})")
    return rep


def evaluate(model: SddGatModel, table: NodeTable, graph: DualGraph, index, loss_cfg: LossConfig | None = None) -> MetricsReport:
    """Metrics on ``index``. Moran's I always uses the radius graph induced on ``index``."""
    out = model.forward(Tensor(table.features), graph)
    task = model.config.task
    reg, logit = out.reg_out.data, out.cls_logit.data
    return _metrics_from_predictions(reg, logit, table, index, graph.spatial, task, out.smooth_signal(task).data)


def fit_linear(X, y, jitter: float = 1e-8) -> np.ndarray:
    """Least squares through the normal equations with a small ridge term."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = X.T @ X + jitter * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ y)


def linear_design(table: NodeTable) -> np.ndarray:
    coords, _ = standardize_coords(table.coords)
    return np.column_stack([np.ones(table.n), table.features, coords])


def linear_baseline(table: NodeTable, split: Split, graph: DualGraph | None = None, index=None) -> MetricsReport:
    """OLS on [1 | features | standardized coords] fitted on the training rows, scored on ``index`` (default test).

    Classification metrics use ``prediction - threshold`` as the score.
    """
    X = linear_design(table)
    coef = fit_linear(X[split.train], table.dfi[split.train])
    pred = X @ coef
    index = split.test if index is None else index
    spatial = graph.spatial if graph is not None else None
    return _metrics_from_predictions(pred, pred - table.threshold, table, index, spatial, "dual", pred)


# ---------------------------------------------------------------- runs and experiments


@dataclass(frozen=True)
class RunConfig:
    graph: GraphConfig = GraphConfig()
    hidden_dim: int = 32
    task: str = "dual"
    variant: str = "full"
    train: TrainConfig = TrainConfig()
    lambda_smooth: float = LossConfig().lambda_smooth
    split: SplitSpec = SplitSpec()
    leaky_slope: float = T.DEFAULT_SLOPE
    cls_threshold_dfi: float = LossConfig().cls_threshold_dfi

    def validate(self) -> "RunConfig":
        self.graph.validate()
        self.train.validate()
        self.split.validate()
        self.loss.validate()
        if int(self.hidden_dim) != self.hidden_dim or self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must lie in [0, 1), got {self.leaky_slope}")
        return self

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def loss(self) -> LossConfig:
        return LossConfig(lambda_smooth=self.lambda_smooth, task=self.task, cls_threshold_dfi=self.cls_threshold_dfi)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed), split=replace(self.split, seed=seed))

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "hidden_dim": self.hidden_dim,
            "task": self.task,
            "variant": self.variant,
            "train": asdict(self.train),
            "lambda_smooth": self.lambda_smooth,
            "split": self.split.to_dict(),
            "leaky_slope": self.leaky_slope,
            "cls_threshold_dfi": self.cls_threshold_dfi,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def with_threshold(table: NodeTable, threshold: float) -> NodeTable:
    return table if table.threshold == threshold else replace(table, threshold=float(threshold))


@dataclass
class Prepared:
    table: NodeTable
    split: Split
    graph: DualGraph
    coord_transform: CoordTransform


def prepare(raw: NodeTable, split_spec: SplitSpec, graph_cfg: GraphConfig) -> Prepared:
    """Split, standardize features on the training rows, standardize coordinates, build both graphs."""
    split = make_split(raw, split_spec)
    table, _ = fit_and_apply_standardizer(raw, split.train)
    coords, ct = standardize_coords(raw.coords)
    return Prepared(table, split, build_dual_graph(coords, table.features, graph_cfg), ct)


def rebuild_graph(prep: Prepared, table: NodeTable) -> DualGraph:
    """Graphs for perturbed features, keeping the resolved radius."""
    return build_dual_graph(prep.coord_transform.apply(table.coords), table.features, prep.graph.config)


@dataclass
class RunResult:
    model: SddGatModel
    log: TrainLog
    report: MetricsReport
    prepared: Prepared
    config: RunConfig


def run_single(raw: NodeTable, cfg: RunConfig, prepared: Prepared | None = None) -> RunResult:
    cfg.validate()
    prep = prepared or prepare(with_threshold(raw, cfg.cls_threshold_dfi), cfg.split, cfg.graph)
    mcfg = ModelConfig(prep.table.features.shape[1], cfg.hidden_dim, cfg.task, cfg.variant, cfg.leaky_slope)
    model = SddGatModel.initialize(mcfg, cfg.seed)
    _, log = train(model, prep.table, prep.graph, prep.split, cfg.train, cfg.loss)
    report = evaluate(model, prep.table, prep.graph, prep.split.test, cfg.loss)
    return RunResult(model, log, report, prep, cfg)


METRIC_COLUMNS = MetricsReport.METRICS


@dataclass
class ExperimentReport:
    kind: str
    rows: list

    COLUMNS = ("kind", "model", "setting", "seed", "fingerprint", "epochs", "n_eval") + METRIC_COLUMNS

    def select(self, **match) -> list:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                            for c in self.COLUMNS])

    def to_text(self) -> str:
        cells = [list(self.COLUMNS)] + [[fmt(r.get(c)) for c in self.COLUMNS] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(v.ljust(wd) for v, wd in zip(row, widths)).rstrip() for row in cells]
        return "\n".join(lines) + "\n"


def _row(kind: str, model: str, setting, cfg: RunConfig, report: MetricsReport, epochs=None) -> dict:
    row = {"kind": kind, "model": model, "setting": str(setting), "seed": cfg.seed,
           "fingerprint": cfg.fingerprint(), "epochs": epochs}
    row.update(report.as_row())
    return row


def _mean_row(rows: list, kind: str, model: str) -> dict:
    out = {"kind": kind, "model": model, "setting": "mean", "seed": None, "fingerprint": None, "epochs": None,
           "n_eval": int(sum(r["n_eval"] for r in rows))}
    for m in METRIC_COLUMNS:
        vals = [r[m] for r in rows if r.get(m) is not None]
        out[m] = float(np.mean(vals)) if len(vals) == len(rows) and vals else None
    return out


def sweep_rows(res: RunResult, kind: str, include_zero: bool = False) -> list:
    """Score a trained run on its test split under each perturbation level.

    Every node's numeric features are perturbed (seeded by the run seed) and
    the graphs rebuilt with the resolved radius before evaluation.
    """
    prep, cfg = res.prepared, res.config
    if kind == "noise_sweep":
        levels, perturb = ((0.0,) if include_zero else ()) + NOISE_LEVELS, perturb_noise
    elif kind == "dropout_sweep":
        levels, perturb = DROPOUT_RATES, perturb_dropout
    else:
        raise ConfigError(f"{kind!r} is not a perturbation sweep")
    rows = []
    for level in levels:
        table = perturb(prep.table, level, cfg.seed)
        graph = prep.graph if table is prep.table else rebuild_graph(prep, table)
        rep = evaluate(res.model, table, graph, prep.split.test, cfg.loss)
        rows.append(_row(kind, "sddgat", level, cfg, rep, len(res.log)))
    return rows


def run_experiment(kind: str, raw: NodeTable, cfg: RunConfig, include_zero: bool = False) -> ExperimentReport:
    """Run one experiment protocol.

    ablation: one row per variant. noise_sweep / dropout_sweep: train once on
    clean data, then evaluate the test split after perturbing every node's
    numeric features (seeded by the run seed) and rebuilding the graphs.
    region_holdout: one fold per region for SDD-GAT and the linear baseline,
    fold ``k`` seeded with ``seed + k``, plus a mean row per model.
    """
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}")
    cfg.validate()
    rows = []
    if kind == "ablation":
        prep = prepare(with_threshold(raw, cfg.cls_threshold_dfi), cfg.split, cfg.graph)
        for variant in VARIANTS:
            vcfg = replace(cfg, variant=variant)
            res = run_single(raw, vcfg, prep)
            rows.append(_row(kind, "sddgat", variant, vcfg, res.report, len(res.log)))
    elif kind in ("noise_sweep", "dropout_sweep"):
        rows = sweep_rows(run_single(raw, cfg), kind, include_zero)
    else:
        regions = [int(r) for r in np.unique(raw.region)]
        if len(regions) < 2:
            raise SplitError("region holdout needs at least two regions")
        gat_rows, lin_rows = [], []
        for k, region in enumerate(regions):
            fcfg = replace(cfg.with_seed(cfg.seed + k),
                           split=SplitSpec("region_holdout", holdout_region=region, seed=cfg.seed + k,
                                           val_fraction=cfg.split.val_fraction))
            res = run_single(raw, fcfg)
            gat_rows.append(_row(kind, "sddgat", f"region={region}", fcfg, res.report, len(res.log)))
            prep = res.prepared
            lin = linear_baseline(prep.table, prep.split, prep.graph)
            lin_rows.append(_row(kind, "linear", f"region={region}", fcfg, lin))
        rows = gat_rows + [_mean_row(gat_rows, kind, "sddgat")] + lin_rows + [_mean_row(lin_rows, kind, "linear")]
    return ExperimentReport(kind, rows)
