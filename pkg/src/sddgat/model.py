"""Dual-branch directional graph attention network.

Each branch stacks two single-head attention layers. For an edge ``(i <- j)``
the score is ``leaky_relu(a . [W h_i | W h_j | cos | sin | dist])``; scores are
softmax-normalized over the incoming edges of ``i`` and used to average the
projected neighbor rows, followed by a leaky_relu. The two branch outputs are
blended by ``sigmoid(alpha_raw)`` and fed to a regression head and a
classification head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataIOError, DimensionError
from .graph import DualGraph, EdgeSet
from .optim import xavier_init
from .tensor import Tensor

TASKS = ("regression", "classification", "dual")
VARIANTS = ("full", "no_direction", "single_graph", "no_smooth", "knn_only")
N_DIRECTION = 3

CHECKPOINT_FORMAT = "sddgat-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 32
    task: str = "dual"
    variant: str = "full"
    leaky_slope: float = T.DEFAULT_SLOPE

    def validate(self) -> "ModelConfig":
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if int(self.hidden_dim) != self.hidden_dim or self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        return self

    @property
    def use_direction(self) -> bool:
        return self.variant != "no_direction"

    @property
    def dual_branch(self) -> bool:
        return self.variant != "single_graph"


@dataclass(frozen=True)
class GraphRecipe:
    """Which edge set feeds each part of a variant."""

    spatial_branch: str = "spatial"
    smoothing: str = "spatial"
    smooth: bool = True

    def edges(self, g: DualGraph, which: str) -> EdgeSet:
        return g.spatial if which == "spatial" else g.feature


def graph_recipe(variant: str) -> GraphRecipe:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "knn_only":
        return GraphRecipe(spatial_branch="feature", smoothing="feature")
    if variant == "no_smooth":
        return GraphRecipe(smooth=False)
    return GraphRecipe()


class DirectionalAttentionLayer:
    def __init__(self, W: Tensor, a: Tensor, use_direction: bool = True, leaky_slope: float = T.DEFAULT_SLOPE):
        d_out = W.shape[1]
        expected = 2 * d_out + (N_DIRECTION if use_direction else 0)
        if a.shape != (expected,):
            raise ConfigError(f"attention vector has length {a.shape}, expected {expected}")
        self.W = W
        self.a = a
        self.use_direction = use_direction
        self.leaky_slope = leaky_slope

    def project(self, h: Tensor) -> Tensor:
        if h.shape[1] != self.W.shape[0]:
            raise DimensionError(f"layer expects {self.W.shape[0]} input features, got {h.shape[1]}")
        return T.matmul(h, self.W)

    def scores(self, wh: Tensor, edges: EdgeSet) -> Tensor:
        # a . [Wh_i | Wh_j | dir] split as a_dst . Wh_i + a_src . Wh_j + a_dir . dir,
        # so no (E, 2d+3) block is materialized
        d = wh.shape[1]
        a = self.a
        a_dst = T.reshape(T.take_rows(a, np.arange(0, d)), (d, 1))
        a_src = T.reshape(T.take_rows(a, np.arange(d, 2 * d)), (d, 1))
        s_dst = T.reshape(T.matmul(wh, a_dst), (wh.shape[0],))
        s_src = T.reshape(T.matmul(wh, a_src), (wh.shape[0],))
        raw = T.add(T.take_rows(s_dst, edges.dst), T.take_rows(s_src, edges.src))
        if self.use_direction:
            a_dir = T.reshape(T.take_rows(a, np.arange(2 * d, 2 * d + N_DIRECTION)), (N_DIRECTION, 1))
            raw = T.add(raw, T.reshape(T.matmul(Tensor(edges.direction), a_dir), (len(edges),)))
        return T.leaky_relu(raw, self.leaky_slope)

    def aggregate(self, scores: Tensor, wh: Tensor, edges: EdgeSet) -> tuple[Tensor, Tensor]:
        alpha = T.segment_softmax(scores, edges.dst, edges.n_nodes)
        msg = T.take_rows(wh, edges.src)
        h = T.segment_weighted_sum(msg, alpha, edges.dst, edges.n_nodes)
        return T.leaky_relu(h, self.leaky_slope), alpha

    def __call__(self, h: Tensor, edges: EdgeSet) -> tuple[Tensor, Tensor]:
        wh = self.project(h)
        return self.aggregate(self.scores(wh, edges), wh, edges)


def attention_scores(layer: DirectionalAttentionLayer, h: Tensor, edges: EdgeSet) -> Tensor:
    return layer.scores(layer.project(h), edges)


def attention_aggregate(layer: DirectionalAttentionLayer, scores: Tensor, h_projected: Tensor,
                        edges: EdgeSet) -> tuple[Tensor, Tensor]:
    return layer.aggregate(scores, h_projected, edges)


@dataclass
class ForwardResult:
    H_s: Tensor
    H_f: Tensor | None
    H_final: Tensor
    reg_out: Tensor
    cls_logit: Tensor
    alpha: float
    attention: dict

    def smooth_signal(self, task: str) -> Tensor:
        """Output the smoothness term and Moran's I look at: logits for classification, else regression values."""
        return self.cls_logit if task == "classification" else self.reg_out


class SddGatModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config.validate()
        self.params: dict[str, Tensor] = {}
        for name in self.param_names(config):
            if name not in params:
                raise ConfigError(f"missing parameter {name!r}")
            self.params[name] = Tensor(params[name], requires_grad=True, name=name)
        for name, shape in self.param_shapes(config).items():
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter {name!r} has shape {self.params[name].shape}, expected {shape}")
        self.recipe = graph_recipe(config.variant)

    @staticmethod
    def param_shapes(config: ModelConfig) -> dict[str, tuple]:
        F, d = int(config.input_dim), int(config.hidden_dim)
        a_len = 2 * d + (N_DIRECTION if config.use_direction else 0)
        branches = ("spatial", "feature") if config.dual_branch else ("spatial",)
        shapes: dict[str, tuple] = {}
        for b in branches:
            shapes[f"{b}.0.W"] = (F, d)
            shapes[f"{b}.0.a"] = (a_len,)
            shapes[f"{b}.1.W"] = (d, d)
            shapes[f"{b}.1.a"] = (a_len,)
        if config.dual_branch:
            shapes["alpha_raw"] = ()
        shapes["reg_head.w"] = (d, 1)
        shapes["reg_head.b"] = ()
        shapes["cls_head.w"] = (d, 1)
        shapes["cls_head.b"] = ()
        return shapes

    @classmethod
    def param_names(cls, config: ModelConfig) -> list[str]:
        return list(cls.param_shapes(config))

    @classmethod
    def initialize(cls, config: ModelConfig, seed=0) -> "SddGatModel":
        """Xavier-uniform weights drawn in parameter order from one seeded stream; biases and alpha_raw zero."""
        config.validate()
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.param_shapes(config).items():
            if shape == ():
                params[name] = np.zeros(())
            else:
                params[name] = xavier_init(shape, rng)
        return cls(config, params)

    def layers(self, branch: str) -> list[DirectionalAttentionLayer]:
        return [
            DirectionalAttentionLayer(self.params[f"{branch}.{k}.W"], self.params[f"{branch}.{k}.a"],
                                      self.config.use_direction, self.config.leaky_slope)
            for k in (0, 1)
        ]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise DimensionError(f"parameter {k!r}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k] = Tensor(arr.copy(), requires_grad=True, name=k)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _branch(self, name: str, x: Tensor, edges: EdgeSet, attention: dict) -> Tensor:
        h = x
        for k, layer in enumerate(self.layers(name)):
            h, alpha = layer(h, edges)
            attention[f"{name}.{k}"] = (alpha.data, edges.dst)
        return h

    def forward(self, features, g: DualGraph) -> ForwardResult:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.data.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionError(f"model expects {self.config.input_dim} input features, got shape {x.shape}")
        if x.shape[0] != g.n_nodes:
            raise DimensionError(f"{x.shape[0]} feature rows for a graph with {g.n_nodes} nodes")
        attention: dict = {}
        h_s = self._branch("spatial", x, self.recipe.edges(g, self.recipe.spatial_branch), attention)
        if self.config.dual_branch:
            h_f = self._branch("feature", x, g.feature, attention)
            a = T.sigmoid(self.params["alpha_raw"])
            h_final = T.add(T.mul(a, h_s), T.mul(T.sub(1.0, a), h_f))
            alpha = float(a.data)
        else:
            h_f, h_final, alpha = None, h_s, 1.0
        n = g.n_nodes
        reg = T.reshape(T.add(T.matmul(h_final, self.params["reg_head.w"]), self.params["reg_head.b"]), (n,))
        cls = T.reshape(T.add(T.matmul(h_final, self.params["cls_head.w"]), self.params["cls_head.b"]), (n,))
        return ForwardResult(h_s, h_f, h_final, reg, cls, alpha, attention)

    __call__ = forward


def forward(model: SddGatModel, features, g: DualGraph) -> ForwardResult:
    return model.forward(features, g)


def make_ablation_variant(model_cfg: ModelConfig, variant: str, seed=0) -> tuple[SddGatModel, GraphRecipe]:
    cfg = ModelConfig(model_cfg.input_dim, model_cfg.hidden_dim, model_cfg.task, variant, model_cfg.leaky_slope)
    model = SddGatModel.initialize(cfg, seed)
    return model, model.recipe


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: SddGatModel, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "extra": extra or {},
        "params": [
            {"name": k, "shape": list(v.shape), "values": v.data.ravel().tolist()}
            for k, v in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[SddGatModel, dict]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig(**payload["model_config"])
    params = {p["name"]: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"]) for p in payload["params"]}
    return SddGatModel(cfg, params), payload.get("extra", {})
