"""Spatial (radius) and feature (kNN) graph construction.

Edges are stored as parallel arrays. An edge ``(dst=i, src=j)`` means node
``i`` receives a message from its neighbor ``j``; its annotation is the
bearing and distance from ``p_i`` to ``p_j``. Both edge sets are symmetric,
carry a unit-weight self-loop on every node, and are sorted by (dst, src).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError
from .geometry import annotate, pairwise_dist

logger = logging.getLogger(__name__)


class DirectionalAnnotation(NamedTuple):
    cos_theta: float
    sin_theta: float
    distance: float


class Edge(NamedTuple):
    src: int
    dst: int
    weight: float
    annotation: DirectionalAnnotation


@dataclass(frozen=True)
class GraphConfig:
    """Graph hyperparameters. ``epsilon=None`` means: pick the radius giving
    a mean non-loop spatial degree of ``target_degree``."""

    epsilon: float | None = None
    sigma: float = 1.0
    lambda_edge: float = 0.1
    delta: float = 1.0
    k: int = 8
    target_degree: float = 8.0

    def validate(self) -> "GraphConfig":
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if not self.lambda_edge >= 0:
            raise ConfigError(f"lambda_edge must be >= 0, got {self.lambda_edge}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be an integer >= 1, got {self.k}")
        if not self.target_degree > 0:
            raise ConfigError(f"target_degree must be > 0, got {self.target_degree}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class EdgeSet:
    def __init__(self, n_nodes, src, dst, weight, cos, sin, dist):
        self.n_nodes = int(n_nodes)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.cos = np.asarray(cos, dtype=np.float64)
        self.sin = np.asarray(sin, dtype=np.float64)
        self.dist = np.asarray(dist, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.src)

    def __iter__(self) -> Iterator[Edge]:
        for s, d, w, c, sn, r in zip(self.src, self.dst, self.weight, self.cos, self.sin, self.dist):
            yield Edge(int(s), int(d), float(w), DirectionalAnnotation(float(c), float(sn), float(r)))

    @property
    def direction(self) -> np.ndarray:
        """``(E, 3)`` block of [cos_theta, sin_theta, distance]."""
        return np.column_stack([self.cos, self.sin, self.dist])

    @property
    def is_loop(self) -> np.ndarray:
        return self.src == self.dst

    def non_loop(self) -> "EdgeSet":
        return self.subset(~self.is_loop)

    def subset(self, mask) -> "EdgeSet":
        return EdgeSet(self.n_nodes, self.src[mask], self.dst[mask], self.weight[mask],
                       self.cos[mask], self.sin[mask], self.dist[mask])

    def induced(self, nodes) -> "EdgeSet":
        """Edges with both endpoints in ``nodes``, relabeled to positions within ``nodes``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.full(self.n_nodes, -1)
        pos[nodes] = np.arange(len(nodes))
        keep = (pos[self.src] >= 0) & (pos[self.dst] >= 0)
        sub = self.subset(keep)
        return EdgeSet(len(nodes), pos[sub.src], pos[sub.dst], sub.weight, sub.cos, sub.sin, sub.dist)

    def degrees(self) -> np.ndarray:
        """Non-loop in-degree of every node."""
        nl = ~self.is_loop
        return np.bincount(self.dst[nl], minlength=self.n_nodes)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))


@dataclass(frozen=True)
class DualGraph:
    n_nodes: int
    spatial: EdgeSet
    feature: EdgeSet
    config: GraphConfig

    @property
    def spatial_edges(self) -> EdgeSet:
        return self.spatial

    @property
    def feature_edges(self) -> EdgeSet:
        return self.feature


def _finish(coords: np.ndarray, dst: np.ndarray, src: np.ndarray, weight: np.ndarray) -> EdgeSet:
    n = len(coords)
    loops = np.arange(n)
    dst = np.concatenate([dst, loops])
    src = np.concatenate([src, loops])
    weight = np.concatenate([weight, np.ones(n)])
    order = np.lexsort((src, dst))
    dst, src, weight = dst[order], src[order], weight[order]
    cos, sin, dist = annotate(coords[dst], coords[src])
    # self-loops carry the fixed (1, 0, 0) annotation even if coords repeat
    loop = dst == src
    cos[loop], sin[loop], dist[loop] = 1.0, 0.0, 0.0
    return EdgeSet(n, src, dst, weight, cos, sin, dist)


def resolve_epsilon(coords, target_degree: float = 8.0) -> float:
    """Smallest radius whose mean non-loop degree reaches ``target_degree``.

    Mean degree is ``2 * pairs / n`` with pairs counted at distance ``<= eps``,
    so the answer is an order statistic of the pair distances (floored at the
    smallest positive distance when many points coincide).
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    pd = pairwise_dist(coords)[np.triu_indices(n, k=1)]
    positive = pd[pd > 0]
    if len(positive) == 0:
        raise ConfigError("cannot choose epsilon: all points coincide")
    need = int(np.ceil(target_degree * n / 2.0))
    need = min(max(need, 1), len(pd))
    eps = float(np.partition(pd, need - 1)[need - 1])
    return eps if eps > 0 else float(positive.min())


def build_spatial_graph(coords, features, cfg: GraphConfig) -> EdgeSet:
    """Radius graph with weight exp(-d^2 / (2 sigma^2) - lambda * ||f_i - f_j||)."""
    cfg.validate()
    coords = np.asarray(coords, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    eps = cfg.epsilon if cfg.epsilon is not None else resolve_epsilon(coords, cfg.target_degree)
    d = pairwise_dist(coords)
    near = d <= eps
    np.fill_diagonal(near, False)
    dst, src = np.nonzero(near)
    fdiff = np.linalg.norm(features[dst] - features[src], axis=1)
    weight = np.exp(-d[dst, src] ** 2 / (2.0 * cfg.sigma ** 2) - cfg.lambda_edge * fdiff)
    if len(dst) == 0:
        logger.warning("spatial graph has no edges besides self-loops (epsilon=%g)", eps)
    return _finish(coords, dst, src, weight)


def knn_indices(features, k: int) -> np.ndarray:
    """``(n, k)`` nearest neighbors by feature distance, excluding self; ties go to the smaller id."""
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the number of nodes ({n})")
    d = pairwise_dist(features)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def build_feature_graph(coords, features, cfg: GraphConfig) -> EdgeSet:
    """kNN graph in feature space, symmetrized by union, weight exp(-||x_i - x_j||^2 / (2 delta^2))."""
    cfg.validate()
    coords = np.asarray(coords, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    nbrs = knn_indices(features, int(cfg.k))
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), nbrs.shape[1])
    adj[rows, nbrs.ravel()] = True
    adj |= adj.T
    dst, src = np.nonzero(adj)
    diff = features[dst] - features[src]
    weight = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * cfg.delta ** 2))
    return _finish(coords, dst, src, weight)


def build_dual_graph(coords, features, cfg: GraphConfig | None = None) -> DualGraph:
    """Both graphs over standardized coordinates and features.

    The returned graph's config has ``epsilon`` filled in, so rebuilding from it
    reproduces the same radius.
    """
    cfg = (cfg or GraphConfig()).validate()
    coords = np.asarray(coords, dtype=np.float64)
    if cfg.epsilon is None:
        cfg = replace(cfg, epsilon=resolve_epsilon(coords, cfg.target_degree))
    spatial = build_spatial_graph(coords, features, cfg)
    feature = build_feature_graph(coords, features, cfg)
    return DualGraph(len(coords), spatial, feature, cfg)


def count_components(edges: EdgeSet) -> int:
    m = coo_matrix((np.ones(len(edges)), (edges.dst, edges.src)), shape=(edges.n_nodes, edges.n_nodes))
    n_comp, _ = connected_components(m, directed=False)
    return int(n_comp)


def graph_stats(g: DualGraph) -> dict:
    out: dict = {"n_nodes": g.n_nodes}
    for name, es in (("spatial", g.spatial), ("feature", g.feature)):
        deg = es.degrees()
        out[f"{name}_edges"] = int((~es.is_loop).sum())
        out[f"{name}_degree_min"] = int(deg.min()) if len(deg) else 0
        out[f"{name}_degree_mean"] = float(deg.mean()) if len(deg) else 0.0
        out[f"{name}_degree_max"] = int(deg.max()) if len(deg) else 0
    out["spatial_components"] = count_components(g.spatial)
    out["epsilon"] = g.config.epsilon
    return out


EDGE_CSV_HEADER = ["graph", "src", "dst", "weight", "cos_theta", "sin_theta", "dist"]


def export_edges_csv(g: DualGraph, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EDGE_CSV_HEADER)
        for name, es in (("spatial", g.spatial), ("feature", g.feature)):
            for e in es:
                a = e.annotation
                w.writerow([name, e.src, e.dst, repr(e.weight), repr(a.cos_theta), repr(a.sin_theta), repr(a.distance)])
