"""Planar coordinate helpers: standardization, distance, bearing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError


@dataclass(frozen=True)
class CoordTransform:
    mean: tuple[float, float]
    scale: tuple[float, float]

    def apply(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        return (coords - np.asarray(self.mean)) / np.asarray(self.scale)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "CoordTransform":
        return cls(tuple(d["mean"]), tuple(d["scale"]))


def standardize_coords(coords) -> tuple[np.ndarray, CoordTransform]:
    """Shift and scale each axis of an ``(n, 2)`` array to mean 0, variance 1.

    Raises :class:`DegenerateError` if either axis is constant.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
    if len(np.unique(coords, axis=0)) < 2:
        raise DegenerateError("need at least two distinct points")
    mean = coords.mean(axis=0)
    scale = coords.std(axis=0)
    for axis, s in zip(("lon", "lat"), scale):
        if not s > 0:
            raise DegenerateError(f"{axis} axis has zero variance")
    record = CoordTransform((float(mean[0]), float(mean[1])), (float(scale[0]), float(scale[1])))
    return record.apply(coords), record


def euclid_dist(p_i, p_j) -> float:
    d = np.asarray(p_j, dtype=np.float64) - np.asarray(p_i, dtype=np.float64)
    return float(np.hypot(d[0], d[1]))


def bearing(p_i, p_j) -> tuple[float, float]:
    """(cos, sin) of the angle of ``p_j - p_i`` measured from the lon axis.

    Coincident points return (1.0, 0.0).
    """
    cos, sin, _ = annotate(np.asarray([p_i], float), np.asarray([p_j], float))
    return float(cos[0]), float(sin[0])


def annotate(p_from: np.ndarray, p_to: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (cos_theta, sin_theta, distance) from rows of ``p_from`` to rows of ``p_to``."""
    delta = np.asarray(p_to, dtype=np.float64) - np.asarray(p_from, dtype=np.float64)
    dist = np.hypot(delta[:, 0], delta[:, 1])
    # (dx, dy) / r is cos/sin of arctan2(dy, dx) and keeps bearing(i, j) == -bearing(j, i) exact
    safe = np.where(dist > 0, dist, 1.0)
    cos = np.where(dist > 0, delta[:, 0] / safe, 1.0)
    sin = np.where(dist > 0, delta[:, 1] / safe, 0.0)
    return cos, sin, dist


def pairwise_dist(a: np.ndarray, b: np.ndarray | None = None, chunk: int = 128) -> np.ndarray:
    """Dense Euclidean distance matrix, computed in row blocks to bound memory."""
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    out = np.empty((len(a), len(b)))
    for start in range(0, len(a), chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out
