import numpy as np
import pytest

from sddgat.data import SyntheticSpec, generate_synthetic
from sddgat.graph import GraphConfig, build_dual_graph
from sddgat.geometry import standardize_coords


def central_diff(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (perturbs a copy)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def max_rel_err(a, b, floor=1e-8) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture(scope="session")
def small_table():
    return generate_synthetic(SyntheticSpec(n_nodes=60, seed=3))


@pytest.fixture
def random_graph():
    """8 random nodes, F=4, both edge sets populated."""
    rng = np.random.default_rng(11)
    coords = rng.uniform(0, 1, size=(8, 2))
    feats = rng.normal(size=(8, 4))
    coords_std, _ = standardize_coords(coords)
    g = build_dual_graph(coords_std, feats, GraphConfig(epsilon=1.2, k=2))
    return coords_std, feats, g


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Remember one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
