"""
Shared fixtures, hypothesis strategies and a brute-force transport oracle.

The oracle enumerates basic feasible solutions of the unbalanced transport LP
with numpy only, so it is independent of the network simplex under test.
"""

import itertools
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from app.graph_model import Dataset, GraphSignal

MUTAG_DIR = os.getenv("DIDM_MUTAG_DIR", "").strip()

requires_mutag = pytest.mark.skipif(
    not MUTAG_DIR or not Path(MUTAG_DIR).is_dir(),
    reason="set DIDM_MUTAG_DIR to a TU directory holding MUTAG",
)


# In-process by default; tests that exercise the pool override it.
os.environ.setdefault("DIDM_THREADS", "1")


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------

def make_graph(edges, n: int, attributes=None) -> GraphSignal:
    adjacency = np.zeros((n, n))
    for i, j in edges:
        adjacency[i, j] = adjacency[j, i] = 1.0
    if attributes is None:
        attributes = np.zeros((n, 0))
    return GraphSignal(adjacency=adjacency, attributes=np.asarray(attributes, dtype=float).reshape(n, -1))


def path_graph(n: int, attributes=None) -> GraphSignal:
    return make_graph([(i, i + 1) for i in range(n - 1)], n, attributes)


def cycle_graph(n: int, attributes=None) -> GraphSignal:
    return make_graph([(i, (i + 1) % n) for i in range(n)], n, attributes)


def star_graph(n: int, attributes=None) -> GraphSignal:
    return make_graph([(0, i) for i in range(1, n)], n, attributes)


@pytest.fixture
def k2() -> GraphSignal:
    return make_graph([(0, 1)], 2, [[0.0], [0.0]])


@pytest.fixture
def single_node() -> GraphSignal:
    return make_graph([], 1, [[0.0]])


@pytest.fixture
def two_cluster_dataset() -> Dataset:
    """Paths labelled 0 and cliques labelled 1, with unit attributes."""
    graphs, labels = [], []
    for n in (4, 5, 6, 4, 5, 6):
        graphs.append(path_graph(n, np.ones(n)))
        labels.append(0)
    for n in (4, 5, 6, 4, 5, 6):
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
        graphs.append(make_graph(edges, n, np.full(n, 5.0)))
        labels.append(1)
    return Dataset(name="clusters", graphs=graphs, labels=labels)


def write_tu_files(root: Path, name: str, files: dict[str, str]) -> Path:
    """Write ``<name>_<suffix>.txt`` files into ``root/name`` and return that folder."""
    folder = root / name
    folder.mkdir(parents=True, exist_ok=True)
    for suffix, text in files.items():
        (folder / f"{name}_{suffix}.txt").write_text(text, encoding="utf-8")
    return folder


# ---------------------------------------------------------------------------
# Hypothesis strategies
# ---------------------------------------------------------------------------

@st.composite
def weight_vectors(draw, min_size: int = 1, max_size: int = 3, allow_zero: bool = True):
    """Nonnegative weights with total mass in [0, 1]."""
    size = draw(st.integers(min_size, max_size))
    raw = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=size, max_size=size)))
    mass = draw(st.floats(0.0 if allow_zero else 0.05, 1.0))
    if raw.sum() == 0.0:
        return raw
    return raw / raw.sum() * mass


@st.composite
def cost_matrices(draw, m: int, n: int):
    values = draw(st.lists(st.floats(0.0, 10.0), min_size=m * n, max_size=m * n))
    return np.array(values).reshape(m, n)


@st.composite
def graph_signals(draw, max_nodes: int = 8, attr_dim: int = 1, weighted: bool = False):
    n = draw(st.integers(1, max_nodes))
    entries = st.sampled_from([0.0, 0.5, 1.0]) if weighted else st.sampled_from([0.0, 1.0])
    adjacency = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            adjacency[i, j] = adjacency[j, i] = draw(entries)
    values = draw(st.lists(st.floats(-2.0, 2.0), min_size=n * attr_dim, max_size=n * attr_dim))
    return GraphSignal(adjacency=adjacency, attributes=np.array(values).reshape(n, attr_dim))


@st.composite
def signal_groups(draw, count: int, max_nodes: int = 12, weighted: bool = False):
    """``count`` graph-signals sharing one attribute dimension drawn from 1..3."""
    attr_dim = draw(st.integers(1, 3))
    return [draw(graph_signals(max_nodes, attr_dim, weighted)) for _ in range(count)]


@st.composite
def permutations(draw, n: int):
    return np.array(draw(st.permutations(range(n))))


# ---------------------------------------------------------------------------
# Brute-force unbalanced OT
# ---------------------------------------------------------------------------

def brute_force_unbalanced(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """
    min <C, gamma> + (|b| - |a|) over gamma >= 0 with row sums a and column
    sums <= b, by enumerating the basic feasible solutions of the LP with
    column slacks. Roles swap when |a| > |b|.
    """
    cost, a, b = np.asarray(cost, float), np.asarray(a, float), np.asarray(b, float)
    if a.sum() > b.sum():
        return brute_force_unbalanced(cost.T, b, a)
    m, n = cost.shape
    gap = b.sum() - a.sum()

    # Variables: gamma (row-major, m*n) then one slack per column.
    A = np.zeros((m + n, m * n + n))
    for i in range(m):
        for j in range(n):
            A[i, i * n + j] = 1.0
            A[m + j, i * n + j] = 1.0
    for j in range(n):
        A[m + j, m * n + j] = 1.0
    rhs = np.concatenate([a, b])
    objective = np.concatenate([cost.reshape(-1), np.zeros(n)])

    best = np.inf
    for basis in itertools.combinations(range(m * n + n), m + n):
        sub = A[:, basis]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, rhs)
        if np.any(x < -1e-12):
            continue
        best = min(best, float(objective[list(basis)] @ x))
    return best + gap
