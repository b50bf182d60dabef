"""
didm_metric.py
--------------
The DIDM mover's distance between graph-signals.

Iterated degree measures are never built. Instead, for two graphs G and H,
a stack of node-pair cost matrices is grown level by level:

    C_0(x, y) = ||f(x) - g(y)||_2
    D_i(x, y) = unbalanced OT with cost C_{i-1} between the neighbour
                measures of x in G and of y in H
    C_i       = C_{i-1} + D_i

where the neighbour measure of x puts mass a_xy / N on node y. The distance
at depth L is the unbalanced OT value between the uniform node measures of
G and H with cost C_L.
"""

import logging
import time
from multiprocessing import Pool
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.distance import cdist

from app.config import resolve_workers
from app.errors import ContractViolation, SolverError
from app.graph_model import Dataset, GraphSignal
from app.ot_solver import DiscreteMeasure, unbalanced_ot_value

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 2


class CostMatrixStack(BaseModel):
    """C_0 .. C_L for one graph pair; entrywise nondecreasing along the stack."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrices: List[np.ndarray] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _monotone(self) -> "CostMatrixStack":
        for i in range(1, len(self.matrices)):
            if np.any(self.matrices[i] < self.matrices[i - 1]):
                raise ValueError(f"C_{i} is not entrywise >= C_{i - 1}")
        return self

    @property
    def depth(self) -> int:
        return len(self.matrices) - 1

    @property
    def final(self) -> np.ndarray:
        return self.matrices[-1]


class TimingReport(BaseModel):
    pairs: int
    workers: int
    elapsed_seconds: float
    seconds_per_pair: float


def neighbor_measure(g: GraphSignal, x: int, sparse: bool = True) -> tuple[np.ndarray, DiscreteMeasure]:
    """
    Neighbour measure of node ``x``: mass a_xy / N on every node y.

    Returns the support (node indices) with the measure; ``sparse`` drops
    nodes with a_xy = 0.
    """
    row = g.adjacency[x]
    support = np.flatnonzero(row > 0) if sparse else np.arange(g.node_count)
    return support, DiscreteMeasure(weights=row[support] / g.node_count)


def _neighborhoods(g: GraphSignal) -> list[tuple[np.ndarray, np.ndarray]]:
    n = g.node_count
    out = []
    for x in range(n):
        support = np.flatnonzero(g.adjacency[x] > 0)
        out.append((support, g.adjacency[x, support] / n))
    return out


def initial_cost_matrix(g: GraphSignal, h: GraphSignal) -> np.ndarray:
    """
    Pairwise Euclidean distances between the node attributes of g and h.

    Graphs without attributes are treated as carrying the constant zero signal.

    Raises:
        ContractViolation: The attribute dimensions differ.
    """
    if g.attr_dim != h.attr_dim:
        raise ContractViolation(f"attribute dimensions differ: {g.attr_dim} vs {h.attr_dim}")
    if g.attr_dim == 0:
        return np.zeros((g.node_count, h.node_count))
    return cdist(g.attributes, h.attributes, metric="euclidean")


def next_cost_matrix(prev: np.ndarray, g: GraphSignal, h: GraphSignal) -> np.ndarray:
    """
    One refinement round: C_i = C_{i-1} + D_i.

    Raises:
        ContractViolation: ``prev`` has the wrong shape or negative entries.
        SolverError: A node-pair transport problem failed; the pair is attached.
    """
    prev = np.asarray(prev, dtype=np.float64)
    if prev.shape != (g.node_count, h.node_count):
        raise ContractViolation(f"cost matrix has shape {prev.shape}, expected {(g.node_count, h.node_count)}")
    if np.any(prev < 0):
        raise ContractViolation("cost matrix has negative entries")

    nbrs_g, nbrs_h = _neighborhoods(g), _neighborhoods(h)
    step = np.zeros_like(prev)
    for x, (sup_x, w_x) in enumerate(nbrs_g):
        for y, (sup_y, w_y) in enumerate(nbrs_h):
            try:
                step[x, y] = unbalanced_ot_value(prev[np.ix_(sup_x, sup_y)], w_x, w_y)
            except SolverError as exc:
                raise SolverError(str(exc), pair=(x, y)) from exc
            except Exception as exc:
                raise SolverError(f"transport failed: {exc}", pair=(x, y)) from exc
    return prev + step


def build_cost_stack(g: GraphSignal, h: GraphSignal, depth: int = DEFAULT_DEPTH) -> CostMatrixStack:
    if depth < 0:
        raise ContractViolation(f"depth must be >= 0, got {depth}")
    matrices = [initial_cost_matrix(g, h)]
    for _ in range(depth):
        matrices.append(next_cost_matrix(matrices[-1], g, h))
    return CostMatrixStack(matrices=matrices)


def didm_distance(g: GraphSignal, h: GraphSignal, depth: int = DEFAULT_DEPTH) -> float:
    """delta_DIDM^L(g, h): OT between the uniform node measures with cost C_L."""
    cost = build_cost_stack(g, h, depth).final
    return unbalanced_ot_value(
        cost,
        np.full(g.node_count, 1.0 / g.node_count),
        np.full(h.node_count, 1.0 / h.node_count),
    )


# ---------------------------------------------------------------------------
# Pair-parallel evaluation
# ---------------------------------------------------------------------------

_WORKER_GRAPHS: Sequence[GraphSignal] = ()
_WORKER_DEPTH: int = DEFAULT_DEPTH


def _init_worker(graphs: Sequence[GraphSignal], depth: int) -> None:
    global _WORKER_GRAPHS, _WORKER_DEPTH
    _WORKER_GRAPHS, _WORKER_DEPTH = graphs, depth


def _pair_task(pair: tuple[int, int]) -> tuple[int, int, float]:
    i, j = pair
    return i, j, didm_distance(_WORKER_GRAPHS[i], _WORKER_GRAPHS[j], _WORKER_DEPTH)


def _run_pairs(
    graphs: Sequence[GraphSignal],
    pairs: list[tuple[int, int]],
    depth: int,
    workers: int | None,
) -> tuple[list[tuple[int, int, float]], TimingReport]:
    workers = resolve_workers(workers)
    started = time.perf_counter()
    if workers == 1 or len(pairs) < 2:
        _init_worker(graphs, depth)
        results = [_pair_task(p) for p in pairs]
    else:
        chunk = max(1, len(pairs) // (workers * 8))
        with Pool(workers, initializer=_init_worker, initargs=(list(graphs), depth)) as pool:
            results = list(pool.imap_unordered(_pair_task, pairs, chunksize=chunk))
    elapsed = time.perf_counter() - started
    report = TimingReport(
        pairs=len(pairs),
        workers=workers,
        elapsed_seconds=elapsed,
        seconds_per_pair=elapsed / len(pairs) if pairs else 0.0,
    )
    return results, report


def pairwise_distance_matrix(
    ds: Dataset | Sequence[GraphSignal],
    depth: int = DEFAULT_DEPTH,
    workers: int | None = None,
) -> tuple[np.ndarray, TimingReport]:
    """
    Symmetric matrix of delta_DIDM^L over all graph pairs, zero diagonal.

    Each unordered pair is computed once, in isolation, so the result does not
    depend on the worker count.
    """
    graphs = list(ds.graphs if isinstance(ds, Dataset) else ds)
    n = len(graphs)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    results, report = _run_pairs(graphs, pairs, depth, workers)

    matrix = np.zeros((n, n))
    for i, j, value in results:
        matrix[i, j] = matrix[j, i] = value
    logger.info(
        "Pairwise delta^%d over %d graphs: %d pairs in %.1fs with %d worker(s).",
        depth, n, report.pairs, report.elapsed_seconds, report.workers,
    )
    return matrix, report


def distances_to_anchor(
    graphs: Sequence[GraphSignal],
    anchor: int,
    depth: int = DEFAULT_DEPTH,
    workers: int | None = None,
) -> np.ndarray:
    """delta_DIDM^L from graph ``anchor`` to every graph (0 at the anchor itself)."""
    graphs = list(graphs)
    if not 0 <= anchor < len(graphs):
        raise ContractViolation(f"anchor index {anchor} out of range for {len(graphs)} graphs")
    pairs = [(anchor, j) for j in range(len(graphs)) if j != anchor]
    results, _ = _run_pairs(graphs, pairs, depth, workers)
    out = np.zeros(len(graphs))
    for _, j, value in results:
        out[j] = value
    return out


def distances_for_pairs(
    graphs: Sequence[GraphSignal],
    pairs: list[tuple[int, int]],
    depth: int = DEFAULT_DEPTH,
    workers: int | None = None,
) -> np.ndarray:
    """delta_DIDM^L for an explicit list of index pairs (same order as ``pairs``)."""
    todo = sorted({(i, j) for i, j in pairs if i != j})
    results, _ = _run_pairs(list(graphs), todo, depth, workers)
    lookup = {(i, j): v for i, j, v in results}
    return np.array([0.0 if i == j else lookup[(i, j)] for i, j in pairs])


# ---------------------------------------------------------------------------
# Distance-matrix CSV
# ---------------------------------------------------------------------------

def write_distance_csv(matrix: np.ndarray, path, config_line: str | None = None) -> Path:
    """Header row of graph indices, then one row per graph at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if config_line is not None:
            fh.write(f"# config: {config_line}\n")
        pd.DataFrame(matrix, columns=range(matrix.shape[0])).to_csv(
            fh, index=False, float_format="%.17g"
        )
    logger.info("Wrote %dx%d distance matrix to %s.", matrix.shape[0], matrix.shape[1], path)
    return path


def read_distance_csv(path) -> np.ndarray:
    frame = pd.read_csv(path, comment="#", dtype=np.float64)
    matrix = frame.to_numpy()
    if matrix.shape[0] != matrix.shape[1]:
        raise ContractViolation(f"{path}: distance matrix is {matrix.shape}, not square")
    return matrix
