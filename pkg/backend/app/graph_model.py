"""
graph_model.py
--------------
Graph-signal data model and everything that produces graph-signals:

  - GraphSignal / Dataset containers (immutable, validated on construction)
  - TU benchmark directory ingestion (``load_tudataset``)
  - degree signals, SBM generation, node relabelling
  - graph JSON files (``load_graph_json`` / ``save_graph_json``)

A GraphSignal stands for its induced step graphon: node ``i`` owns the
interval [i/N, (i+1)/N) and the adjacency entry a_ij is the graphon value on
the corresponding square.
"""

import hashlib
import logging
from pathlib import Path
from typing import List

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.errors import ContractViolation, DatasetLoadError, GraphParseError
from app.schemas import GraphJson

logger = logging.getLogger(__name__)


def _frozen_array(value, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class GraphSignal(BaseModel):
    """
    A finite attributed graph: symmetric adjacency with entries in [0, 1]
    plus one attribute row per node. ``attributes`` may have zero columns
    (no signal yet).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    adjacency: np.ndarray = Field(..., description="N x N symmetric weights in [0, 1]")
    attributes: np.ndarray = Field(..., description="N x d signal")

    @field_validator("adjacency", "attributes", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _frozen_array(value, 2)

    @model_validator(mode="after")
    def _check(self) -> "GraphSignal":
        problems = self.verify()
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def verify(self) -> list[str]:
        """Re-check the invariants; returns a list of problems (empty = valid)."""
        problems: list[str] = []
        a, f = self.adjacency, self.attributes
        if a.shape[0] < 1 or a.shape[0] != a.shape[1]:
            problems.append(f"adjacency must be square and non-empty, got {a.shape}")
            return problems
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            problems.append("adjacency entries must lie in [0, 1]")
        if not np.array_equal(a, a.T):
            i, j = np.argwhere(a != a.T)[0]
            problems.append(f"adjacency is not symmetric at ({i}, {j})")
        if f.shape[0] != a.shape[0]:
            problems.append(f"attributes have {f.shape[0]} rows for {a.shape[0]} nodes")
        if not np.all(np.isfinite(f)):
            problems.append("attributes must be finite")
        return problems

    @property
    def node_count(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def attr_dim(self) -> int:
        return int(self.attributes.shape[1])

    def with_attributes(self, attributes) -> "GraphSignal":
        return GraphSignal(adjacency=self.adjacency, attributes=attributes)


class Dataset(BaseModel):
    """An ordered list of graphs with one integer class label each."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    graphs: List[GraphSignal]
    labels: List[int]
    symmetrized_edges: int = Field(0, ge=0, description="Reverse edges added while loading")

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        if len(self.graphs) != len(self.labels):
            raise ValueError(f"{len(self.graphs)} graphs but {len(self.labels)} labels")
        dims = {g.attr_dim for g in self.graphs}
        if len(dims) > 1:
            raise ValueError(f"graphs disagree on attr_dim: {sorted(dims)}")
        return self

    @property
    def attr_dim(self) -> int:
        return self.graphs[0].attr_dim if self.graphs else 0

    @property
    def num_classes(self) -> int:
        return len(set(self.labels))

    def __len__(self) -> int:
        return len(self.graphs)


class SbmSpec(BaseModel):
    """Stochastic block model with one intra- and one inter-block edge probability."""

    block_sizes: List[int] = Field(..., min_length=1)
    intra_p: float = Field(..., ge=0.0, le=1.0)
    inter_q: float = Field(..., ge=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("block_sizes")
    @classmethod
    def _positive(cls, sizes: List[int]) -> List[int]:
        if any(s < 1 for s in sizes):
            raise ValueError("block sizes must be positive")
        return sizes


# ---------------------------------------------------------------------------
# Signals and relabelling
# ---------------------------------------------------------------------------

def degrees_as_attributes(g: GraphSignal, normalize: bool = False) -> GraphSignal:
    """Replace the signal by the (weighted) degree of each node, optionally divided by N."""
    degrees = g.adjacency.sum(axis=1, keepdims=True)
    if normalize:
        degrees = degrees / g.node_count
    return g.with_attributes(degrees)


def with_degree_attributes(ds: Dataset, normalize: bool = False) -> Dataset:
    return Dataset(
        name=ds.name,
        graphs=[degrees_as_attributes(g, normalize) for g in ds.graphs],
        labels=ds.labels,
        symmetrized_edges=ds.symmetrized_edges,
    )


def permute_graph(g: GraphSignal, perm) -> GraphSignal:
    """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(g.node_count)):
        raise ContractViolation(f"not a permutation of {g.node_count} nodes")
    return GraphSignal(
        adjacency=g.adjacency[np.ix_(perm, perm)],
        attributes=g.attributes[perm],
    )


def max_attribute_norm(graphs: List[GraphSignal]) -> float:
    """Radius r of the smallest origin-centred ball holding every attribute vector."""
    norms = [np.linalg.norm(g.attributes, axis=1).max() for g in graphs if g.attr_dim > 0]
    return float(max(norms, default=0.0))


def fingerprint(g: GraphSignal, label: int | None = None) -> str:
    """Content hash of a graph (and optional label); identical content, identical hash."""
    digest = hashlib.sha256()
    digest.update(np.asarray(g.adjacency.shape, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(g.adjacency).tobytes())
    digest.update(np.asarray(g.attributes.shape, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(g.attributes).tobytes())
    if label is not None:
        digest.update(str(label).encode())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# networkx interop and SBM generation
# ---------------------------------------------------------------------------

def to_networkx(g: GraphSignal) -> nx.Graph:
    graph = nx.Graph()
    for v in range(g.node_count):
        graph.add_node(v, attributes=g.attributes[v].tolist())
    rows, cols = np.nonzero(np.triu(g.adjacency))
    for i, j in zip(rows.tolist(), cols.tolist()):
        graph.add_edge(i, j, weight=float(g.adjacency[i, j]))
    return graph


def from_networkx(graph: nx.Graph, attributes=None) -> GraphSignal:
    nodes = sorted(graph.nodes())
    adjacency = nx.to_numpy_array(graph, nodelist=nodes, weight="weight", dtype=np.float64)
    if attributes is None:
        attributes = np.zeros((len(nodes), 0))
    return GraphSignal(adjacency=adjacency, attributes=attributes)


def block_assignment(spec: SbmSpec) -> np.ndarray:
    """Community index of every node; blocks are laid out contiguously."""
    return np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)


def generate_sbm(spec: SbmSpec) -> GraphSignal:
    """
    Sample a simple undirected graph from the block model; the same spec
    (seed included) always gives the same adjacency. Attributes are left empty.
    """
    k = len(spec.block_sizes)
    probs = np.full((k, k), spec.inter_q)
    np.fill_diagonal(probs, spec.intra_p)
    graph = nx.stochastic_block_model(
        sizes=spec.block_sizes,
        p=probs.tolist(),
        seed=spec.seed,
        selfloops=False,
    )
    n = sum(spec.block_sizes)
    adjacency = nx.to_numpy_array(graph, nodelist=range(n), dtype=np.float64)
    adjacency[adjacency > 0] = 1.0
    return GraphSignal(adjacency=adjacency, attributes=np.zeros((n, 0)))


# ---------------------------------------------------------------------------
# Graph JSON
# ---------------------------------------------------------------------------

def graph_from_json(doc: GraphJson) -> GraphSignal:
    n = doc.n
    if doc.adjacency is not None:
        adjacency = np.array(doc.adjacency, dtype=np.float64)
    else:
        adjacency = np.zeros((n, n))
        for i, j in doc.edges:
            adjacency[i, j] = adjacency[j, i] = 1.0
    attributes = np.array(doc.attributes, dtype=np.float64) if doc.attributes else np.zeros((n, 0))
    return GraphSignal(adjacency=adjacency, attributes=attributes)


def graph_to_json(g: GraphSignal) -> GraphJson:
    return GraphJson(
        n=g.node_count,
        adjacency=g.adjacency.tolist(),
        attributes=g.attributes.tolist(),
    )


def parse_graph_json(text: str, source: str = "<string>") -> GraphSignal:
    """
    Parse a graph JSON document.

    Raises:
        GraphParseError: Malformed JSON, wrong shape, asymmetric or out-of-range
            adjacency. The message names the offending location.
    """
    try:
        doc = GraphJson.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise GraphParseError(f"{source}: {where}: {first['msg']}") from exc
    return graph_from_json(doc)


def load_graph_json(path) -> GraphSignal:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphParseError(f"Cannot read graph file {path}: {exc}") from exc
    return parse_graph_json(text, source=str(path))


def save_graph_json(g: GraphSignal, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(graph_to_json(g).model_dump_json(), encoding="utf-8")
    logger.debug("Wrote %d-node graph to %s.", g.node_count, path)


# ---------------------------------------------------------------------------
# TU benchmark directories
# ---------------------------------------------------------------------------

def _tu_file(folder: Path, name: str, suffix: str, required: bool) -> Path | None:
    path = folder / f"{name}_{suffix}.txt"
    if path.is_file():
        return path
    if required:
        raise DatasetLoadError(f"Missing required dataset file: {path}")
    return None


def _read_table(path: Path, dtype) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    except (ValueError, OSError) as exc:
        raise DatasetLoadError(f"Malformed dataset file {path}: {exc}") from exc


def load_tudataset(root_path, dataset_name: str) -> Dataset:
    """
    Load a dataset in the TU benchmark text format.

    ``root_path`` may hold the ``<name>_*.txt`` files directly or contain a
    ``<name>/`` subdirectory with them. Node ids in the files are 1-based.

    Node labels are one-hot encoded (over the label values seen anywhere in
    the dataset); node attributes are appended after them when both exist.
    With neither file the graphs carry zero-width attributes.

    Raises:
        DatasetLoadError: A mandatory file is missing or a file is malformed.
    """
    folder = Path(root_path)
    if not (folder / f"{dataset_name}_A.txt").is_file() and (folder / dataset_name).is_dir():
        folder = folder / dataset_name

    edges = _read_table(_tu_file(folder, dataset_name, "A", True), np.int64) - 1
    indicator = _read_table(_tu_file(folder, dataset_name, "graph_indicator", True), np.int64)[:, 0]
    graph_labels = _read_table(_tu_file(folder, dataset_name, "graph_labels", True), np.int64)[:, 0]

    node_count = indicator.shape[0]
    graph_ids = indicator - indicator.min()
    num_graphs = int(graph_ids.max()) + 1 if node_count else 0
    if num_graphs != graph_labels.shape[0]:
        raise DatasetLoadError(
            f"{dataset_name}: graph_indicator names {num_graphs} graphs "
            f"but graph_labels has {graph_labels.shape[0]} rows"
        )
    if edges.size and (edges.min() < 0 or edges.max() >= node_count):
        raise DatasetLoadError(f"{dataset_name}_A.txt references nodes outside 1..{node_count}")

    signal_parts: list[np.ndarray] = []
    label_path = _tu_file(folder, dataset_name, "node_labels", False)
    if label_path is not None:
        node_labels = _read_table(label_path, np.int64)[:, 0]
        values, codes = np.unique(node_labels, return_inverse=True)
        signal_parts.append(np.eye(len(values))[codes])
    attr_path = _tu_file(folder, dataset_name, "node_attributes", False)
    if attr_path is not None:
        signal_parts.append(_read_table(attr_path, np.float64))
    for part in signal_parts:
        if part.shape[0] != node_count:
            raise DatasetLoadError(f"{dataset_name}: node file has {part.shape[0]} rows, expected {node_count}")
    signal = np.hstack(signal_parts) if signal_parts else np.zeros((node_count, 0))

    # Local index of every node inside its own graph.
    order = np.argsort(graph_ids, kind="stable")
    sizes = np.bincount(graph_ids, minlength=num_graphs)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    local = np.empty(node_count, dtype=np.int64)
    local[order] = np.arange(node_count) - np.repeat(starts, sizes)

    adjacencies = [np.zeros((s, s)) for s in sizes]
    edge_sets: list[set] = [set() for _ in range(num_graphs)]
    for u, v in edges.tolist():
        gid = graph_ids[u]
        if graph_ids[v] != gid:
            raise DatasetLoadError(f"{dataset_name}_A.txt: edge ({u + 1}, {v + 1}) crosses graphs")
        edge_sets[gid].add((int(local[u]), int(local[v])))

    added = 0
    for gid, pairs in enumerate(edge_sets):
        for i, j in pairs:
            if (j, i) not in pairs:
                added += 1
            adjacencies[gid][i, j] = adjacencies[gid][j, i] = 1.0
    if added:
        logger.warning("%s: added %d missing reverse edges (undirected reading).", dataset_name, added)

    graphs = [
        GraphSignal(adjacency=adjacencies[gid], attributes=signal[order[starts[gid]:starts[gid] + sizes[gid]]])
        for gid in range(num_graphs)
    ]
    dataset = Dataset(
        name=dataset_name,
        graphs=graphs,
        labels=graph_labels.tolist(),
        symmetrized_edges=added,
    )
    logger.info(
        "Loaded %s: %d graphs, %d classes, attr_dim %d.",
        dataset_name, len(dataset), dataset.num_classes, dataset.attr_dim,
    )
    return dataset
