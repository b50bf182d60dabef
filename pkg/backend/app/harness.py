"""
harness.py
----------
Experiment drivers. Each driver takes an ``ExperimentConfig`` (or the pieces
it needs), computes its table, and writes a CSV whose first line is
``# config: <json>`` so every artifact records the seeds and parameters that
produced it.

  knn_experiment                 1-NN classification from a delta^L matrix
  sbm_correlation_experiment     delta^L(G_i, G_last) vs MPNN output distance
  lipschitz_check_experiment     max over random MPNNs vs C_model * delta^L
  dataset_correlation_experiment anchor graph vs the rest of a dataset
"""

import json
import logging
from pathlib import Path
from typing import List, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy.stats import pearsonr

from app.didm_metric import (
    DEFAULT_DEPTH,
    distances_for_pairs,
    distances_to_anchor,
    pairwise_distance_matrix,
)
from app.errors import ConfigError, ContractViolation
from app.graph_model import (
    Dataset,
    GraphSignal,
    SbmSpec,
    block_assignment,
    fingerprint,
    generate_sbm,
    load_tudataset,
    max_attribute_norm,
    with_degree_attributes,
)
from app.mpnn_engine import (
    MpnnModel,
    forward,
    init_gc_meanpool,
    init_gin_meanpool,
    lipschitz_constants,
)

logger = logging.getLogger(__name__)

PEARSON_THRESHOLD = 0.8
LIPSCHITZ_SLACK = 1e-6
MAX_SPLIT_REDRAWS = 1000


class ExperimentConfig(BaseModel):
    """Declarative description of one experiment run."""

    kind: Literal["knn", "sbm_correlate", "dataset_correlate", "lipschitz_check"]
    tudataset: str | None = Field(None, description="TU dataset root directory")
    name: str | None = Field(None, description="TU dataset name, e.g. MUTAG")
    degrees: bool = Field(False, description="Replace signals by node degrees")
    normalize_degrees: bool = Field(False, description="Divide degrees by N")

    depth: int = Field(DEFAULT_DEPTH, ge=0, description="Metric depth L")
    model: Literal["gin", "gc", "both"] = "gin"
    hidden: int = Field(16, ge=1)
    layers: int = Field(DEFAULT_DEPTH, ge=1, description="MPNN depth")

    signal: Literal["constant", "community", "gaussian"] = "constant"
    block_sizes: List[int] = Field(default_factory=lambda: [15, 15])
    intra_p: float = Field(0.5, ge=0.0, le=1.0)
    q_start: float = Field(0.1, ge=0.0, le=1.0)
    q_end: float = Field(0.5, ge=0.0, le=1.0)
    graph_count: int = Field(50, ge=2)

    splits: int = Field(10, ge=1)
    train_frac: float = Field(0.9, gt=0.0, lt=1.0)
    models: int = Field(100, ge=1)
    pairs: int = Field(100, ge=1)
    anchor: int | None = Field(None, ge=0)

    split_seed: int = 0
    model_seed: int = 0
    graph_seed: int = 0
    workers: int | None = Field(None, ge=1)
    output_dir: str = "results"

    @model_validator(mode="after")
    def _check_paths(self) -> "ExperimentConfig":
        if self.tudataset is not None:
            if self.name is None:
                raise ValueError("a TU dataset needs a name")
            if not Path(self.tudataset).is_dir():
                raise ValueError(f"dataset directory {self.tudataset} does not exist")
        return self

    def header(self) -> str:
        return self.model_dump_json()


class KnnResult(BaseModel):
    mean_accuracy: float
    std_accuracy: float
    split_accuracies: List[float]
    redraws: int


class CorrelationResult(BaseModel):
    rows: int
    pearson_r: float | None
    csv_path: str | None = None


class LipschitzCheckResult(BaseModel):
    pairs: int
    models: int
    max_constant: float
    violations: int
    per_model_violations: int
    csv_path: str | None = None


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def load_config_dataset(config: ExperimentConfig) -> Dataset:
    if config.tudataset is None:
        raise ConfigError(f"experiment '{config.kind}' needs --tudataset and --name")
    ds = load_tudataset(config.tudataset, config.name)
    if config.degrees or config.normalize_degrees or ds.attr_dim == 0:
        ds = with_degree_attributes(ds, normalize=config.normalize_degrees)
    return ds


def init_model(family: str, layers: int, hidden: int, attr_dim: int, seed: int) -> MpnnModel:
    init = init_gin_meanpool if family == "gin" else init_gc_meanpool
    return init(layers, hidden, attr_dim, None, seed)


def write_table(frame: pd.DataFrame, path, config: ExperimentConfig, extra: dict | None = None) -> Path:
    """CSV with a ``# config:`` header line echoing seeds and parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config: {config.header()}\n")
        if extra:
            fh.write(f"# result: {json.dumps(extra, sort_keys=True)}\n")
        frame.to_csv(fh, index=False, float_format="%.17g")
    logger.info("Wrote %d rows to %s.", len(frame), path)
    return path


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson r, or None when either column is constant."""
    if len(x) < 2 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        logger.warning("Pearson correlation undefined for a constant column.")
        return None
    return float(pearsonr(x, y)[0])


def canonical_order(ds: Dataset) -> np.ndarray:
    """Dataset indices sorted by content hash (graph + label); independent of file order."""
    keys = [fingerprint(g, label) for g, label in zip(ds.graphs, ds.labels)]
    return np.array(sorted(range(len(ds)), key=lambda i: keys[i]), dtype=int)


# ---------------------------------------------------------------------------
# 1-NN classification
# ---------------------------------------------------------------------------

def nearest_neighbor_predict(
    distances: np.ndarray,
    labels: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
) -> np.ndarray:
    """Label of the nearest training graph; ties go to the smallest training index."""
    train_idx = np.sort(train_idx)
    block = distances[np.ix_(test_idx, train_idx)]
    nearest = train_idx[np.argmin(block, axis=1)]  # argmin returns the first minimum
    return labels[nearest]


def knn_experiment(
    ds: Dataset,
    depth: int = DEFAULT_DEPTH,
    splits: int = 10,
    train_frac: float = 0.9,
    seed: int = 0,
    distances: np.ndarray | None = None,
    workers: int | None = None,
) -> KnnResult:
    """
    Mean and standard deviation of 1-NN accuracy over seeded random splits.

    The distance matrix is computed once (or taken from ``distances``, indexed
    like ``ds``). Splits are drawn over the canonical graph order; a split whose
    training part misses a class is redrawn.
    """
    if ds.num_classes < 2:
        raise ContractViolation("1-NN evaluation needs at least two classes")
    if distances is None:
        distances, _ = pairwise_distance_matrix(ds, depth, workers)
    if distances.shape != (len(ds), len(ds)):
        raise ContractViolation(f"distance matrix is {distances.shape}, dataset has {len(ds)} graphs")

    order = canonical_order(ds)
    dist = distances[np.ix_(order, order)]
    labels = np.asarray(ds.labels)[order]
    classes = set(labels.tolist())

    n = len(ds)
    n_train = min(n - 1, max(1, int(round(train_frac * n))))
    rng = np.random.default_rng(seed)
    accuracies: list[float] = []
    redraws = 0
    for split in range(splits):
        for _ in range(MAX_SPLIT_REDRAWS):
            perm = rng.permutation(n)
            train_idx, test_idx = perm[:n_train], perm[n_train:]
            if set(labels[train_idx].tolist()) == classes:
                break
            redraws += 1
            logger.warning("Split %d: training part misses a class; redrawing.", split)
        else:
            raise ContractViolation("could not draw a split covering every class")
        predicted = nearest_neighbor_predict(dist, labels, train_idx, test_idx)
        accuracies.append(float(np.mean(predicted == labels[test_idx])))

    result = KnnResult(
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=float(np.std(accuracies)),
        split_accuracies=accuracies,
        redraws=redraws,
    )
    logger.info(
        "1-NN on %s (depth %d): %.2f%% +/- %.2f%% over %d splits.",
        ds.name, depth, 100 * result.mean_accuracy, 100 * result.std_accuracy, splits,
    )
    return result


# ---------------------------------------------------------------------------
# SBM correlation
# ---------------------------------------------------------------------------

def sbm_sequence(config: ExperimentConfig) -> tuple[list[GraphSignal], np.ndarray]:
    """
    G_0 .. G_{count-1} with inter-block probability q_i running linearly from
    q_start to q_end, signals attached according to ``config.signal``.
    """
    count = config.graph_count
    qs = config.q_start + (config.q_end - config.q_start) * np.arange(count) / (count - 1)
    graphs = []
    for i, q in enumerate(qs):
        spec = SbmSpec(
            block_sizes=config.block_sizes,
            intra_p=config.intra_p,
            inter_q=float(q),
            seed=config.graph_seed + i,
        )
        g = generate_sbm(spec)
        rng = np.random.default_rng([config.graph_seed, i])
        n = g.node_count
        if config.signal == "constant":
            signal = np.ones((n, 1))
        elif config.signal == "community":
            values = rng.uniform(0.0, 1.0, size=len(config.block_sizes))
            signal = values[block_assignment(spec)][:, None]
        else:
            sigma = (count - 1 - i) / (count - 1)
            signal = rng.normal(1.0, sigma, size=(n, 1))
        graphs.append(g.with_attributes(signal))
    return graphs, qs


def sbm_correlation_experiment(config: ExperimentConfig, write: bool = True) -> tuple[pd.DataFrame, CorrelationResult]:
    """
    delta^L(G_i, G_last) against ||output(G_i) - output(G_last)|| for one
    seeded model; G_last (q = q_end) is the anchor.
    """
    graphs, qs = sbm_sequence(config)
    anchor = len(graphs) - 1
    deltas = distances_to_anchor(graphs, anchor, config.depth, config.workers)

    family = "gc" if config.model == "gc" else "gin"
    model = init_model(family, config.layers, config.hidden, 1, config.model_seed)
    outputs = np.array([forward(model, g).graph_output for g in graphs])
    out_dist = np.linalg.norm(outputs - outputs[anchor], axis=1)

    frame = pd.DataFrame({"i": np.arange(len(graphs)), "q_i": qs, "delta": deltas, "output_distance": out_dist})
    r = pearson(deltas, out_dist)
    result = CorrelationResult(rows=len(frame), pearson_r=r)
    logger.info("SBM correlation (%s, %s signal, hidden %d): r = %s", family, config.signal, config.hidden, r)
    if write:
        path = write_table(
            frame,
            Path(config.output_dir) / f"sbm_{config.signal}_{family}_h{config.hidden}_l{config.layers}.csv",
            config,
            {"pearson_r": r, "threshold": PEARSON_THRESHOLD, "threshold_note": "implementer calibration"},
        )
        result.csv_path = str(path)
    return frame, result


# ---------------------------------------------------------------------------
# Lipschitz check
# ---------------------------------------------------------------------------

def sample_pairs(n: int, count: int, seed: int) -> list[tuple[int, int]]:
    """``count`` seeded index pairs; the first pair is always (0, 0) as a zero check."""
    rng = np.random.default_rng(seed)
    pairs = [(0, 0)]
    while len(pairs) < count:
        i, j = rng.integers(0, n, size=2).tolist()
        pairs.append((min(i, j), max(i, j)))
    return pairs


def lipschitz_check_experiment(
    ds: Dataset | List[GraphSignal],
    config: ExperimentConfig,
    write: bool = True,
) -> tuple[pd.DataFrame, LipschitzCheckResult]:
    """
    For sampled graph pairs, the max (and mean, and first-model) output
    distance over ``config.models`` random MPNNs of depth L = ``config.depth``,
    checked against C_model * delta^L.
    """
    graphs = list(ds.graphs if isinstance(ds, Dataset) else ds)
    attr_dim = graphs[0].attr_dim
    radius = max(max_attribute_norm(graphs), 1e-12)
    depth = config.depth
    if depth < 1:
        raise ContractViolation("the Lipschitz check needs depth >= 1 (MPNN depth equals metric depth)")

    families = ["gin", "gc"] if config.model == "both" else [config.model]
    models = [
        init_model(families[k % len(families)], depth, config.hidden, attr_dim, config.model_seed + k)
        for k in range(config.models)
    ]
    constants = np.array([lipschitz_constants(m, radius).C_model for m in models])

    pairs = sample_pairs(len(graphs), config.pairs, config.split_seed)
    involved = sorted({i for pair in pairs for i in pair})
    outputs = {
        i: np.array([forward(m, graphs[i]).graph_output for m in models]) for i in involved
    }
    deltas = distances_for_pairs(graphs, pairs, depth, config.workers)

    rows = []
    per_model_violations = 0
    for (i, j), delta in zip(pairs, deltas):
        dist = np.linalg.norm(outputs[i] - outputs[j], axis=1)
        per_model_violations += int(np.sum(dist > constants * delta + LIPSCHITZ_SLACK))
        rows.append((i, j, delta, dist.max(), dist.mean(), dist[0]))
    frame = pd.DataFrame(
        rows,
        columns=["left", "right", "delta", "max_output_distance", "mean_output_distance", "single_output_distance"],
    )
    max_constant = float(constants.max())
    frame["bound"] = max_constant * frame["delta"]
    frame["violation"] = frame["max_output_distance"] > frame["bound"] + LIPSCHITZ_SLACK
    scale_delta = frame["delta"].max() or 1.0
    scale_dist = frame["max_output_distance"].max() or 1.0
    frame["delta_normalized"] = frame["delta"] / scale_delta
    frame["max_output_distance_normalized"] = frame["max_output_distance"] / scale_dist

    violations = int(frame["violation"].sum())
    result = LipschitzCheckResult(
        pairs=len(frame),
        models=len(models),
        max_constant=max_constant,
        violations=violations,
        per_model_violations=per_model_violations,
    )
    if violations or per_model_violations:
        logger.error("Lipschitz bound violated: %d pair(s), %d model-pair(s).", violations, per_model_violations)
    else:
        logger.info("Lipschitz bound holds on %d pairs x %d models.", len(frame), len(models))
    if write:
        path = write_table(
            frame,
            Path(config.output_dir) / f"lipschitz_{config.model}_h{config.hidden}_l{depth}.csv",
            config,
            {"violations": violations, "max_constant": max_constant},
        )
        result.csv_path = str(path)
    return frame, result


# ---------------------------------------------------------------------------
# Dataset correlation
# ---------------------------------------------------------------------------

def dataset_correlation_experiment(
    ds: Dataset,
    config: ExperimentConfig,
    write: bool = True,
) -> tuple[pd.DataFrame, CorrelationResult]:
    """delta^L from one anchor graph to every graph against one random model's output distances."""
    anchor = config.anchor
    if anchor is None:
        anchor = int(np.random.default_rng(config.split_seed).integers(0, len(ds)))
    if not 0 <= anchor < len(ds):
        raise ContractViolation(f"anchor index {anchor} out of range for {len(ds)} graphs")

    deltas = distances_to_anchor(ds.graphs, anchor, config.depth, config.workers)
    family = "gc" if config.model == "gc" else "gin"
    model = init_model(family, config.layers, config.hidden, ds.attr_dim, config.model_seed)
    outputs = np.array([forward(model, g).graph_output for g in ds.graphs])
    out_dist = np.linalg.norm(outputs - outputs[anchor], axis=1)

    frame = pd.DataFrame({"graph": np.arange(len(ds)), "delta": deltas, "output_distance": out_dist})
    r = pearson(deltas, out_dist)
    result = CorrelationResult(rows=len(frame), pearson_r=r)
    logger.info("%s correlation from anchor %d (%s): r = %s", ds.name, anchor, family, r)
    if write:
        path = write_table(
            frame,
            Path(config.output_dir) / f"{ds.name}_anchor{anchor}_{family}_h{config.hidden}.csv",
            config,
            {"anchor": anchor, "pearson_r": r},
        )
        result.csv_path = str(path)
    return frame, result
