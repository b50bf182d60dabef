"""
mpnn_engine.py
--------------
Message-passing networks with normalized sum aggregation, and the closed-form
constants that bound them.

Model
  g^(0)_v = phi0(f(v))
  g^(t)_v = phi_t(g^(t-1)_v, (1/N) * sum_u a_vu g^(t-1)_u)      1 <= t <= L
  output  = psi((1/N) * sum_v g^(L)_v)

Every update function is an ``UpdateLayer``: a stack of affine stages with
ReLU/identity activations applied to the concatenated input [self, aggregate],
plus an optional residual that adds the self part back. Each layer exposes an
upper bound on its Lipschitz constant and its formal bias ||phi(0)||_2; the
recursions below turn those into feature bounds B^t, Lipschitz constants C^t
and the generalization constants of the learning bound.
"""

import logging
import math
from pathlib import Path
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import get_settings
from app.errors import ContractViolation
from app.graph_model import GraphSignal
from app.schemas import CoveringSpec, ModelSpec

logger = logging.getLogger(__name__)

Activation = Literal["relu", "identity"]
Family = Literal["gin_meanpool", "gc_meanpool", "custom"]

POWER_ITERATIONS = 100
POWER_TOL = 1e-10
POWER_RESIDUAL_CAP = 1e-6


def spectral_norm(weight: np.ndarray, exact: bool | None = None) -> float:
    """
    Upper bound on the largest singular value of ``weight``.

    Power iteration on W^T W (100 iterations, stops once the estimate moves by
    less than 1e-10) unless ``exact`` (or DIDM_LIPSCHITZ_NORM=exact) asks for SVD.
    The converged estimate lambda = ||W v||^2 is raised by the Rayleigh residual
    ||W^T W v - lambda v|| and scaled by 1 + 1e-10 for rounding, so it does not
    undershoot the top singular value. A relative residual above 1e-6 means the
    iteration did not converge, and the SVD value is returned instead.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.size == 0 or not np.any(weight):
        return 0.0
    if exact is None:
        exact = get_settings().lipschitz_norm == "exact"
    if exact:
        return float(np.linalg.norm(weight, ord=2))

    v = np.random.default_rng(0).standard_normal(weight.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(POWER_ITERATIONS):
        u = weight @ v
        sigma_new = float(np.linalg.norm(u))
        if sigma_new == 0.0:
            break
        v = weight.T @ (u / sigma_new)
        v /= np.linalg.norm(v)
        if abs(sigma_new - sigma) <= POWER_TOL * max(sigma_new, 1.0):
            sigma = sigma_new
            break
        sigma = sigma_new

    u = weight @ v
    lam = float(u @ u)
    residual = float(np.linalg.norm(weight.T @ u - lam * v))
    if lam == 0.0 or residual > POWER_RESIDUAL_CAP * lam:
        logger.debug("Power iteration unconverged (residual %.3g); using SVD.", residual)
        return float(np.linalg.norm(weight, ord=2))
    return math.sqrt(lam + residual) * (1.0 + POWER_TOL)


def _frozen(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class AffineStage(BaseModel):
    """x -> activation(W x + b)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weight: np.ndarray = Field(..., description="out x in")
    bias: np.ndarray = Field(..., description="out")
    activation: Activation = "identity"

    @field_validator("weight", "bias", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        return _frozen(value)

    @model_validator(mode="after")
    def _shapes(self) -> "AffineStage":
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"weight {self.weight.shape} and bias {self.bias.shape} do not match")
        return self

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weight.T + self.bias
        return np.maximum(z, 0.0) if self.activation == "relu" else z


class UpdateLayer(BaseModel):
    """
    An MLP on row vectors; with ``residual`` the first ``out_dim`` input
    columns (the node's own feature) are added to the MLP output.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    stages: List[AffineStage] = Field(..., min_length=1)
    residual: bool = False

    @model_validator(mode="after")
    def _chain(self) -> "UpdateLayer":
        for prev, nxt in zip(self.stages, self.stages[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"stage dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        if self.residual and self.in_dim < self.out_dim:
            raise ValueError("residual needs in_dim >= out_dim")
        return self

    @property
    def in_dim(self) -> int:
        return self.stages[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.stages[-1].out_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = x
        for stage in self.stages:
            out = stage(out)
        if self.residual:
            out = out + x[..., : self.out_dim]
        return out

    @property
    def lip_bound(self) -> float:
        """Product of stage spectral norms (activations are 1-Lipschitz), +1 for the residual."""
        bound = math.prod(spectral_norm(stage.weight) for stage in self.stages)
        return bound + (1.0 if self.residual else 0.0)

    @property
    def formal_bias(self) -> float:
        return float(np.linalg.norm(self(np.zeros(self.in_dim))))


class MpnnModel(BaseModel):
    """phi^(0) .. phi^(L) with mean-pool readout and an optional readout function psi."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    layers: List[UpdateLayer] = Field(..., min_length=1, description="phi^(0) .. phi^(L)")
    readout: UpdateLayer | None = Field(None, description="psi; None = identity")
    pooling: Literal["mean"] = "mean"
    family: Family = "custom"
    seed: int | None = None

    @model_validator(mode="after")
    def _chain(self) -> "MpnnModel":
        for t in range(1, len(self.layers)):
            want = 2 * self.layers[t - 1].out_dim
            if self.layers[t].in_dim != want:
                raise ValueError(f"layer {t} takes {self.layers[t].in_dim} inputs, expected {want}")
        if self.readout is not None and self.readout.in_dim != self.layers[-1].out_dim:
            raise ValueError("readout input does not match the last layer width")
        return self

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.readout.out_dim if self.readout is not None else self.layers[-1].out_dim


class MpnnOutput(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    layer_features: List[np.ndarray] = Field(..., description="N x d_t per layer t = 0..L")
    graph_output: np.ndarray

    @property
    def node_features(self) -> np.ndarray:
        return self.layer_features[-1]


class LipschitzConstants(BaseModel):
    feature_bounds: List[float] = Field(..., description="B^0 .. B^L")
    lipschitz_bounds: List[float] = Field(..., description="C^0 .. C^L")
    C_phi: float
    C_model: float
    B_phi: float
    B_model: float


class GeneralizationConstants(BaseModel):
    B_1: float
    C_1: float
    C_Theta: float
    B_Theta: float
    C: float
    B: float


class GeneralizationBound(BaseModel):
    log_epsilon: float = Field(..., description="log of xi^-1(N)")
    log_bound: float


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def forward(model: MpnnModel, g: GraphSignal) -> MpnnOutput:
    """Run the model on a graph-signal with normalized sum aggregation (divide by N)."""
    if g.attr_dim != model.input_dim:
        raise ContractViolation(f"graph has attr_dim {g.attr_dim}, model expects {model.input_dim}")
    n = g.node_count
    h = model.layers[0](g.attributes)
    features = [h]
    for layer in model.layers[1:]:
        aggregate = (g.adjacency @ h) / n
        h = layer(np.hstack([h, aggregate]))
        features.append(h)
    pooled = h.mean(axis=0)
    output = model.readout(pooled) if model.readout is not None else pooled
    return MpnnOutput(layer_features=features, graph_output=output)


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _bias(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = 1.0 / math.sqrt(fan_in) if fan_in else 0.0
    return rng.uniform(-limit, limit, size=fan_out)


def _affine(rng, fan_in: int, fan_out: int, activation: Activation) -> AffineStage:
    return AffineStage(
        weight=_glorot(rng, fan_in, fan_out),
        bias=_bias(rng, fan_in, fan_out),
        activation=activation,
    )


def _readout(rng, hidden: int, out_dim: int | None) -> UpdateLayer | None:
    if out_dim is None:
        return None
    return UpdateLayer(stages=[_affine(rng, hidden, out_dim, "identity")])


def init_gin_meanpool(L: int, hidden: int, attr_dim: int, out_dim: int | None = None, seed: int = 0) -> MpnnModel:
    """
    GIN with normalized sum aggregation and eps = 0: each layer is a two-stage
    ReLU MLP on (self + aggregate); layers t >= 2 add a skip connection.
    Batch normalization is the identity here.
    """
    if L < 1:
        raise ContractViolation(f"GIN needs at least one layer, got L={L}")
    rng = np.random.default_rng(seed)
    layers = [UpdateLayer(stages=[_affine(rng, attr_dim, hidden, "relu")])]
    for t in range(1, L + 1):
        first = _affine(rng, hidden, hidden, "relu")
        # (1 + eps) x + aggregate with eps = 0, written on the concatenated input.
        first = AffineStage(
            weight=np.hstack([first.weight, first.weight]),
            bias=first.bias,
            activation="relu",
        )
        second = _affine(rng, hidden, hidden, "relu")
        layers.append(UpdateLayer(stages=[first, second], residual=t >= 2))
    return MpnnModel(
        layers=layers,
        readout=_readout(rng, hidden, out_dim),
        family="gin_meanpool",
        seed=seed,
    )


def init_gc_meanpool(L: int, hidden: int, attr_dim: int, out_dim: int | None = None, seed: int = 0) -> MpnnModel:
    """Linear graph convolution: W_self x + W_nbr aggregate + b; skip connections on t >= 2."""
    if L < 1:
        raise ContractViolation(f"GC needs at least one layer, got L={L}")
    rng = np.random.default_rng(seed)
    layers = [UpdateLayer(stages=[_affine(rng, attr_dim, hidden, "identity")])]
    for t in range(1, L + 1):
        w_self = _glorot(rng, hidden, hidden)
        w_nbr = _glorot(rng, hidden, hidden)
        stage = AffineStage(
            weight=np.hstack([w_self, w_nbr]),
            bias=_bias(rng, 2 * hidden, hidden),
            activation="identity",
        )
        layers.append(UpdateLayer(stages=[stage], residual=t >= 2))
    return MpnnModel(
        layers=layers,
        readout=_readout(rng, hidden, out_dim),
        family="gc_meanpool",
        seed=seed,
    )


def build_model(spec: ModelSpec) -> MpnnModel:
    init = init_gin_meanpool if spec.family == "gin" else init_gc_meanpool
    return init(spec.layers, spec.hidden, spec.attr_dim, spec.out_dim, spec.seed)


def save_weights(model: MpnnModel, path) -> Path:
    """Dump every stage as ``layer{t}_stage{k}_{weight,bias}`` arrays into an .npz sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    named = [(f"layer{t}", layer) for t, layer in enumerate(model.layers)]
    if model.readout is not None:
        named.append(("readout", model.readout))
    for name, layer in named:
        for k, stage in enumerate(layer.stages):
            arrays[f"{name}_stage{k}_weight"] = stage.weight
            arrays[f"{name}_stage{k}_bias"] = stage.bias
    np.savez(path, **arrays)
    return path


def load_weights(model: MpnnModel, path) -> MpnnModel:
    """Rebuild ``model`` with the arrays from a sidecar written by ``save_weights``."""
    with np.load(path) as data:
        def _reload(name: str, layer: UpdateLayer) -> UpdateLayer:
            stages = [
                AffineStage(
                    weight=data[f"{name}_stage{k}_weight"],
                    bias=data[f"{name}_stage{k}_bias"],
                    activation=stage.activation,
                )
                for k, stage in enumerate(layer.stages)
            ]
            return UpdateLayer(stages=stages, residual=layer.residual)

        layers = [_reload(f"layer{t}", layer) for t, layer in enumerate(model.layers)]
        readout = _reload("readout", model.readout) if model.readout is not None else None
    return MpnnModel(layers=layers, readout=readout, family=model.family, seed=model.seed)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def constants_from_bounds(
    lips: List[float],
    biases: List[float],
    readout_lip: float,
    readout_bias: float,
    r: float,
) -> LipschitzConstants:
    """
    Feature-bound and Lipschitz recursions for layer bounds ``lips[t]`` and
    formal biases ``biases[t]``, t = 0..L:

        B^0 = r l_0 + b_0              B^t = 2 l_t B^{t-1} + b_t
        C^0 = l_0                      C^t = 2 l_t (B^{t-1} + C^{t-1})
        C_model = l_psi (B^L + C^L)    B_model = l_psi B^L + b_psi
    """
    if len(lips) != len(biases) or not lips:
        raise ContractViolation("need one Lipschitz bound and one bias per layer")
    B = [r * lips[0] + biases[0]]
    C = [lips[0]]
    for lip, bias in zip(lips[1:], biases[1:]):
        C.append(2.0 * lip * (B[-1] + C[-1]))
        B.append(2.0 * lip * B[-1] + bias)
    return LipschitzConstants(
        feature_bounds=B,
        lipschitz_bounds=C,
        C_phi=C[-1],
        C_model=readout_lip * (B[-1] + C[-1]),
        B_phi=B[-1],
        B_model=readout_lip * B[-1] + readout_bias,
    )


def lipschitz_constants(model: MpnnModel, r: float) -> LipschitzConstants:
    """Plug each layer's ``lip_bound`` and ``formal_bias`` into the recursions."""
    if r <= 0:
        raise ContractViolation(f"attribute radius must be positive, got {r}")
    readout_lip = model.readout.lip_bound if model.readout is not None else 1.0
    readout_bias = model.readout.formal_bias if model.readout is not None else 0.0
    return constants_from_bounds(
        [layer.lip_bound for layer in model.layers],
        [layer.formal_bias for layer in model.layers],
        readout_lip,
        readout_bias,
        r,
    )


def generalization_constants(
    A1: float,
    A2: float,
    L: int,
    r: float,
    C_loss: float,
    loss_at_zero: float,
) -> GeneralizationConstants:
    """
    Constants of the uniform generalization bound for every L-layer model whose
    update/readout functions have Lipschitz bound <= A1 and formal bias <= A2.
    """
    if min(A1, A2, r, C_loss) < 0:
        raise ContractViolation("A1, A2, r and C_loss must be nonnegative")
    base = constants_from_bounds([A1] * (L + 1), [A2] * (L + 1), A1, A2, r)
    B_1, C_1 = base.B_phi, base.C_phi
    C_theta = A1 * (B_1 + C_1)
    B_theta = A1 * B_1 + A2
    return GeneralizationConstants(
        B_1=B_1,
        C_1=C_1,
        C_Theta=C_theta,
        B_Theta=B_theta,
        C=C_loss * max(C_theta, 1.0),
        B=C_loss * (B_theta + 1.0) + abs(loss_at_zero),
    )


def log_covering_number(eps: float, covering: CoveringSpec) -> float:
    """
    log kappa(eps) for kappa(eps) = 2^(k^2) * 2^K with k = ceil(2^(9c / (4 eps^2))).

    Returns ``inf`` once kappa overflows double precision even in log space.
    """
    t = 9.0 * covering.c / (4.0 * eps * eps)
    if t < 50.0:
        log_k = math.log(math.ceil(2.0 ** t))
    else:
        log_k = t * math.log(2.0)  # ceil is invisible at this size
    log_k_sq = 2.0 * log_k
    if log_k_sq > 700.0:
        return math.inf
    return math.exp(log_k_sq) * math.log(2.0) + covering.num_classes * math.log(2.0)


def log_xi(eps: float, covering: CoveringSpec) -> float:
    """log xi(eps) with xi(eps) = kappa^2 log(kappa) / eps^2."""
    log_kappa = log_covering_number(eps, covering)
    if math.isinf(log_kappa):
        return math.inf
    return 2.0 * log_kappa + math.log(log_kappa) - 2.0 * math.log(eps)


def generalization_bound_log(
    N: int,
    p: float,
    C: float,
    B: float,
    covering: CoveringSpec,
    iterations: int = 200,
) -> GeneralizationBound:
    """
    log of  xi^-1(N) * (2C + B / sqrt(2) * (1 + sqrt(log(2/p)))).

    xi is strictly decreasing, so xi^-1(N) = inf{eps : xi(eps) <= N} is found by
    bisection on log(eps). The value is far too large to be informative for
    realistic N; only its monotonicity in N and p is meaningful.
    """
    if N < 1 or not 0.0 < p < 1.0:
        raise ContractViolation("need N >= 1 and 0 < p < 1")
    target = math.log(N)

    lo, hi = -2.0, 2.0
    while log_xi(math.exp(lo), covering) <= target:
        lo -= 1.0
    while log_xi(math.exp(hi), covering) > target:
        hi += 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if log_xi(math.exp(mid), covering) > target:
            lo = mid
        else:
            hi = mid

    factor = 2.0 * C + B / math.sqrt(2.0) * (1.0 + math.sqrt(math.log(2.0 / p)))
    if factor <= 0.0:
        return GeneralizationBound(log_epsilon=hi, log_bound=-math.inf)
    return GeneralizationBound(log_epsilon=hi, log_bound=hi + math.log(factor))
