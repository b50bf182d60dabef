"""
Exact discrete optimal transport, balanced and unbalanced.

The unbalanced value between measures mu and nu (with ||mu|| <= ||nu||) is

    min over couplings gamma with row sums = mu and column sums <= nu
        of  sum(gamma * cost)  +  (||nu|| - ||mu||)

and is symmetric: when ||mu|| > ||nu|| the roles are swapped and the cost
transposed. It is reduced to a balanced problem by giving the lighter side one
zero-cost reservoir point holding the mass gap; the balanced problem is solved
exactly by POT's network simplex (``ot.emd``).
"""

import logging
from pathlib import Path

import numpy as np
import ot
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.errors import ContractViolation, InfeasibleTransport, SolverError

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
MASS_CAP = 1.0 + 1e-12
MAX_SIMPLEX_ITER = 1_000_000


class DiscreteMeasure(BaseModel):
    """Nonnegative weights over an indexed support, total mass at most one."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray = Field(..., description="One nonnegative weight per support point")

    def __init__(self, **data) -> None:
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise ContractViolation(exc.errors()[0]["msg"]) from exc

    @field_validator("weights", mode="before")
    @classmethod
    def _check_weights(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("measure weights must be finite")
        if np.any(arr < 0):
            raise ContractViolation(f"measure weights must be nonnegative, got min {arr.min()}")
        if arr.sum() > MASS_CAP:
            raise ContractViolation(f"measure mass {arr.sum()!r} exceeds 1")
        arr.setflags(write=False)
        return arr

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def uniform(cls, n: int) -> "DiscreteMeasure":
        return cls(weights=np.full(n, 1.0 / n))

    @classmethod
    def zero(cls, n: int) -> "DiscreteMeasure":
        return cls(weights=np.zeros(n))

    @classmethod
    def point_mass(cls, n: int, index: int, mass: float = 1.0) -> "DiscreteMeasure":
        weights = np.zeros(n)
        weights[index] = mass
        return cls(weights=weights)


class TransportPlan(BaseModel):
    """A coupling matrix together with the objective value it certifies."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    plan: np.ndarray = Field(..., description="m x n nonnegative coupling")
    objective: float


def _check_cost(cost, m: int, n: int) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (m, n):
        raise ContractViolation(f"cost has shape {cost.shape}, expected ({m}, {n})")
    if not np.all(np.isfinite(cost)):
        raise ContractViolation("cost entries must be finite")
    return cost


def _emd(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Balanced network simplex on positive weights; raises SolverError unless optimal."""
    plan, log = ot.emd(
        np.ascontiguousarray(a),
        np.ascontiguousarray(b),
        np.ascontiguousarray(cost),
        numItermax=MAX_SIMPLEX_ITER,
        log=True,
    )
    if log.get("result_code", 1) != 1:
        raise SolverError(f"network simplex did not reach optimality: {log.get('warning')}")
    return plan


def _balanced(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    plan = np.zeros(cost.shape)
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    if rows.size == 0 or cols.size == 0:
        return plan, 0.0
    sub = cost[np.ix_(rows, cols)]
    plan[np.ix_(rows, cols)] = _emd(a[rows], b[cols], sub)
    return plan, float(np.sum(plan[np.ix_(rows, cols)] * sub))


def _unbalanced(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    mass_a, mass_b = a.sum(), b.sum()
    if mass_a > mass_b:
        plan_t, value = _unbalanced(cost.T, b, a)
        return plan_t.T, value

    gap = float(mass_b - mass_a)
    plan = np.zeros(cost.shape)
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    if rows.size == 0:
        return plan, gap

    sub = cost[np.ix_(rows, cols)]
    source = a[rows]
    if gap > 0.0:
        # Reservoir point: absorbs the surplus target mass at zero cost.
        source = np.append(source, gap)
        sub = np.vstack([sub, np.zeros(cols.size)])
    gamma = _emd(source, b[cols], sub)[: rows.size]
    plan[np.ix_(rows, cols)] = gamma
    return plan, float(np.sum(gamma * sub[: rows.size])) + gap


def unbalanced_ot_value(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Objective of the unbalanced problem on raw arrays (no validation; hot path)."""
    if not a.size or not b.size or a.sum() == 0.0 or b.sum() == 0.0:
        return float(abs(a.sum() - b.sum()))
    return _unbalanced(cost, a, b)[1]


def solve_balanced_ot(cost, mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """
    Exact balanced optimal transport.

    Raises:
        ContractViolation: The two masses differ by more than 1e-9.
        InfeasibleTransport: One side has an empty support but positive mass on the other.
    """
    cost = _check_cost(cost, mu.size, nu.size)
    if abs(mu.total_mass - nu.total_mass) > FEASIBILITY_TOL:
        raise ContractViolation(
            f"balanced transport needs equal masses, got {mu.total_mass!r} and {nu.total_mass!r}"
        )
    if (mu.size == 0 and nu.total_mass > 0) or (nu.size == 0 and mu.total_mass > 0):
        raise InfeasibleTransport("empty support on one side with positive mass on the other")
    plan, value = _balanced(cost, mu.weights, nu.weights)
    return TransportPlan(plan=plan, objective=value)


def solve_unbalanced_ot(cost, mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """
    Exact unbalanced optimal transport: transport cost plus the mass difference.

    If either measure is zero, the plan is all zeros and the objective is the
    other measure's mass.
    """
    cost = _check_cost(cost, mu.size, nu.size)
    plan, value = _unbalanced(cost, mu.weights, nu.weights)
    logger.debug("unbalanced OT %dx%d -> %.17g", mu.size, nu.size, value)
    return TransportPlan(plan=plan, objective=value)


def check_plan_feasibility(
    plan: TransportPlan,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    balanced: bool,
) -> list[str]:
    """
    List every violated marginal constraint (empty list = feasible within 1e-9).

    For unbalanced plans the lighter measure's marginal must be met exactly and
    the heavier one's must dominate.
    """
    gamma = plan.plan
    if gamma.shape != (mu.size, nu.size):
        return [f"plan has shape {gamma.shape}, expected ({mu.size}, {nu.size})"]

    violations: list[str] = []
    for i, j in np.argwhere(gamma < -FEASIBILITY_TOL):
        violations.append(f"entry ({i}, {j}) is negative: {gamma[i, j]!r}")

    rows, cols = gamma.sum(axis=1), gamma.sum(axis=0)
    rows_exact = balanced or mu.total_mass <= nu.total_mass
    cols_exact = balanced or nu.total_mass <= mu.total_mass

    for i, (got, want) in enumerate(zip(rows, mu.weights)):
        if rows_exact and abs(got - want) > FEASIBILITY_TOL:
            violations.append(f"row {i}: sum {got!r} != source weight {want!r}")
        elif not rows_exact and got > want + FEASIBILITY_TOL:
            violations.append(f"row {i}: sum {got!r} exceeds weight {want!r}")
    for j, (got, want) in enumerate(zip(cols, nu.weights)):
        if cols_exact and abs(got - want) > FEASIBILITY_TOL:
            violations.append(f"column {j}: sum {got!r} != target weight {want!r}")
        elif not cols_exact and got > want + FEASIBILITY_TOL:
            violations.append(f"column {j}: sum {got!r} exceeds weight {want!r}")
    return violations


def dump_plan_csv(plan: TransportPlan, path) -> None:
    """Debug dump: the coupling matrix with 17 significant digits, objective in a comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# objective: {plan.objective:.17g}\n")
        pd.DataFrame(plan.plan).to_csv(fh, index=False, float_format="%.17g")
