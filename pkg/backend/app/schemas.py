"""
Pydantic schemas that define the wire formats: graph JSON files, model spec
JSON files, and the request/response bodies of the HTTP service.

Numeric domain types (GraphSignal, DiscreteMeasure, MpnnModel, ...) live in
their own modules; these models only carry plain JSON-compatible data.
"""

from typing import Annotated, List, Literal

from pydantic import BaseModel, Field, NonNegativeInt, model_validator

UnitWeight = Annotated[float, Field(ge=0.0, le=1.0)]
FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]


class GraphJson(BaseModel):
    """
    On-disk graph format.

    Exactly one of ``adjacency`` (weighted, symmetric, entries in [0, 1]) or
    ``edges`` (0-based undirected pairs, implying a 0/1 adjacency) is given.
    ``attributes`` is either empty (no signal) or has one row per node.
    """

    n: int = Field(..., ge=1, description="Number of nodes")
    adjacency: List[List[UnitWeight]] | None = Field(None, description="n x n weights")
    edges: List[tuple[NonNegativeInt, NonNegativeInt]] | None = Field(
        None, description="Undirected 0-based edge list"
    )
    attributes: List[List[FiniteFloat]] = Field(
        default_factory=list, description="Per-node signal rows"
    )

    @model_validator(mode="after")
    def _check_shape(self) -> "GraphJson":
        if (self.adjacency is None) == (self.edges is None):
            raise ValueError("exactly one of 'adjacency' or 'edges' must be given")

        if self.adjacency is not None:
            if len(self.adjacency) != self.n or any(len(row) != self.n for row in self.adjacency):
                raise ValueError(f"adjacency must be {self.n} x {self.n}")
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    if self.adjacency[i][j] != self.adjacency[j][i]:
                        raise ValueError(
                            f"adjacency is not symmetric at adjacency[{i}][{j}]"
                        )
        else:
            for k, (i, j) in enumerate(self.edges):
                if i >= self.n or j >= self.n:
                    raise ValueError(f"edges[{k}] = ({i}, {j}) references a node >= n={self.n}")

        if self.attributes:
            if len(self.attributes) != self.n:
                raise ValueError(f"attributes must have {self.n} rows, got {len(self.attributes)}")
            widths = {len(row) for row in self.attributes}
            if len(widths) > 1:
                raise ValueError(f"attribute rows have differing lengths {sorted(widths)}")
        return self


class ModelSpec(BaseModel):
    """Model spec file: which family to initialise and with which dimensions/seed."""

    family: Literal["gin", "gc"] = Field(..., description="gin = GIN_meanpool, gc = GC_meanpool")
    layers: int = Field(..., ge=1, description="Number of message-passing layers L")
    hidden: int = Field(..., ge=1, description="Hidden width")
    attr_dim: int = Field(..., ge=0, description="Input attribute dimension")
    out_dim: int | None = Field(None, ge=1, description="Readout output dim; None = no readout")
    seed: int = Field(0, description="Weight initialisation seed")


class CoveringSpec(BaseModel):
    """Parameters of the covering-number estimate kappa(eps) = 2^(k^2) * 2^K."""

    c: float = Field(..., gt=1.0, description="Regularity constant c > 1")
    num_classes: int = Field(0, ge=0, description="K, the label factor of the product space")


# ── HTTP bodies ───────────────────────────────────────────────────────────────

class DistanceRequest(BaseModel):
    left: GraphJson
    right: GraphJson
    depth: int = Field(2, ge=0, le=8, description="Metric depth L")


class DistanceResponse(BaseModel):
    distance: float = Field(..., description="delta_DIDM^L(left, right)")
    depth: int
    cost_matrix: List[List[float]] = Field(..., description="C_L between the two node sets")


class ForwardRequest(BaseModel):
    model: ModelSpec
    graph: GraphJson


class ForwardResponse(BaseModel):
    node_features: List[List[float]]
    graph_output: List[float]


class ConstantsRequest(BaseModel):
    model: ModelSpec
    radius: float = Field(..., gt=0.0, description="Attribute radius r")


class ConstantsResponse(BaseModel):
    feature_bounds: List[float] = Field(..., description="B^0 .. B^L")
    lipschitz_bounds: List[float] = Field(..., description="C^0 .. C^L")
    C_phi: float
    C_model: float
    B_phi: float
    B_model: float


class GeneralizationRequest(BaseModel):
    A1: float = Field(..., ge=0.0)
    A2: float = Field(..., ge=0.0)
    depth: int = Field(..., ge=0)
    radius: float = Field(..., gt=0.0)
    C_loss: float = Field(1.0, ge=0.0)
    loss_at_zero: float = Field(0.0)
    samples: int = Field(..., ge=1)
    confidence: float = Field(..., gt=0.0, lt=1.0, description="Failure probability p")
    covering: CoveringSpec


class GeneralizationResponse(BaseModel):
    B_1: float
    C_1: float
    C_Theta: float
    B_Theta: float
    C: float
    B: float
    log_epsilon: float = Field(..., description="log of xi^-1(N)")
    log_bound: float = Field(..., description="log of the right-hand side of the bound")
