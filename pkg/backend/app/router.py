"""
API router for the DIDM distance service.

  POST /api/v1/distance          distance between two graph-signals at depth L
  POST /api/v1/forward           run a seeded MPNN on one graph-signal
  POST /api/v1/model-constants   feature bounds and Lipschitz constants of a model
  POST /api/v1/generalization    generalization constants and the log bound

Bad input surfaces as 422; solver failures as 500.
"""

import logging
from typing import Callable, TypeVar

import numpy as np
from fastapi import APIRouter, HTTPException, status

from app.didm_metric import build_cost_stack
from app.graph_model import GraphSignal, graph_from_json
from app.mpnn_engine import (
    build_model,
    forward,
    generalization_bound_log,
    generalization_constants,
    lipschitz_constants,
)
from app.ot_solver import unbalanced_ot_value
from app.schemas import (
    ConstantsRequest,
    ConstantsResponse,
    DistanceRequest,
    DistanceResponse,
    ForwardRequest,
    ForwardResponse,
    GeneralizationRequest,
    GeneralizationResponse,
    GraphJson,
)

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/v1", tags=["DIDM"])

T = TypeVar("T")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _guarded(what: str, fn: Callable[[], T]) -> T:
    """Run ``fn``; ValueError becomes 422, RuntimeError becomes 500."""
    try:
        return fn()
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
    except RuntimeError as exc:
        logger.exception("%s failed.", what)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"{what} failed: {exc}",
        ) from exc


def _graph(doc: GraphJson) -> GraphSignal:
    return _guarded("graph conversion", lambda: graph_from_json(doc))


# ---------------------------------------------------------------------------
# POST /api/v1/distance
# ---------------------------------------------------------------------------

@router.post(
    "/distance",
    response_model=DistanceResponse,
    status_code=status.HTTP_200_OK,
    summary="DIDM mover's distance between two graphs",
)
def distance(request: DistanceRequest) -> DistanceResponse:
    left, right = _graph(request.left), _graph(request.right)

    def _compute() -> DistanceResponse:
        cost = build_cost_stack(left, right, request.depth).final
        value = unbalanced_ot_value(
            cost,
            np.full(left.node_count, 1.0 / left.node_count),
            np.full(right.node_count, 1.0 / right.node_count),
        )
        return DistanceResponse(distance=value, depth=request.depth, cost_matrix=cost.tolist())

    result = _guarded("distance", _compute)
    logger.info(
        "distance: %d vs %d nodes, depth %d -> %.6g",
        left.node_count, right.node_count, request.depth, result.distance,
    )
    return result


# ---------------------------------------------------------------------------
# POST /api/v1/forward
# ---------------------------------------------------------------------------

@router.post(
    "/forward",
    response_model=ForwardResponse,
    summary="Run a seeded MPNN on a graph",
)
def run_forward(request: ForwardRequest) -> ForwardResponse:
    graph = _graph(request.graph)
    output = _guarded("forward pass", lambda: forward(build_model(request.model), graph))
    return ForwardResponse(
        node_features=output.node_features.tolist(),
        graph_output=output.graph_output.tolist(),
    )


# ---------------------------------------------------------------------------
# POST /api/v1/model-constants
# ---------------------------------------------------------------------------

@router.post(
    "/model-constants",
    response_model=ConstantsResponse,
    summary="Feature bounds and Lipschitz constant of a seeded MPNN",
)
def model_constants(request: ConstantsRequest) -> ConstantsResponse:
    constants = _guarded(
        "constant computation",
        lambda: lipschitz_constants(build_model(request.model), request.radius),
    )
    return ConstantsResponse(**constants.model_dump())


# ---------------------------------------------------------------------------
# POST /api/v1/generalization
# ---------------------------------------------------------------------------

@router.post(
    "/generalization",
    response_model=GeneralizationResponse,
    summary="Generalization constants and the log of the uniform bound",
)
def generalization(request: GeneralizationRequest) -> GeneralizationResponse:
    def _compute() -> GeneralizationResponse:
        gen = generalization_constants(
            request.A1, request.A2, request.depth, request.radius, request.C_loss, request.loss_at_zero
        )
        bound = generalization_bound_log(request.samples, request.confidence, gen.C, gen.B, request.covering)
        return GeneralizationResponse(**gen.model_dump(), **bound.model_dump())

    return _guarded("generalization bound", _compute)
