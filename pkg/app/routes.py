"""
API routes for the MDI-QKD analysis service
"""
import logging
import math
import time
from dataclasses import replace
from typing import Any, Dict

from fastapi import APIRouter, HTTPException
from starlette.concurrency import run_in_threadpool

from mdiqkd import get_analysis_manager, health_check as analysis_health_check
from mdiqkd.config import ChannelParams, DetectorParams
from mdiqkd.core import pair_pulse_count_array, validate_all
from mdiqkd.decoy import key_rate
from mdiqkd.io import load_published_key_params, load_published_tables, rate_tables_from_records
from mdiqkd.optics import expected_tallies
from mdiqkd.optimizer import ParameterPoint, optimize
from mdiqkd.tally import from_tables

from .config import settings
from .models import (
    AnalyzeRequest, AnalyzeResponse, ExpectedTalliesRequest, ExpectedTalliesResponse, KeyRateRequest,
    KeyRateResponse, OptimizeRequest, OptimizeResponse, TallyRow,
)

logger = logging.getLogger(__name__)

# Create routers for different endpoint groups
health_router = APIRouter(tags=["Health"])
analysis_router = APIRouter(prefix="/api", tags=["Analysis"])
simulation_router = APIRouter(prefix="/api", tags=["Simulation"])
optimizer_router = APIRouter(prefix="/api", tags=["Optimizer"])


def _finite_or_none(value: float):
    return None if value is None or math.isnan(value) else value


@health_router.get("/health")
async def health_check() -> Dict[str, Any]:
    """Health of the analysis chain plus process settings"""
    try:
        status = analysis_health_check()
    except Exception as e:
        logger.error(f"Health check failed: {str(e)}")
        return {"status": "unhealthy", "error": str(e)}

    status["settings"] = {
        "quadrature_points": settings.QUADRATURE_POINTS,
        "lp_cutoff": settings.LP_CUTOFF,
        "optimizer_max_budget": settings.OPTIMIZER_MAX_BUDGET,
    }
    return status


@analysis_router.post("/key-rate", response_model=KeyRateResponse)
async def compute_key_rate(request: KeyRateRequest):
    """Secure key rate and key length from the formula inputs"""
    report = key_rate(**request.model_dump())
    logger.info(f"Key rate computed: R={report.rate:.4e}, L={report.key_length}")
    return KeyRateResponse(rate=report.rate, key_length=report.key_length, report=report.to_dict())


@analysis_router.post("/analyze", response_model=AnalyzeResponse)
async def analyze_tables(request: AnalyzeRequest):
    """Decoy-state bounds in both modes, LP cross-check and key rate"""
    start_time = time.time()
    protocol = request.protocol.to_config()
    if request.total_pulses is not None:
        protocol = replace(protocol, total_pulses=int(request.total_pulses))
    counts = pair_pulse_count_array(protocol)

    key_params = None
    if request.use_published_tables:
        gains, qbers = load_published_tables()
        key_params = load_published_key_params()["key_rate"]
        source = "api: published tables"
    else:
        gains, qbers = rate_tables_from_records(cell.model_dump() for cell in request.cells)
        source = "api: supplied cells"

    tallies = from_tables(gains, qbers, counts)
    manager = get_analysis_manager(settings.analysis_config())
    report = await run_in_threadpool(
        manager.analyze, tallies, protocol, n_alpha=request.n_alpha, source=source,
        published_key_params=key_params,
    )
    return AnalyzeResponse(report=report.to_dict(), processing_time=time.time() - start_time)


@simulation_router.post("/expected-tallies", response_model=ExpectedTalliesResponse)
async def compute_expected_tallies(request: ExpectedTalliesRequest):
    """Deterministic expected tallies for one parameter set"""
    protocol = request.protocol.to_config()
    channel = ChannelParams(**request.channel.model_dump())
    detector = DetectorParams(**request.detector.model_dump())
    validate_all(protocol, channel, detector).raise_if_invalid()

    points = request.quadrature_points or settings.QUADRATURE_POINTS
    tallies = await run_in_threadpool(expected_tallies, protocol, channel, detector, points)
    rows = [TallyRow(**dict(row, qber=_finite_or_none(row["qber"]))) for row in tallies.rows()]
    return ExpectedTalliesResponse(rows=rows)


@optimizer_router.post("/optimize", response_model=OptimizeResponse)
async def optimize_parameters(request: OptimizeRequest):
    """Parameter search, capped at OPTIMIZER_MAX_BUDGET evaluations"""
    if request.budget > settings.OPTIMIZER_MAX_BUDGET:
        raise HTTPException(
            status_code=400,
            detail=f"Budget {request.budget} exceeds the limit of {settings.OPTIMIZER_MAX_BUDGET}",
        )

    start_time = time.time()
    protocol = request.protocol.to_config()
    result = await run_in_threadpool(
        optimize,
        request.box.to_box(),
        ChannelParams(**request.channel.model_dump()),
        DetectorParams(**request.detector.model_dump()),
        total_pulses=protocol.total_pulses,
        budget=request.budget,
        n_alpha=request.n_alpha,
        quadrature_points=settings.QUADRATURE_POINTS,
        start=ParameterPoint.from_protocol(protocol),
        workers=settings.MC_WORKERS,
    )
    logger.info(f"Optimization finished: R={result.best_rate:.4e} after {result.evaluations} evaluation(s)")
    return OptimizeResponse(
        best_point=result.best_point.to_dict(),
        best_rate=result.best_rate,
        evaluations=result.evaluations,
        processing_time=time.time() - start_time,
    )


__all__ = [
    "health_router",
    "analysis_router",
    "simulation_router",
    "optimizer_router",
]
