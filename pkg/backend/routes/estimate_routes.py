# backend/routes/estimate_routes.py
import logging

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError

from config import build_sweep_config
from models import EstimateRequest, EstimateResponse, EstimatorConfig, PilotConfig
from services.bench import estimate_instance
from services.errors import ChannelEstimationError, http_status

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/estimate", response_model=EstimateResponse)
def estimate(request: EstimateRequest):
    """Simulate one channel and run the requested estimators on the shared observation"""
    logger.info("=" * 60)
    logger.info("📡 Estimate request: profile=%s snr=%.1f dB seed=%d", request.profile, request.snr_db, request.seed)
    logger.info("🧮 Estimators: %s", ", ".join(request.estimators))
    logger.info("=" * 60)

    try:
        base = build_sweep_config(profile=request.profile)
        scenario = request.scenario or base.scenario
        pilot = PilotConfig(
            n_slots=request.n_slots or base.n_slots,
            n_rf=request.n_rf or base.n_rf,
            snr_db=request.snr_db,
            phase_bits=base.phase_bits,
        )
        estimators = [EstimatorConfig(name=kind, kind=kind) for kind in dict.fromkeys(request.estimators)]
        problem, outcomes = estimate_instance(
            scenario, pilot, request.seed, estimators,
            include_diagnostics=request.include_diagnostics,
        )
    except ValidationError as e:
        logger.warning("❌ Invalid configuration: %s", e)
        raise HTTPException(status_code=422, detail=str(e))
    except ChannelEstimationError as e:
        logger.error("❌ Estimation failed: %s", e)
        raise HTTPException(status_code=http_status(e), detail=str(e))

    for outcome in outcomes:
        logger.info("✅ %-10s NMSE=%s dB (%d iterations, %s)",
                    outcome.name, f"{outcome.nmse_db:.2f}" if outcome.nmse_db is not None else "n/a",
                    outcome.iterations, outcome.status)

    return EstimateResponse(
        profile=request.profile,
        n_antennas=scenario.n_antennas,
        n_measurements=pilot.n_measurements,
        snr_db=pilot.snr_db,
        channel_hash=problem.channel_hash,
        results=outcomes,
    )
