# backend/routes/sweep_routes.py
import json
import logging
from pathlib import Path
from typing import Optional

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError

from config import DEFAULT_OUTPUT_DIR, build_sweep_config
from models import SweepRequest, SweepResponse
from services.bench import sweep
from services.errors import ChannelEstimationError, http_status

logger = logging.getLogger(__name__)

router = APIRouter()


def resolve_output_dir(requested: Optional[Path]) -> Path:
    """Place a client-chosen output directory under DEFAULT_OUTPUT_DIR"""
    root = Path(DEFAULT_OUTPUT_DIR).resolve()
    if requested is None:
        return root
    target = (root / requested).resolve()
    if target != root and root not in target.parents:
        logger.warning("❌ Rejected output_dir outside %s: %s", root, requested)
        raise HTTPException(status_code=400, detail=f"output_dir must stay inside {root}")
    return target


@router.post("/sweep", response_model=SweepResponse)
def run_sweep(request: SweepRequest):
    """Run a Monte Carlo sweep synchronously and return the aggregated rows"""
    output_dir = resolve_output_dir(request.output_dir)
    try:
        cfg = build_sweep_config(
            profile=request.profile,
            overrides={
                "n_trials": request.n_trials,
                "snr_grid": request.snr_grid,
                "pilot_grid": request.pilot_grid,
                "master_seed": request.seed,
                "output_dir": output_dir,
                "serial": request.serial,
            },
        )
        result = sweep(cfg, request.axis)
    except ValidationError as e:
        logger.warning("❌ Invalid sweep configuration: %s", e)
        raise HTTPException(status_code=422, detail=str(e))
    except ChannelEstimationError as e:
        logger.error("❌ Sweep failed: %s", e)
        raise HTTPException(status_code=http_status(e), detail=str(e))

    return SweepResponse(
        axis=result.axis,
        trials_csv=str(result.trials_csv),
        summary_csv=str(result.summary_csv),
        plot_script=str(result.plot_script),
        manifest=str(result.manifest),
        # NaN means every trial of a point failed; JSON carries it as null
        summary=json.loads(result.summary.to_json(orient="records")),
    )
