# backend/config.py
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from models import EstimatorConfig, ProfileName, SweepConfig

load_dotenv()

APP_VERSION = "1.0"

# Environment settings
DEFAULT_OUTPUT_DIR = os.getenv("XLMIMO_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("XLMIMO_LOG_LEVEL", "INFO")
DEFAULT_PROFILE = os.getenv("XLMIMO_PROFILE", "desk")
DEFAULT_WORKERS = int(os.getenv("XLMIMO_WORKERS", str(os.cpu_count() or 1)))

# Estimators run when a config does not list its own
DEFAULT_ESTIMATOR_KINDS = ["assbl", "polar_omp", "oracle_ls"]

# Parameter profiles; the paper profile is opt-in because of its runtime
PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {
        "scenario": {"n_antennas": 64, "carrier_freq": 100e9, "n_subarrays": 4, "n_paths": 2},
        "n_slots": 16,
        "n_rf": 4,
        "n_trials": 100,
    },
    "paper": {
        "scenario": {"n_antennas": 256, "carrier_freq": 100e9, "n_subarrays": 4, "n_paths": 2},
        "n_slots": 32,
        "n_rf": 4,
        "n_trials": 10,
    },
}


def default_estimators() -> list:
    return [EstimatorConfig(name=kind, kind=kind) for kind in DEFAULT_ESTIMATOR_KINDS]


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Path) -> dict:
    """Read a JSON sweep config; every key is optional"""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path} must contain a JSON object")
    return data


def build_sweep_config(
    profile: Optional[ProfileName] = None,
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> SweepConfig:
    """
    Profile defaults, then the config file, then explicit overrides.

    ``None`` values in ``overrides`` are ignored so CLI flags that were not
    given leave the file and profile values alone.
    """
    file_data = load_config_file(config_path) if config_path else {}
    overrides = {key: value for key, value in (overrides or {}).items() if value is not None}
    name = overrides.get("profile") or profile or file_data.get("profile") or DEFAULT_PROFILE
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}, expected one of {sorted(PROFILES)}")

    base = _deep_merge(PROFILES[name], {
        "profile": name,
        "estimators": [est.model_dump() for est in default_estimators()],
        "output_dir": DEFAULT_OUTPUT_DIR,
        "workers": DEFAULT_WORKERS,
    })
    merged = _deep_merge(_deep_merge(base, file_data), overrides)
    merged["profile"] = name
    return SweepConfig.model_validate(merged)
