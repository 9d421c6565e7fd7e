# backend/services/bench.py
"""
Monte Carlo harness: paired trials, NMSE, SNR / pilot-length sweeps and
their CSV, plot-script and manifest outputs.

Every trial draws its channel, combiner and noise from counter-based
(Philox) streams keyed by the master seed and the trial coordinates, so all
estimators in a trial see the same observation and adding estimators or
axis points never perturbs existing draws.
"""
import hashlib
import json
import logging
import math
import platform
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy

from models import (
    AssblConfig,
    EstimatorConfig,
    EstimatorOutcome,
    PilotConfig,
    ScenarioConfig,
    SweepConfig,
    TrialRecord,
)
from services.array_model import (
    ArrayGeometry,
    ChannelRealization,
    SubArrayLayout,
    sample_paths,
    synthesize_channel,
)
from services.assbl import AssblResult, assbl_estimate
from services.baselines import default_omp_iterations, oracle_ls, polar_omp
from services.dictionary import PolarDictionary, build_polar_dictionary
from services.errors import (
    ChannelEstimationError,
    ConfigurationError,
    DomainError,
    OutputDirectoryError,
)
from services.measurement import Combiner, Observation, generate_combiner, observe

logger = logging.getLogger(__name__)

NMSE_FLOOR_DB = -150.0

TRIALS_CSV = "trials.csv"
SUMMARY_CSV = "summary.csv"
TIMINGS_CSV = "timings.csv"
PLOT_SCRIPT = "plot_nmse.py"
MANIFEST_JSON = "manifest.json"

TRIAL_COLUMNS = [
    "trial_id", "estimator", "snr_db", "t_p",
    "nmse_linear", "nmse_db", "wall_ms", "iters",
    "status", "channel_hash",
]
SUMMARY_COLUMNS = [
    "estimator", "snr_db", "t_p", "n_trials", "n_failed",
    "nmse_linear", "nmse_db", "nmse_db_median", "nmse_db_p90",
]

# Stream tags inside a trial's seed key
_CHANNEL_STREAM, _COMBINER_STREAM, _NOISE_STREAM = 0, 1, 2


# ---------------------------------------------------------------------------
# Metric
# ---------------------------------------------------------------------------

def to_db(linear: float) -> float:
    """10 log10, floored at NMSE_FLOOR_DB; NaN stays NaN"""
    if not math.isfinite(linear):
        return float("nan")
    if linear <= 0:
        return NMSE_FLOOR_DB
    return max(10 * math.log10(linear), NMSE_FLOOR_DB)


def nmse(h_true: np.ndarray, h_est: np.ndarray) -> Tuple[float, float]:
    """||h - h_est||^2 / ||h||^2, linear and in dB"""
    power = float(np.vdot(h_true, h_true).real)
    if power == 0.0:
        raise DomainError("NMSE is undefined for a zero true channel")
    if not np.all(np.isfinite(h_est)):
        raise DomainError("estimate contains non-finite entries")
    error = h_true - h_est
    linear = float(np.vdot(error, error).real) / power
    return linear, to_db(linear)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def channel_fingerprint(h: np.ndarray) -> str:
    """Short hash identifying a channel vector"""
    return hashlib.md5(np.ascontiguousarray(h).tobytes()).hexdigest()[:8]


def snr_key(snr_db: float) -> int:
    """Nonnegative integer standing for an SNR value inside a seed key"""
    return int(hashlib.md5(repr(float(snr_db)).encode()).hexdigest()[:8], 16)


def trial_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=key)))


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrialProblem:
    """One simulated instance shared by every estimator of a trial"""
    trial_id: int
    scenario: ScenarioConfig
    pilot: PilotConfig
    geom: ArrayGeometry
    layout: SubArrayLayout
    channel: ChannelRealization
    combiner: Combiner
    observation: Observation

    @property
    def channel_hash(self) -> str:
        return channel_fingerprint(self.channel.h)


@dataclass(eq=False)
class EstimatorOutput:
    h_hat: np.ndarray
    iterations: int
    assbl: Optional[AssblResult] = None


class PolarDictionaryCache:
    """Polar dictionaries depend only on geometry and rule; share them across trials"""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: Dict[tuple, PolarDictionary] = {}

    def get(self, geom: ArrayGeometry, n_angles: int, est: EstimatorConfig) -> PolarDictionary:
        key = (geom, n_angles, est.polar_rule)
        with self._lock:
            if key not in self._items:
                self._items[key] = build_polar_dictionary(geom, n_angles, est.polar_rule)
            return self._items[key]


def build_problem(scenario: ScenarioConfig, pilot: PilotConfig, master_seed: int, trial_id: int) -> TrialProblem:
    """Draw paths, channel, combiner and noise for one trial"""
    geom = ArrayGeometry.from_scenario(scenario)
    layout = SubArrayLayout.from_scenario(scenario)

    paths = sample_paths(trial_rng(master_seed, trial_id, _CHANNEL_STREAM), scenario.n_paths, scenario)
    channel = synthesize_channel(geom, layout, paths, exact=scenario.exact_distance)
    combiner = generate_combiner(
        trial_rng(master_seed, trial_id, _COMBINER_STREAM, pilot.n_slots), geom, pilot
    )
    noise_rng = trial_rng(master_seed, trial_id, _NOISE_STREAM, pilot.n_slots, snr_key(pilot.snr_db))
    observation = observe(channel, combiner, pilot, noise_rng)
    return TrialProblem(
        trial_id=trial_id,
        scenario=scenario,
        pilot=pilot,
        geom=geom,
        layout=layout,
        channel=channel,
        combiner=combiner,
        observation=observation,
    )


def assbl_variant(est: EstimatorConfig) -> AssblConfig:
    """ASSBL settings for the structured-SBL estimator kinds"""
    if est.kind == "ssbl_fixed":
        return est.assbl.model_copy(update={"refine": False})
    if est.kind == "dft_ssbl":
        return est.assbl.model_copy(update={"refine": False, "far_field": True})
    return est.assbl


def run_estimator(
    est: EstimatorConfig,
    problem: TrialProblem,
    cache: Optional[PolarDictionaryCache] = None,
) -> EstimatorOutput:
    y = problem.observation.y
    if est.kind in ("assbl", "ssbl_fixed", "dft_ssbl"):
        result = assbl_estimate(y, problem.combiner, problem.geom, problem.layout, assbl_variant(est))
        return EstimatorOutput(h_hat=result.h_hat, iterations=result.iterations, assbl=result)

    if est.kind == "polar_omp":
        cache = cache or PolarDictionaryCache()
        pdict = cache.get(problem.geom, est.n_angles or problem.geom.n_antennas, est)
        n_iters = est.n_iters or default_omp_iterations(problem.scenario)
        h_hat = polar_omp(y, problem.combiner, pdict, problem.layout, n_iters)
        return EstimatorOutput(h_hat=h_hat, iterations=n_iters)

    if est.kind == "oracle_ls":
        h_hat = oracle_ls(
            y, problem.combiner, problem.channel, problem.geom, problem.layout,
            exact=problem.scenario.exact_distance,
        )
        return EstimatorOutput(h_hat=h_hat, iterations=1)

    raise ConfigurationError(f"unknown estimator kind {est.kind!r}")


def evaluate_estimators(
    problem: TrialProblem,
    estimators: List[EstimatorConfig],
    cache: Optional[PolarDictionaryCache] = None,
) -> List[Tuple[TrialRecord, Optional[EstimatorOutput]]]:
    """Run every estimator on the shared problem; failures become flagged records"""
    rows = []
    channel_hash = problem.channel_hash
    for est in estimators:
        start = time.perf_counter()
        output = None
        try:
            output = run_estimator(est, problem, cache)
            linear, db = nmse(problem.channel.h, output.h_hat)
            status = "ok"
        except (ChannelEstimationError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("❌ %s failed on trial %d: %s", est.name, problem.trial_id, exc)
            linear, db, status = float("nan"), float("nan"), type(exc).__name__
        wall_ms = (time.perf_counter() - start) * 1000

        rows.append((TrialRecord(
            trial_id=problem.trial_id,
            estimator=est.name,
            snr_db=problem.pilot.snr_db,
            t_p=problem.pilot.n_slots,
            nmse_linear=linear,
            nmse_db=db,
            wall_ms=wall_ms,
            iters=output.iterations if output is not None else 0,
            status=status,
            channel_hash=channel_hash,
        ), output))
    return rows


def run_trial(
    cfg: SweepConfig,
    trial_id: int,
    snr_db: float,
    t_p: int,
    cache: Optional[PolarDictionaryCache] = None,
) -> List[TrialRecord]:
    """One paired trial: every configured estimator on the same channel, combiner and noise"""
    pilot = PilotConfig(n_slots=t_p, n_rf=cfg.n_rf, snr_db=snr_db, phase_bits=cfg.phase_bits)
    problem = build_problem(cfg.scenario, pilot, cfg.master_seed, trial_id)
    return [record for record, _ in evaluate_estimators(problem, cfg.estimators, cache)]


def estimate_instance(
    scenario: ScenarioConfig,
    pilot: PilotConfig,
    seed: int,
    estimators: List[EstimatorConfig],
    include_diagnostics: bool = True,
) -> Tuple[TrialProblem, List[EstimatorOutcome]]:
    """Simulate one instance and summarize every estimator on it"""
    if not estimators:
        raise ConfigurationError("at least one estimator is required")
    problem = build_problem(scenario, pilot, seed, trial_id=0)
    outcomes = []
    for record, output in evaluate_estimators(problem, estimators):
        outcome = EstimatorOutcome(
            name=record.estimator,
            nmse_linear=None if record.flagged else record.nmse_linear,
            nmse_db=None if record.flagged else record.nmse_db,
            iterations=record.iters,
            status=record.status,
            wall_ms=record.wall_ms,
        )
        if output is not None and output.assbl is not None:
            # far-field blocks have no finite distance
            outcome.refined_distances = [
                d if math.isfinite(d) else None for d in output.assbl.strongest_distances(scenario.n_paths)
            ]
            if include_diagnostics:
                outcome.diagnostics = output.assbl.diagnostics
        outcomes.append(outcome)
    return problem, outcomes


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    axis: str
    trials_csv: Path
    summary_csv: Path
    plot_script: Path
    manifest: Path
    summary: pd.DataFrame = field(repr=False)


def prepare_output_dir(path: Path) -> Path:
    """Create the directory and prove it is writable before any computation"""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise OutputDirectoryError(f"cannot write to output directory {path}: {exc}") from exc
    return path


def aggregate(trials: pd.DataFrame) -> pd.DataFrame:
    """Mean linear NMSE (and its dB value) per estimator and axis point, over successful trials"""
    keys = ["estimator", "snr_db", "t_p"]
    counts = trials.groupby(keys).agg(
        n_trials=("trial_id", "size"),
        n_failed=("status", lambda s: int((s != "ok").sum())),
    )
    ok = trials[trials["status"] == "ok"]
    stats = ok.groupby(keys).agg(
        nmse_linear=("nmse_linear", "mean"),
        nmse_db_median=("nmse_db", "median"),
        nmse_db_p90=("nmse_db", lambda s: s.quantile(0.9)),
    )
    summary = counts.join(stats).reset_index()
    summary["nmse_db"] = summary["nmse_linear"].map(to_db)
    return summary[SUMMARY_COLUMNS]


_PLOT_TEMPLATE = '''\
"""Render NMSE curves from {summary}. Generated by the sweep harness."""
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

here = Path(__file__).resolve().parent
summary = pd.read_csv(here / "{summary}")

fig, ax = plt.subplots(figsize=(6, 4))
for name, rows in summary.groupby("estimator"):
    rows = rows.sort_values("{x_column}")
    ax.plot(rows["{x_column}"], rows["nmse_db"], marker="o", label=name)
ax.set_xlabel("{x_label}")
ax.set_ylabel("NMSE (dB)")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig(here / "nmse_{axis}.png", dpi=150)
print("saved", here / "nmse_{axis}.png")
'''


def write_plot_script(out_dir: Path, axis: str) -> Path:
    x_column, x_label = ("snr_db", "SNR (dB)") if axis == "snr" else ("t_p", "Pilot length T_p")
    path = out_dir / PLOT_SCRIPT
    path.write_text(
        _PLOT_TEMPLATE.format(summary=SUMMARY_CSV, x_column=x_column, x_label=x_label, axis=axis),
        encoding="utf-8",
    )
    return path


def _versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def sweep_points(cfg: SweepConfig, axis: Literal["snr", "pilot"]) -> List[Tuple[float, int]]:
    if axis == "snr":
        return [(float(snr), cfg.n_slots) for snr in cfg.snr_grid]
    if axis == "pilot":
        return [(cfg.fixed_snr_db, int(t_p)) for t_p in cfg.pilot_grid]
    raise ConfigurationError(f"unknown sweep axis {axis!r}")


def sweep(cfg: SweepConfig, axis: Literal["snr", "pilot"] = "snr") -> SweepResult:
    """
    Run n_trials paired trials at every axis point and write trials.csv,
    summary.csv, plot_nmse.py and manifest.json into cfg.output_dir.

    In serial mode trials run in order in this thread and the wall_ms column
    of trials.csv is zeroed (timings go to timings.csv), so repeated runs give
    byte-identical trial files.
    """
    if not cfg.estimators:
        raise ConfigurationError("at least one estimator is required")
    points = sweep_points(cfg, axis)
    out_dir = prepare_output_dir(cfg.output_dir)

    jobs = [(trial_id, snr_db, t_p) for snr_db, t_p in points for trial_id in range(cfg.n_trials)]
    workers = 1 if cfg.serial else (cfg.workers or 1)
    logger.info("=" * 60)
    logger.info("🚀 %s sweep: %d points x %d trials, estimators=%s",
                axis.upper(), len(points), cfg.n_trials, [est.name for est in cfg.estimators])
    logger.info("📍 Output: %s | workers=%d%s", out_dir, workers, " (serial)" if cfg.serial else "")
    logger.info("=" * 60)

    cache = PolarDictionaryCache()
    started_at = datetime.now(timezone.utc)
    start = time.perf_counter()

    def run(job):
        return run_trial(cfg, *job, cache=cache)

    if workers == 1:
        batches = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run, jobs))
    elapsed = time.perf_counter() - start

    records = [record for batch in batches for record in batch]
    trials = pd.DataFrame([record.model_dump() for record in records], columns=TRIAL_COLUMNS)
    timings_csv = None
    if cfg.serial:
        timings_csv = out_dir / TIMINGS_CSV
        trials[["trial_id", "estimator", "snr_db", "t_p", "wall_ms"]].to_csv(timings_csv, index=False)
        trials["wall_ms"] = 0.0

    trials_csv = out_dir / TRIALS_CSV
    trials.to_csv(trials_csv, index=False)
    summary = aggregate(trials)
    summary_csv = out_dir / SUMMARY_CSV
    summary.to_csv(summary_csv, index=False)
    plot_script = write_plot_script(out_dir, axis)

    n_failed = int((trials["status"] != "ok").sum())
    manifest = out_dir / MANIFEST_JSON
    manifest.write_text(json.dumps({
        "axis": axis,
        "profile": cfg.profile,
        "config": cfg.model_dump(mode="json"),
        "versions": _versions(),
        "started_at": started_at.isoformat(),
        "elapsed_s": round(elapsed, 3),
        "n_records": len(records),
        "n_failed": n_failed,
        "files": {
            "trials": TRIALS_CSV,
            "summary": SUMMARY_CSV,
            "plot_script": PLOT_SCRIPT,
            "timings": TIMINGS_CSV if timings_csv else None,
        },
    }, indent=2), encoding="utf-8")

    if n_failed:
        logger.warning("⚠️ %d of %d estimator runs failed (flagged in %s)", n_failed, len(records), TRIALS_CSV)
    logger.info("✅ Sweep finished in %.1f s -> %s", elapsed, out_dir)
    return SweepResult(
        axis=axis,
        trials_csv=trials_csv,
        summary_csv=summary_csv,
        plot_script=plot_script,
        manifest=manifest,
        summary=summary,
    )
