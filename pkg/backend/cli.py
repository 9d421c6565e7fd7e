# backend/cli.py
"""
Command-line entry point.

    python backend/cli.py sweep-snr --profile desk --trials 100 --serial --out results/snr
    python backend/cli.py sweep-pilot --tp 8 16 24 32 40 --snr 15
    python backend/cli.py estimate --snr 10 --seed 3
    python backend/cli.py selftest
    python backend/cli.py serve --port 8000
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import DEFAULT_PROFILE, LOG_LEVEL, PROFILES, build_sweep_config
from models import AssblConfig, EstimatorConfig, PilotConfig
from services.bench import estimate_instance, sweep
from services.errors import ChannelEstimationError

logger = logging.getLogger("xlmimo")

ESTIMATOR_CHOICES = ["assbl", "ssbl_fixed", "dft_ssbl", "polar_omp", "oracle_ls"]
TESTS_DIR = Path(__file__).resolve().parent / "tests"


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--profile", choices=sorted(PROFILES), default=None,
                        help=f"Parameter profile (default: {DEFAULT_PROFILE})")
    parser.add_argument("--seed", type=int, default=None, help="Master seed")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default: {LOG_LEVEL})")


def _add_sweep_flags(parser: argparse.ArgumentParser, axis: str):
    _add_common(parser)
    parser.add_argument("--config", type=Path, default=None, help="JSON sweep config")
    if axis == "snr":
        parser.add_argument("--snr", type=float, nargs="+", default=None, help="SNR grid in dB")
        parser.add_argument("--tp", type=int, default=None, help="Pilot length T_p")
    else:
        parser.add_argument("--tp", type=int, nargs="+", default=None, help="Pilot-length grid")
        parser.add_argument("--snr", type=float, default=None, help="Fixed SNR in dB")
    parser.add_argument("--trials", type=int, default=None, help="Trials per axis point")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--serial", action="store_true", default=None,
                        help="Run trials in order in-process; trials.csv becomes byte-reproducible")
    parser.add_argument("--workers", type=int, default=None, help="Worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlmimo", description="Near-field XL-MIMO channel estimation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_sweep_flags(sub.add_parser("sweep-snr", help="NMSE versus SNR"), "snr")
    _add_sweep_flags(sub.add_parser("sweep-pilot", help="NMSE versus pilot length"), "pilot")

    est = sub.add_parser("estimate", help="Run the estimators on one simulated instance")
    _add_common(est)
    est.add_argument("--snr", type=float, default=15.0, help="SNR in dB")
    est.add_argument("--tp", type=int, default=None, help="Pilot length T_p")
    est.add_argument("--estimators", nargs="+", choices=ESTIMATOR_CHOICES,
                     default=["assbl", "polar_omp", "oracle_ls"])
    est.add_argument("--trace", type=Path, default=None, help="Write ASSBL per-iteration diagnostics to this CSV")

    test = sub.add_parser("selftest", help="Run the property test suites")
    test.add_argument("--slow", action="store_true", help="Also run the Monte Carlo acceptance tests")
    test.add_argument("--log-level", default=None)

    srv = sub.add_parser("serve", help="Start the HTTP service")
    srv.add_argument("--host", default="0.0.0.0")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--log-level", default=None)
    return parser


def _configure_logging(level: Optional[str]):
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format="%(message)s")


def _run_sweep(args, axis: str) -> int:
    if axis == "snr":
        overrides = {"snr_grid": args.snr, "n_slots": args.tp}
    else:
        overrides = {"pilot_grid": args.tp, "fixed_snr_db": args.snr}
    overrides.update({
        "n_trials": args.trials,
        "master_seed": args.seed,
        "output_dir": args.out,
        "serial": args.serial,
        "workers": args.workers,
    })
    cfg = build_sweep_config(profile=args.profile, config_path=args.config, overrides=overrides)
    result = sweep(cfg, axis)
    print(result.summary.to_string(index=False))
    print(f"\n📁 {result.trials_csv}\n📁 {result.summary_csv}\n📈 {result.plot_script}\n🧾 {result.manifest}")
    return 0


def _run_estimate(args) -> int:
    base = build_sweep_config(profile=args.profile)
    pilot = PilotConfig(n_slots=args.tp or base.n_slots, n_rf=base.n_rf, snr_db=args.snr,
                        phase_bits=base.phase_bits)
    estimators = []
    for kind in dict.fromkeys(args.estimators):
        assbl = AssblConfig(trace_path=args.trace) if args.trace and kind == "assbl" else AssblConfig()
        estimators.append(EstimatorConfig(name=kind, kind=kind, assbl=assbl))

    problem, outcomes = estimate_instance(base.scenario, pilot, args.seed or 0, estimators)
    print(f"N={base.scenario.n_antennas} M={pilot.n_measurements} SNR={pilot.snr_db:g} dB "
          f"channel={problem.channel_hash}")
    for outcome in outcomes:
        nmse = f"{outcome.nmse_db:8.2f} dB" if outcome.nmse_db is not None else "     n/a"
        print(f"  {outcome.name:<11} {nmse}  iters={outcome.iterations:<4} {outcome.status}")
        if outcome.diagnostics:
            last = outcome.diagnostics[-1]
            print(f"    final Q={last.q_value:.4g} sigma={last.sigma:.4g} "
                  f"active={last.active_blocks} E-step={last.estep_path}")
        if outcome.refined_distances:
            shown = ", ".join("far" if d is None else f"{d:.2f} m" for d in outcome.refined_distances)
            print(f"    strongest-block distances: {shown}")
    return 0


def _run_selftest(args) -> int:
    import pytest

    options = [str(TESTS_DIR), "-q"]
    if args.slow:
        options += ["-m", "slow or not slow"]
    return int(pytest.main(options))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    try:
        if args.command == "sweep-snr":
            return _run_sweep(args, "snr")
        if args.command == "sweep-pilot":
            return _run_sweep(args, "pilot")
        if args.command == "estimate":
            return _run_estimate(args)
        if args.command == "selftest":
            return _run_selftest(args)
        from main import serve

        serve(host=args.host, port=args.port)
        return 0
    except ValidationError as e:
        logger.error("❌ Invalid configuration:\n%s", e)
        return 2
    except ChannelEstimationError as e:
        logger.error("❌ %s: %s", type(e).__name__, e)
        return 1
    except (OSError, ValueError) as e:
        logger.error("❌ %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
