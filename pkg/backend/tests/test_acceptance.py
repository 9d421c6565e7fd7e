# backend/tests/test_acceptance.py
"""Monte Carlo runs at desk and paper scale. Run with ``pytest -m slow``."""
import logging

import pandas as pd
import pytest

from config import build_sweep_config
from services.bench import sweep

pytestmark = pytest.mark.slow


def mean_db(summary, estimator, column):
    rows = summary[summary["estimator"] == estimator].sort_values(column)
    return rows["nmse_db"].to_numpy()


def test_snr_sweep_ordering(tmp_path):
    cfg = build_sweep_config("desk", overrides={"output_dir": tmp_path, "serial": False})
    summary = sweep(cfg, "snr").summary
    assert (summary["n_failed"] == 0).all()

    assbl = mean_db(summary, "assbl", "snr_db")
    omp = mean_db(summary, "polar_omp", "snr_db")
    oracle = mean_db(summary, "oracle_ls", "snr_db")
    snrs = sorted(summary["snr_db"].unique())
    for i, snr in enumerate(snrs):
        if snr >= 10:
            assert oracle[i] <= assbl[i] <= omp[i]
    assert all(later <= earlier - 0.5 for earlier, later in zip(assbl, assbl[1:]))


def test_pilot_sweep_trend(tmp_path):
    cfg = build_sweep_config("desk", overrides={"output_dir": tmp_path, "serial": False, "fixed_snr_db": 15.0})
    summary = sweep(cfg, "pilot").summary
    assbl = mean_db(summary, "assbl", "t_p")
    assert all(later <= earlier for earlier, later in zip(assbl, assbl[1:]))
    assert assbl[0] - assbl[-1] >= 3.0


def test_paired_trials_favor_assbl(tmp_path):
    cfg = build_sweep_config("desk", overrides={"output_dir": tmp_path, "snr_grid": [15.0], "serial": False})
    summary = sweep(cfg, "snr").summary.set_index("estimator")
    assert summary.loc["assbl", "nmse_linear"] < summary.loc["polar_omp", "nmse_linear"]


def test_paper_profile_smoke(tmp_path, caplog):
    cfg = build_sweep_config("paper", overrides={
        "output_dir": tmp_path, "n_trials": 5, "snr_grid": [15.0], "serial": True,
    })
    with caplog.at_level(logging.DEBUG, logger="services.assbl"):
        result = sweep(cfg, "snr")
    trials = pd.read_csv(result.trials_csv)
    assert (trials["status"] == "ok").all()
    assert any(record.getMessage().startswith("iter") for record in caplog.records)
    assert result.manifest.exists()
