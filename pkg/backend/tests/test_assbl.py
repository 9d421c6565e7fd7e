# backend/tests/test_assbl.py
import math

import numpy as np
import pandas as pd
import pytest

from models import AssblConfig, PilotConfig
from services import assbl
from services.array_model import ArrayGeometry, PathParams, SubArrayLayout, synthesize_channel
from services.assbl import HyperState, assbl_estimate
from services.bench import nmse
from services.errors import DimensionError
from services.measurement import Combiner, generate_combiner, observe

from helpers import random_complex

FAST = AssblConfig(max_iter=40)


def on_grid_channel(geom, layout, u=20, distance=20.0):
    angle = (2 * (u + 1) - 64 - 1) / 64
    path = PathParams(gain=1.0, angle=angle, distance=distance, visibility=np.ones(layout.n_subarrays))
    return synthesize_channel(geom, layout, [path])


def test_noiseless_on_grid_path_is_recovered(desk_geom, desk_layout, desk_combiner):
    channel = on_grid_channel(desk_geom, desk_layout)
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=math.inf)
    y = observe(channel, desk_combiner, pilot, np.random.default_rng(0)).y
    result = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, AssblConfig())
    _, db = nmse(channel.h, result.h_hat)
    assert db <= -30


def test_zero_observation_gives_zero_channel(desk_geom, desk_layout, desk_combiner):
    y = np.zeros(desk_combiner.n_measurements, dtype=complex)
    result = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, FAST)
    assert np.linalg.norm(result.h_hat) <= 1e-6 * math.sqrt(desk_geom.n_antennas)
    assert result.state.is_valid()


def test_diagnostics_and_state(desk_geom, desk_layout, desk_combiner, tmp_path):
    channel = on_grid_channel(desk_geom, desk_layout, u=40, distance=12.0)
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=10.0)
    y = observe(channel, desk_combiner, pilot, np.random.default_rng(1)).y
    trace = tmp_path / "trace.csv"
    cfg = FAST.model_copy(update={"trace_path": trace})
    result = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, cfg)

    assert 1 <= result.iterations <= cfg.max_iter
    assert [r.iteration for r in result.diagnostics] == list(range(1, result.iterations + 1))
    assert {r.estep_path for r in result.diagnostics} <= {"direct", "woodbury"}
    assert result.diagnostics[0].estep_path == "woodbury"
    assert result.state.is_valid()
    assert result.h_hat.shape == (64,)
    assert np.all(result.dictionary.inv_distances >= 1 / cfg.max_distance)
    assert np.all(result.dictionary.inv_distances <= 1 / cfg.min_distance)

    frame = pd.read_csv(trace)
    assert list(frame.columns) == ["iteration", "q_value", "sigma", "active_blocks", "alpha_change", "estep_path"]
    assert len(frame) == result.iterations


def test_fixed_dictionary_keeps_distances(desk_geom, desk_layout, desk_combiner):
    channel = on_grid_channel(desk_geom, desk_layout)
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=15.0)
    y = observe(channel, desk_combiner, pilot, np.random.default_rng(2)).y

    fixed = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, FAST.model_copy(update={"refine": False}))
    assert np.allclose(fixed.dictionary.distances, 20.0)

    far = assbl_estimate(
        y, desk_combiner, desk_geom, desk_layout,
        FAST.model_copy(update={"refine": False, "far_field": True}),
    )
    assert np.all(far.dictionary.inv_distances == 0.0)
    assert np.all(np.isinf(far.strongest_distances(2)))


def test_estep_method_override(desk_geom, desk_layout, desk_combiner):
    channel = on_grid_channel(desk_geom, desk_layout)
    y = desk_combiner.w.conj().T @ channel.h
    cfg = AssblConfig(max_iter=3, estep_method="direct")
    result = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, cfg)
    assert {r.estep_path for r in result.diagnostics} == {"direct"}


def test_mismatched_observation_rejected(desk_geom, desk_layout, desk_combiner):
    with pytest.raises(DimensionError):
        assbl_estimate(np.ones(10, dtype=complex), desk_combiner, desk_geom, desk_layout, FAST)
    short = Combiner(w=desk_combiner.w[:32])
    with pytest.raises(DimensionError):
        assbl_estimate(np.ones(64, dtype=complex), short, desk_geom, desk_layout, FAST)


def test_initial_state_is_valid():
    state = HyperState.initial(8, 4, sigma=2.0)
    assert state.is_valid()
    state.gamma[3] = 0.0
    assert not state.is_valid()


@pytest.mark.parametrize("seed, scale", [(0, 1e-6), (1, 1e-3), (2, 1.0), (3, 10.0), (4, 1e3)])
def test_state_stays_positive_for_full_iteration_budget(seed, scale):
    rng = np.random.default_rng(seed)
    geom, layout = ArrayGeometry(32, 100e9), SubArrayLayout.partition(32, 4)
    combiner = generate_combiner(rng, geom, PilotConfig(n_slots=8, n_rf=4))
    y = scale * random_complex(rng, combiner.n_measurements)
    result = assbl_estimate(y, combiner, geom, layout, AssblConfig(max_iter=200, tol=1e-12))

    assert result.state.is_valid()
    assert np.all(np.isfinite(result.h_hat))
    assert np.all(np.isfinite(result.mu))
    for record in result.diagnostics:
        assert math.isfinite(record.q_value)
        assert math.isfinite(record.sigma) and record.sigma > 0


def test_repeated_runs_are_bitwise_identical(desk_geom, desk_layout, desk_combiner):
    channel = on_grid_channel(desk_geom, desk_layout, u=33, distance=9.0)
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=10.0)
    y = observe(channel, desk_combiner, pilot, np.random.default_rng(7)).y

    first = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, FAST)
    second = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, FAST)
    assert np.array_equal(first.mu, second.mu)
    assert np.array_equal(first.h_hat, second.h_hat)
    assert np.array_equal(first.dictionary.inv_distances, second.dictionary.inv_distances)
    assert first.diagnostics == second.diagnostics


def test_posterior_trace_computed_once_per_iteration(desk_geom, desk_layout, desk_combiner, monkeypatch):
    channel = on_grid_channel(desk_geom, desk_layout)
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=15.0)
    y = observe(channel, desk_combiner, pilot, np.random.default_rng(3)).y
    reference = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, AssblConfig(max_iter=5))

    calls = []
    original = assbl._trace_term

    def counting(psi, sigma_mat):
        calls.append(psi.shape)
        return original(psi, sigma_mat)

    monkeypatch.setattr(assbl, "_trace_term", counting)
    result = assbl_estimate(y, desk_combiner, desk_geom, desk_layout, AssblConfig(max_iter=5))
    assert len(calls) == result.iterations
    assert np.array_equal(result.mu, reference.mu)
