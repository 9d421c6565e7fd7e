# backend/tests/test_measurement.py
import math

import numpy as np
import pytest

from models import PilotConfig
from services.array_model import ArrayGeometry, ChannelRealization, PathParams, SubArrayLayout, synthesize_channel
from services.errors import DegenerateSignalError, DimensionError
from services.measurement import Combiner, generate_combiner, observe, snr_noise_variance


@pytest.fixture
def channel():
    geom, layout = ArrayGeometry(64, 100e9), SubArrayLayout.partition(64, 4)
    path = PathParams(gain=0.7 + 0.7j, angle=0.1, distance=15.0, visibility=[0, 1, 1, 1])
    return synthesize_channel(geom, layout, [path])


def test_full_scale_combiner_shape_and_modulus():
    geom = ArrayGeometry(256, 100e9)
    combiner = generate_combiner(np.random.default_rng(0), geom, PilotConfig(n_slots=32, n_rf=4))
    assert combiner.w.shape == (256, 128)
    assert np.allclose(np.abs(combiner.w), 1 / 16, atol=1e-15)


def test_combiner_is_repeatable():
    geom, pilot = ArrayGeometry(64, 100e9), PilotConfig()
    first = generate_combiner(np.random.default_rng(5), geom, pilot)
    second = generate_combiner(np.random.default_rng(5), geom, pilot)
    assert np.array_equal(first.w, second.w)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_quantized_phases(bits):
    geom = ArrayGeometry(16, 100e9)
    combiner = generate_combiner(np.random.default_rng(2), geom, PilotConfig(n_slots=4, n_rf=2, phase_bits=bits))
    steps = np.angle(combiner.w * math.sqrt(16)) / (2 * math.pi / 2 ** bits)
    assert np.allclose(steps, np.round(steps), atol=1e-9)
    assert np.allclose(np.abs(combiner.w), 1 / 4)


def test_noiseless_observation_is_exact(channel):
    pilot = PilotConfig(n_slots=8, n_rf=4, snr_db=math.inf)
    combiner = generate_combiner(np.random.default_rng(1), ArrayGeometry(64, 100e9), pilot)
    obs = observe(channel, combiner, pilot, np.random.default_rng(9))
    assert np.array_equal(obs.y, combiner.w.conj().T @ channel.h)
    assert obs.noise_var == 0.0


def test_noise_variance_meets_target_snr(channel):
    pilot = PilotConfig(n_slots=16, n_rf=4, snr_db=10.0)
    combiner = generate_combiner(np.random.default_rng(1), ArrayGeometry(64, 100e9), pilot)
    obs = observe(channel, combiner, pilot, np.random.default_rng(3))
    clean = combiner.w.conj().T @ channel.h
    assert obs.noise_var == pytest.approx(np.linalg.norm(clean) ** 2 / (64 * 10.0))
    assert obs.noise_var == pytest.approx(snr_noise_variance(clean, 10.0))


def test_noise_is_circular_with_configured_variance():
    clean = np.ones(200_000, dtype=complex)
    noise_var = snr_noise_variance(clean, 0.0)
    pilot = PilotConfig(n_slots=50_000, n_rf=4, snr_db=0.0)
    channel = ChannelRealization(h=np.ones(1, dtype=complex), paths=())
    combiner = Combiner(w=np.ones((1, 200_000), dtype=complex))
    noise = observe(channel, combiner, pilot, np.random.default_rng(4)).y - clean
    assert noise_var == pytest.approx(1.0)
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(1.0, rel=0.02)
    assert np.var(noise.real) == pytest.approx(0.5, rel=0.03)
    assert abs(np.mean(noise ** 2)) < 0.02


def test_zero_channel_with_finite_snr_rejected():
    channel = ChannelRealization(h=np.zeros(16, dtype=complex), paths=())
    pilot = PilotConfig(n_slots=2, n_rf=2, snr_db=5.0)
    combiner = generate_combiner(np.random.default_rng(0), ArrayGeometry(16, 100e9), pilot)
    with pytest.raises(DegenerateSignalError):
        observe(channel, combiner, pilot, np.random.default_rng(0))


def test_shape_mismatch_rejected(channel):
    pilot = PilotConfig(n_slots=2, n_rf=2)
    wrong_rows = generate_combiner(np.random.default_rng(0), ArrayGeometry(32, 100e9), pilot)
    with pytest.raises(DimensionError):
        observe(channel, wrong_rows, pilot, np.random.default_rng(0))
    wrong_cols = generate_combiner(np.random.default_rng(0), ArrayGeometry(64, 100e9), PilotConfig(n_slots=3, n_rf=2))
    with pytest.raises(DimensionError):
        observe(channel, wrong_cols, pilot, np.random.default_rng(0))


def test_observation_is_linear_at_fixed_noise(channel):
    pilot = PilotConfig(n_slots=8, n_rf=4, snr_db=5.0)
    combiner = generate_combiner(np.random.default_rng(1), ArrayGeometry(64, 100e9), pilot)
    # |1 + omega| = 1, so all three channels set the same noise level
    omega = np.exp(2j * math.pi / 3)
    h1 = channel
    h2 = ChannelRealization(h=omega * channel.h, paths=())
    h12 = ChannelRealization(h=h1.h + h2.h, paths=())

    def y_of(h):
        return observe(h, combiner, pilot, np.random.default_rng(21))

    o1, o2, o12 = y_of(h1), y_of(h2), y_of(h12)
    assert o1.noise_var == pytest.approx(o12.noise_var, rel=1e-12)
    noise = o1.y - combiner.w.conj().T @ h1.h
    assert np.allclose(o12.y, o1.y + o2.y - noise, atol=1e-12)


def test_same_seed_gives_same_unit_noise_draw(channel):
    pilot = PilotConfig(n_slots=8, n_rf=4, snr_db=0.0)
    combiner = generate_combiner(np.random.default_rng(1), ArrayGeometry(64, 100e9), pilot)
    other = ChannelRealization(h=np.random.default_rng(6).standard_normal(64) + 0j, paths=())
    total = ChannelRealization(h=channel.h + other.h, paths=())

    clean_parts = []
    unit_draws = []
    for h in (channel, other, total):
        obs = observe(h, combiner, pilot, np.random.default_rng(33))
        clean = combiner.w.conj().T @ h.h
        clean_parts.append(clean)
        unit_draws.append((obs.y - clean) / math.sqrt(obs.noise_var))
    assert np.allclose(unit_draws[0], unit_draws[1]) and np.allclose(unit_draws[0], unit_draws[2])
    assert np.allclose(clean_parts[2], clean_parts[0] + clean_parts[1])
