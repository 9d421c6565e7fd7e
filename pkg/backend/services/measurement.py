# backend/services/measurement.py
import math
from dataclasses import dataclass

import numpy as np

from models import PilotConfig
from services.array_model import ArrayGeometry, ChannelRealization
from services.errors import DegenerateSignalError, DimensionError


@dataclass(frozen=True, eq=False)
class Combiner:
    """Aggregated analog combiner W = [W_1, ..., W_Tp], constant modulus 1/sqrt(N)"""
    w: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.w.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Stacked pilot observation y = W^H h + n.

    ``noise_var`` is the per-entry complex noise variance; it is 0.0 only for
    noiseless observations.
    """
    y: np.ndarray
    noise_var: float


def generate_combiner(rng: np.random.Generator, geom: ArrayGeometry, pilot: PilotConfig) -> Combiner:
    """Random-phase combiner, optionally with quantized phases"""
    shape = (geom.n_antennas, pilot.n_measurements)
    if pilot.phase_bits is None:
        phases = rng.uniform(0.0, 2 * math.pi, size=shape)
    else:
        levels = 2 ** pilot.phase_bits
        phases = 2 * math.pi * rng.integers(0, levels, size=shape) / levels
    return Combiner(w=np.exp(1j * phases) / math.sqrt(geom.n_antennas))


def snr_noise_variance(clean: np.ndarray, snr_db: float) -> float:
    """Noise variance giving ||clean||^2 / (M * noise_var) = SNR"""
    signal_power = float(np.vdot(clean, clean).real)
    if signal_power == 0.0:
        raise DegenerateSignalError("noiseless observation is zero, no noise level can meet a finite SNR")
    return signal_power / (clean.size * 10 ** (snr_db / 10))


def observe(
    channel: ChannelRealization,
    combiner: Combiner,
    pilot: PilotConfig,
    rng: np.random.Generator,
) -> Observation:
    """Combine the channel and add circular complex Gaussian noise at the configured post-combining SNR"""
    if combiner.n_antennas != channel.h.shape[0]:
        raise DimensionError(
            f"combiner has {combiner.n_antennas} rows but the channel has {channel.h.shape[0]} entries"
        )
    if combiner.n_measurements != pilot.n_measurements:
        raise DimensionError(
            f"combiner has {combiner.n_measurements} columns, pilot config expects {pilot.n_measurements}"
        )

    clean = combiner.w.conj().T @ channel.h
    if pilot.noiseless:
        return Observation(y=clean, noise_var=0.0)

    noise_var = snr_noise_variance(clean, pilot.snr_db)
    noise = math.sqrt(noise_var / 2) * (
        rng.standard_normal(clean.size) + 1j * rng.standard_normal(clean.size)
    )
    return Observation(y=clean + noise, noise_var=noise_var)
