# backend/services/array_model.py
"""
Physical model of the uniform linear array: element offsets, near-field
steering vectors, sub-array visibility and multipath channel synthesis.

Angles are normalized spatial angles (sine of the physical angle), never
radians. Distances enter the Fresnel phase only through 1/r, so the
vectorized helpers take inverse distances and 1/r = 0 is the far field.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from models import ScenarioConfig
from services.errors import ConfigurationError, DimensionError, DomainError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Half-wavelength ULA"""
    n_antennas: int
    carrier_freq: float

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ConfigurationError(f"n_antennas must be positive, got {self.n_antennas}")
        if not self.carrier_freq > 0:
            raise ConfigurationError(f"carrier_freq must be positive, got {self.carrier_freq}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def spacing(self) -> float:
        return self.wavelength / 2

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig) -> "ArrayGeometry":
        return cls(n_antennas=scenario.n_antennas, carrier_freq=scenario.carrier_freq)


@dataclass(frozen=True)
class SubArrayLayout:
    """Partition of the array into G groups of N_g consecutive elements"""
    n_subarrays: int
    per_subarray: int

    def __post_init__(self):
        if self.n_subarrays < 1 or self.per_subarray < 1:
            raise ConfigurationError(
                f"invalid layout: n_subarrays={self.n_subarrays}, per_subarray={self.per_subarray}"
            )

    @property
    def n_antennas(self) -> int:
        return self.n_subarrays * self.per_subarray

    @classmethod
    def partition(cls, n_antennas: int, n_subarrays: int) -> "SubArrayLayout":
        if n_subarrays < 1 or n_antennas % n_subarrays != 0:
            raise ConfigurationError(
                f"n_subarrays={n_subarrays} does not divide n_antennas={n_antennas}"
            )
        return cls(n_subarrays=n_subarrays, per_subarray=n_antennas // n_subarrays)

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig) -> "SubArrayLayout":
        return cls.partition(scenario.n_antennas, scenario.n_subarrays)


@dataclass(frozen=True, eq=False)
class PathParams:
    """One propagation path: gain, normalized angle, distance and sub-array visibility"""
    gain: complex
    angle: float
    distance: float
    visibility: np.ndarray

    def __post_init__(self):
        visibility = np.array(self.visibility, dtype=np.int8)
        if visibility.ndim != 1 or not np.isin(visibility, (0, 1)).all():
            raise DomainError("visibility must be a binary vector")
        if not visibility.any():
            raise DomainError("visibility must include at least one sub-array")
        if not -1.0 <= self.angle <= 1.0:
            raise DomainError(f"angle must lie in [-1, 1], got {self.angle}")
        if not self.distance > 0:
            raise DomainError(f"distance must be positive, got {self.distance}")
        visibility.setflags(write=False)
        object.__setattr__(self, "visibility", visibility)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Channel vector h together with the paths it was synthesized from"""
    h: np.ndarray
    paths: Tuple[PathParams, ...]


def antenna_offsets(geom: ArrayGeometry) -> np.ndarray:
    """delta_n = (2n - N - 1) / 2 for n = 1..N"""
    return np.arange(geom.n_antennas, dtype=float) - (geom.n_antennas - 1) / 2


def _check_angle(angle: float):
    if not -1.0 <= angle <= 1.0:
        raise DomainError(f"angle must lie in [-1, 1], got {angle}")


def steering_matrix(geom: ArrayGeometry, angles, inv_distances) -> np.ndarray:
    """Fresnel steering vectors, one column per (angle, 1/r) pair; 1/r = 0 is far field."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    inv_distances = np.broadcast_to(np.asarray(inv_distances, dtype=float), angles.shape)
    if np.any(np.abs(angles) > 1.0):
        raise DomainError("angles must lie in [-1, 1]")
    if np.any(inv_distances < 0) or not np.all(np.isfinite(inv_distances)):
        raise DomainError("distances must be positive")

    pos = antenna_offsets(geom)[:, None] * geom.spacing
    # r^(n) - r = -delta_n d theta + delta_n^2 d^2 (1 - theta^2) / (2 r)
    path_difference = -pos * angles + (pos ** 2) * (1 - angles ** 2) * inv_distances / 2
    return np.exp(-1j * geom.wavenumber * path_difference) / math.sqrt(geom.n_antennas)


def steering_vector(geom: ArrayGeometry, angle: float, distance: float, exact: bool = False) -> np.ndarray:
    """
    Near-field steering vector a(theta, r) with unit Euclidean norm.

    The default uses the quadratic (Fresnel) distance approximation. With
    ``exact=True`` the per-antenna distance is the exact spherical one,
    sqrt(r^2 - 2 r delta_n d theta + delta_n^2 d^2).
    """
    _check_angle(angle)
    if not distance > 0:
        raise DomainError(f"distance must be positive, got {distance}")
    if not exact:
        return steering_matrix(geom, [angle], [1.0 / distance])[:, 0]

    if math.isinf(distance):
        raise DomainError("exact steering needs a finite distance")
    pos = antenna_offsets(geom) * geom.spacing
    per_antenna = np.sqrt(distance ** 2 - 2 * distance * pos * angle + pos ** 2)
    return np.exp(-1j * geom.wavenumber * (per_antenna - distance)) / math.sqrt(geom.n_antennas)


def expansion_matrix(layout: SubArrayLayout) -> np.ndarray:
    """J = I_G kron 1_{N_g}"""
    return np.kron(np.eye(layout.n_subarrays), np.ones((layout.per_subarray, 1)))


def visibility_mask(layout: SubArrayLayout, visibility) -> np.ndarray:
    """Antenna-level visibility b = J b_bar"""
    visibility = np.asarray(visibility)
    if visibility.shape != (layout.n_subarrays,):
        raise DimensionError(
            f"visibility has shape {visibility.shape}, expected ({layout.n_subarrays},)"
        )
    return np.repeat(visibility.astype(float), layout.per_subarray)


def path_atom(geom: ArrayGeometry, layout: SubArrayLayout, path: PathParams, exact: bool = False) -> np.ndarray:
    """a(theta_l, r_l) masked by the path's visibility region"""
    return steering_vector(geom, path.angle, path.distance, exact=exact) * visibility_mask(layout, path.visibility)


def synthesize_channel(
    geom: ArrayGeometry,
    layout: SubArrayLayout,
    paths: Sequence[PathParams],
    exact: bool = False,
) -> ChannelRealization:
    """h = sqrt(N/L) * sum_l gain_l * (a(theta_l, r_l) * J b_bar_l)"""
    if not paths:
        raise DimensionError("at least one path is required")
    if layout.n_antennas != geom.n_antennas:
        raise DimensionError(
            f"layout covers {layout.n_antennas} antennas but the array has {geom.n_antennas}"
        )

    n_paths = len(paths)
    h = np.zeros(geom.n_antennas, dtype=complex)
    for path in paths:
        h += path.gain * path_atom(geom, layout, path, exact=exact)
    h *= math.sqrt(geom.n_antennas / n_paths)
    return ChannelRealization(h=h, paths=tuple(paths))


def sample_visibility(rng: np.random.Generator, n_subarrays: int) -> np.ndarray:
    """Contiguous run of sub-arrays with length uniform on {ceil(G/2), ..., G}"""
    shortest = math.ceil(n_subarrays / 2)
    run = int(rng.integers(shortest, n_subarrays + 1))
    start = int(rng.integers(0, n_subarrays - run + 1))
    visibility = np.zeros(n_subarrays, dtype=np.int8)
    visibility[start:start + run] = 1
    return visibility


def sample_paths(rng: np.random.Generator, n_paths: int, scenario: ScenarioConfig) -> list:
    """Draw n_paths PathParams from the scenario's path statistics"""
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be positive, got {n_paths}")

    paths = []
    for _ in range(n_paths):
        angle = float(rng.uniform(-scenario.angle_limit, scenario.angle_limit))
        distance = float(rng.uniform(scenario.min_distance, scenario.max_distance))
        gain = complex(rng.standard_normal(), rng.standard_normal()) / math.sqrt(2)
        visibility = sample_visibility(rng, scenario.n_subarrays)
        paths.append(PathParams(gain=gain, angle=angle, distance=distance, visibility=visibility))
    return paths


def expected_visible_subarrays(n_subarrays: int) -> float:
    """Mean run length of the visibility sampler"""
    return (math.ceil(n_subarrays / 2) + n_subarrays) / 2
