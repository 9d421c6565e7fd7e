# backend/services/dictionary.py
"""
Polar-domain and distance-parameterized dictionaries.

Columns of every structured dictionary are ordered block by block: column
u*G + g (0-based) is atom u restricted to sub-array g, i.e. diag(a_u) J e_g.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from models import DistanceRingRule
from services.array_model import (
    ArrayGeometry,
    SubArrayLayout,
    antenna_offsets,
    expansion_matrix,
    steering_matrix,
)
from services.errors import DimensionError, DomainError
from services.measurement import Combiner

logger = logging.getLogger(__name__)


def uniform_angle_grid(n_angles: int) -> np.ndarray:
    """theta_u = (2u - U - 1) / U for u = 1..U"""
    if n_angles < 1:
        raise DomainError(f"angular grid needs at least one point, got {n_angles}")
    return (2 * np.arange(1, n_angles + 1) - n_angles - 1) / n_angles


@dataclass(frozen=True, eq=False)
class PolarDictionary:
    """Steering vectors sampled jointly in angle and distance"""
    atoms: np.ndarray
    grid: List[Tuple[float, float]]

    @property
    def q_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(eq=False)
class AdaptiveDictionary:
    """
    Fixed angular grid with one learnable distance per angle.

    Distances are held as inverse distances; 1/r = 0 is a far-field atom.
    Refinement keeps 1/r inside [1/max_distance, 1/min_distance].
    """
    geom: ArrayGeometry
    layout: SubArrayLayout
    angles: np.ndarray
    inv_distances: np.ndarray
    min_distance: float = 1.0
    max_distance: float = 1000.0

    def __post_init__(self):
        self.angles = np.array(self.angles, dtype=float)
        self.inv_distances = np.array(self.inv_distances, dtype=float)
        if self.angles.shape != self.inv_distances.shape:
            raise DimensionError("one distance per angle is required")
        if np.any(self.inv_distances < 0):
            raise DomainError("distances must be positive")
        if self.layout.n_antennas != self.geom.n_antennas:
            raise DimensionError("layout does not cover the array")
        self.angles.setflags(write=False)

    @classmethod
    def uniform(
        cls,
        geom: ArrayGeometry,
        layout: SubArrayLayout,
        n_angles: int,
        init_distance: float = 20.0,
        far_field: bool = False,
        min_distance: float = 1.0,
        max_distance: float = 1000.0,
    ) -> "AdaptiveDictionary":
        if not init_distance > 0:
            raise DomainError(f"init_distance must be positive, got {init_distance}")
        inv = 0.0 if far_field else 1.0 / init_distance
        return cls(
            geom=geom,
            layout=layout,
            angles=uniform_angle_grid(n_angles),
            inv_distances=np.full(n_angles, inv),
            min_distance=min_distance,
            max_distance=max_distance,
        )

    @property
    def n_angles(self) -> int:
        return self.angles.shape[0]

    @property
    def n_columns(self) -> int:
        return self.n_angles * self.layout.n_subarrays

    @property
    def distances(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.inv_distances

    def block(self, u: int) -> slice:
        g = self.layout.n_subarrays
        return slice(u * g, (u + 1) * g)

    def clamp_inverse(self, value: float) -> float:
        return float(np.clip(value, 1.0 / self.max_distance, 1.0 / self.min_distance))

    def steering(self) -> np.ndarray:
        return steering_matrix(self.geom, self.angles, self.inv_distances)

    def copy(self) -> "AdaptiveDictionary":
        return replace(self, inv_distances=self.inv_distances.copy())


def build_polar_dictionary(geom: ArrayGeometry, n_angles: int, rule: DistanceRingRule) -> PolarDictionary:
    """
    Uniform angular grid with distance rings per angle.

    Per angle, r_s = N^2 d^2 (1 - theta^2) / (2 beta^2 lambda s) for s = 1..s_max,
    keeping rings at or beyond ``rule.min_distance``, plus one far-field atom.
    """
    angles = uniform_angle_grid(n_angles)
    scale = (geom.n_antennas * geom.spacing) ** 2 / (2 * rule.beta_delta ** 2 * geom.wavelength)

    grid_angles, grid_inv = [], []
    for theta in angles:
        grid_angles.append(theta)
        grid_inv.append(0.0)
        if rule.far_field_only:
            continue
        for s in range(1, rule.s_max + 1):
            ring = scale * (1 - theta ** 2) / s
            if ring < rule.min_distance:
                break
            grid_angles.append(theta)
            grid_inv.append(1.0 / ring)

    atoms = steering_matrix(geom, grid_angles, grid_inv)
    grid = [(float(t), math.inf if inv == 0.0 else 1.0 / inv) for t, inv in zip(grid_angles, grid_inv)]
    logger.info(
        "📐 Polar dictionary: U=%d, Q=%d atoms (beta_delta=%.4g, s_max=%d)",
        n_angles, len(grid), rule.beta_delta, rule.s_max,
    )
    return PolarDictionary(atoms=atoms, grid=grid)


def structured_atoms(atoms: np.ndarray, layout: SubArrayLayout) -> np.ndarray:
    """[diag(a_1) J, ..., diag(a_Q) J] for the columns of ``atoms``"""
    if atoms.shape[0] != layout.n_antennas:
        raise DimensionError(
            f"atoms have {atoms.shape[0]} rows but the layout covers {layout.n_antennas} antennas"
        )
    j = expansion_matrix(layout)
    n, q = atoms.shape
    return (atoms[:, :, None] * j[:, None, :]).reshape(n, q * layout.n_subarrays)


def structured_sensing(w: np.ndarray, atoms: np.ndarray, layout: SubArrayLayout) -> np.ndarray:
    """W^H [diag(a_q) J]_q computed per sub-array, without forming the N x GQ dictionary"""
    n, m = w.shape
    if atoms.shape[0] != n or n != layout.n_antennas:
        raise DimensionError(
            f"combiner has {n} rows, atoms have {atoms.shape[0]}, layout covers {layout.n_antennas}"
        )
    g, ng = layout.n_subarrays, layout.per_subarray
    wh = w.conj().T.reshape(m, g, ng)
    per_block = atoms.reshape(g, ng, atoms.shape[1])
    return np.einsum("mgk,gkq->mqg", wh, per_block).reshape(m, atoms.shape[1] * g)


def materialize(adict: AdaptiveDictionary) -> np.ndarray:
    """D(r) = [diag(a_1) J, ..., diag(a_U) J]"""
    return structured_atoms(adict.steering(), adict.layout)


def effective_sensing(combiner: Combiner, adict: AdaptiveDictionary) -> np.ndarray:
    """Psi = W^H D(r)"""
    return structured_sensing(combiner.w, adict.steering(), adict.layout)


def inv_distance_derivative(geom: ArrayGeometry, angle: float, inv_distance: float) -> np.ndarray:
    """d a(theta, r) / d(1/r); only the Fresnel term depends on 1/r"""
    a = steering_matrix(geom, [angle], [inv_distance])[:, 0]
    pos = antenna_offsets(geom) * geom.spacing
    return a * (-1j * geom.wavenumber * pos ** 2 * (1 - angle ** 2) / 2)


def steering_inv_distance_derivative(geom: ArrayGeometry, angle: float, distance: float) -> np.ndarray:
    if not distance > 0:
        raise DomainError(f"distance must be positive, got {distance}")
    return inv_distance_derivative(geom, angle, 1.0 / distance)


def block_sensing(w: np.ndarray, layout: SubArrayLayout, vector: np.ndarray) -> np.ndarray:
    """W^H diag(vector) J, the M x G sensing block of one atom (or of its derivative)"""
    g, ng = layout.n_subarrays, layout.per_subarray
    wh = w.conj().T.reshape(w.shape[1], g, ng)
    return np.einsum("mgk,gk->mg", wh, vector.reshape(g, ng))
