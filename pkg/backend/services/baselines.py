# backend/services/baselines.py
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from models import ScenarioConfig
from services.array_model import (
    ArrayGeometry,
    ChannelRealization,
    SubArrayLayout,
    expansion_matrix,
    expected_visible_subarrays,
    path_atom,
)
from services.dictionary import PolarDictionary, structured_sensing
from services.errors import ConfigurationError, DimensionError
from services.measurement import Combiner

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SupportEstimate:
    """
    Greedy support over the structured polar columns.

    ``columns`` index the G*Q structured columns (atom q, sub-array g -> q*G + g);
    ``residual_norms`` holds ||y - Psi_S c_S|| after every accepted selection,
    starting with ||y||.
    """
    columns: Tuple[int, ...]
    coefficients: np.ndarray
    n_subarrays: int
    residual_norms: Tuple[float, ...]

    @property
    def atom_indices(self) -> Tuple[int, ...]:
        return tuple(sorted({c // self.n_subarrays for c in self.columns}))


def default_omp_iterations(scenario: ScenarioConfig) -> int:
    """L times the expected number of visible sub-arrays per path"""
    return max(1, round(scenario.n_paths * expected_visible_subarrays(scenario.n_subarrays)))


def select_support(
    y: np.ndarray,
    combiner: Combiner,
    pdict: PolarDictionary,
    layout: SubArrayLayout,
    n_iters: int,
) -> SupportEstimate:
    """Simultaneous OMP over the columns W^H diag(a_q) J e_g"""
    if n_iters < 1:
        raise ConfigurationError(f"n_iters must be at least 1, got {n_iters}")
    if combiner.n_measurements != y.shape[0]:
        raise DimensionError(f"combiner has {combiner.n_measurements} columns, y has {y.shape[0]} entries")

    sensing = structured_sensing(combiner.w, pdict.atoms, layout)
    norms = np.linalg.norm(sensing, axis=0)
    blocked = norms == 0
    safe_norms = np.where(blocked, 1.0, norms)

    selected: list = []
    coefficients = np.zeros(0, dtype=complex)
    residual = y.astype(complex)
    history = [float(np.linalg.norm(residual))]

    for _ in range(n_iters):
        score = np.abs(sensing.conj().T @ residual) / safe_norms
        score[blocked] = -1.0
        score[selected] = -1.0
        best = int(np.argmax(score))
        if score[best] <= 0:
            break

        trial = selected + [best]
        fit, _, rank, _ = np.linalg.lstsq(sensing[:, trial], y, rcond=None)
        if rank < len(trial):
            logger.debug("column %d makes the selected set rank deficient, dropping it", best)
            blocked[best] = True
            continue

        selected = trial
        coefficients = fit
        residual = y - sensing[:, selected] @ coefficients
        history.append(float(np.linalg.norm(residual)))

    return SupportEstimate(
        columns=tuple(selected),
        coefficients=coefficients,
        n_subarrays=layout.n_subarrays,
        residual_norms=tuple(history),
    )


def polar_omp(
    y: np.ndarray,
    combiner: Combiner,
    pdict: PolarDictionary,
    layout: SubArrayLayout,
    n_iters: int,
) -> np.ndarray:
    """Channel estimate from the polar-domain simultaneous OMP support"""
    support = select_support(y, combiner, pdict, layout, n_iters)
    h_hat = np.zeros(layout.n_antennas, dtype=complex)
    if not support.columns:
        return h_hat

    masks = expansion_matrix(layout)
    g = layout.n_subarrays
    for column, coefficient in zip(support.columns, support.coefficients):
        q, sub = divmod(column, g)
        h_hat += coefficient * pdict.atoms[:, q] * masks[:, sub]
    return h_hat


def oracle_ls(
    y: np.ndarray,
    combiner: Combiner,
    truth: ChannelRealization,
    geom: ArrayGeometry,
    layout: SubArrayLayout,
    exact: bool = False,
) -> np.ndarray:
    """Least-squares path gains on the true masked atoms a(theta_l, r_l) * J b_bar_l"""
    atoms = np.column_stack([path_atom(geom, layout, path, exact=exact) for path in truth.paths])
    fit, *_ = np.linalg.lstsq(combiner.w.conj().T @ atoms, y, rcond=None)
    return atoms @ fit
