"""Phase distributions, the model laser state and visibility characterisation.

Phase integrals use the periodic trapezoid rule on a uniform grid, which is
spectrally accurate for smooth periodic densities.  A point mass (the
fixed-phase part of a delta-mix distribution) is integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .fock import FockOperator, ModeSpace, coherent_ket, poisson_weights

DELTA_MIX = "delta-mix"
WRAPPED_NORMAL = "wrapped-normal"
TABULATED = "tabulated"

DEFAULT_QUADRATURE = 512
NORMALISATION_TOL = 1e-8
SERIES_TOL = 1e-16

DensityOperator = FockOperator


@dataclass(frozen=True)
class PhaseDistribution:
    """Density of a single pulse phase on [0, 2pi).

    Build instances with :func:`uniform`, :func:`delta_mix`,
    :func:`wrapped_normal` or :func:`tabulated`.
    """

    kind: str
    q: float = 1.0
    sigma: float = 0.0
    mean: float = 0.0
    grid: tuple = field(default=())
    values: tuple = field(default=())

    def density(self, phi: ArrayLike) -> NDArray[np.float64]:
        """Absolutely continuous part of the density (the delta-mix atom is excluded)."""
        phi = np.asarray(phi, dtype=float)
        if self.kind == DELTA_MIX:
            return np.full_like(phi, self.q / (2 * np.pi))
        if self.kind == WRAPPED_NORMAL:
            return _wrapped_normal_density(phi - self.mean, self.sigma)
        grid = np.asarray(self.grid)
        vals = np.asarray(self.values)
        return np.interp(np.mod(phi, 2 * np.pi), grid, vals, period=2 * np.pi)

    def nodes(self, quadrature_points: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Quadrature nodes and weights times density for the continuous part."""
        if self.kind == TABULATED:
            grid = np.asarray(self.grid)
            gaps = np.diff(np.concatenate([grid, [grid[0] + 2 * np.pi]]))
            w = 0.5 * (gaps + np.roll(gaps, 1))
            return grid, w * np.asarray(self.values)
        if quadrature_points < 64:
            raise ValueError("at least 64 quadrature points are required")
        phi = 2 * np.pi * np.arange(quadrature_points) / quadrature_points
        return phi, self.density(phi) * (2 * np.pi / quadrature_points)

    @property
    def atom(self) -> tuple[float, float]:
        """(weight, position) of the point mass, zero weight if none."""
        if self.kind == DELTA_MIX:
            return 1.0 - self.q, self.mean
        return 0.0, 0.0


def uniform() -> PhaseDistribution:
    return PhaseDistribution(DELTA_MIX, q=1.0)


def delta_mix(q: float, phase: float = 0.0) -> PhaseDistribution:
    """``q/2pi + (1-q) delta(phi - phase)``."""
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    return PhaseDistribution(DELTA_MIX, q=float(q), mean=float(phase))


def wrapped_normal(sigma: float, mean: float = 0.0) -> PhaseDistribution:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return PhaseDistribution(WRAPPED_NORMAL, sigma=float(sigma), mean=float(mean))


def tabulated(grid: ArrayLike, values: ArrayLike) -> PhaseDistribution:
    """Density sampled on a strictly increasing grid inside [0, 2pi)."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.shape != values.shape or grid.size < 3:
        raise ValueError("grid and values must be matching 1-d arrays")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] >= 2 * np.pi:
        raise ValueError("grid must be strictly increasing inside [0, 2pi)")
    if np.any(values < 0):
        raise ValueError("density must be non-negative")
    return PhaseDistribution(TABULATED, grid=tuple(grid), values=tuple(values))


def _wrapped_normal_terms(sigma: float) -> int:
    # smallest K with exp(-K^2 sigma^2 / 2) < SERIES_TOL
    return int(np.ceil(np.sqrt(2 * -np.log(SERIES_TOL)) / sigma)) + 1


def _wrapped_normal_density(phi: NDArray[np.float64], sigma: float) -> NDArray[np.float64]:
    k = np.arange(1, _wrapped_normal_terms(sigma) + 1)
    coeff = np.exp(-0.5 * k**2 * sigma**2)
    series = 1 + 2 * np.cos(np.multiply.outer(phi, k)) @ coeff
    return series / (2 * np.pi)


def circular_moments(
    dist: PhaseDistribution, kmax: int, quadrature_points: int = DEFAULT_QUADRATURE
) -> NDArray[np.complex128]:
    """``c_k = int p(phi) e^{i k phi} dphi`` for ``k = 0..kmax``."""
    phi, w = dist.nodes(quadrature_points)
    k = np.arange(kmax + 1)
    c = np.exp(1j * np.multiply.outer(k, phi)) @ w
    weight, pos = dist.atom
    if weight:
        c = c + weight * np.exp(1j * k * pos)
    return c


def _check_normalised(dist: PhaseDistribution, quadrature_points: int) -> None:
    total = circular_moments(dist, 0, quadrature_points)[0].real
    if abs(total - 1) > NORMALISATION_TOL:
        raise ValueError(f"phase distribution integrates to {total:.12g}, not 1")


def first_circular_moment(dist: PhaseDistribution, quadrature_points: int = DEFAULT_QUADRATURE) -> complex:
    return complex(circular_moments(dist, 1, quadrature_points)[1])


def visibility_iid(dist: PhaseDistribution, quadrature_points: int = DEFAULT_QUADRATURE) -> float:
    """Interference visibility of two independent pulses with this phase law: ``|c_1|^2``."""
    _check_normalised(dist, quadrature_points)
    return float(abs(first_circular_moment(dist, quadrature_points)) ** 2)


def wrapped_normal_q(sigma: float) -> float:
    """``2pi`` times the wrapped-normal density at its minimum (``phi = pi``)."""
    k = np.arange(1, _wrapped_normal_terms(sigma) + 1)
    return float(1 + 2 * np.sum((-1.0) ** k * np.exp(-0.5 * k**2 * sigma**2)))


def q_from_visibility(V: float, model: str) -> float:
    """Degree of phase randomisation implied by a visibility under a phase model."""
    if not 0 <= V <= 1:
        raise ValueError("visibility must lie in [0, 1]")
    if model == DELTA_MIX:
        return float(1 - np.sqrt(V))
    if model == WRAPPED_NORMAL:
        if V == 0:
            return 1.0
        if V == 1:
            return 0.0
        return wrapped_normal_q(float(np.sqrt(-np.log(V))))
    raise ValueError(f"unknown phase model {model!r}")


def min_density_q(dist: PhaseDistribution, quadrature_points: int = DEFAULT_QUADRATURE) -> float:
    """``2pi min_phi p(phi)`` over the quadrature grid (continuous part only)."""
    if dist.kind == DELTA_MIX:
        return dist.q
    if dist.kind == WRAPPED_NORMAL:
        return wrapped_normal_q(dist.sigma)
    phi, _ = dist.nodes(quadrature_points)
    return float(2 * np.pi * np.min(dist.density(phi)))


# -- states ------------------------------------------------------------------------


@dataclass(frozen=True)
class LaserSpec:
    q: float
    intensities: tuple
    cutoff: int

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")
        if any(mu < 0 for mu in self.intensities):
            raise ValueError("intensities must be non-negative")
        if self.cutoff < 1:
            raise ValueError("cutoff must be at least 1")


def model_state(mu: float, q: float, cutoff: int) -> DensityOperator:
    """``q * Poisson mixture + (1 - q) * |sqrt(mu)><sqrt(mu)|``, truncated, not renormalised."""
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    ket = coherent_ket(np.sqrt(mu), cutoff).amplitudes.real
    rho = q * np.diag(poisson_weights(mu, cutoff)) + (1 - q) * np.outer(ket, ket)
    return FockOperator(ModeSpace(1, cutoff), rho.astype(complex))


def _phase_average(rho: np.ndarray, moments: np.ndarray) -> np.ndarray:
    """Apply ``sigma_mn -> sigma_mn c_{m-n}`` (with ``c_{-k} = conj(c_k)``)."""
    n = rho.shape[0]
    diff = np.subtract.outer(np.arange(n), np.arange(n))
    factors = np.where(diff >= 0, moments[np.abs(diff)], np.conj(moments[np.abs(diff)]))
    return rho * factors


def laser_state_from_distribution(
    dist: PhaseDistribution, mu: float, cutoff: int, quadrature_points: int = DEFAULT_QUADRATURE
) -> DensityOperator:
    """``int p(phi) |sqrt(mu) e^{i phi}><.| dphi``, truncated at ``cutoff``."""
    _check_normalised(dist, quadrature_points)
    ket = coherent_ket(np.sqrt(mu), cutoff).amplitudes
    moments = circular_moments(dist, cutoff, quadrature_points)
    rho = _phase_average(np.outer(ket, ket.conj()), moments)
    return FockOperator(ModeSpace(1, cutoff), 0.5 * (rho + rho.conj().T))


def phase_modulator_channel_apply(
    dist: PhaseDistribution,
    q: float,
    state: DensityOperator,
    quadrature_points: int = DEFAULT_QUADRATURE,
) -> DensityOperator:
    """Random phase rotation with density ``(p - q/2pi) / (1 - q)``.

    Maps the model state with parameter ``q`` onto the laser state of
    ``dist`` whenever ``q <= 2pi min p``.
    """
    if not q < 1:
        raise ValueError("q must be below 1")
    if q > min_density_q(dist, quadrature_points) + 1e-12:
        raise ValueError("q exceeds 2pi * min density; the residual density would be negative")
    _check_normalised(dist, quadrature_points)
    n = state.space.dim
    c = circular_moments(dist, n - 1, quadrature_points)
    c_tilde = c.copy()
    c_tilde[0] -= q
    c_tilde /= 1 - q
    out = _phase_average(state.matrix, c_tilde)
    return FockOperator(state.space, 0.5 * (out + out.conj().T))


def trace_distance(a: DensityOperator, b: DensityOperator) -> float:
    diff = a.matrix - b.matrix
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
