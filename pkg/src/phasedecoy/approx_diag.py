"""Approximate eigendecomposition of truncated density operators with error budgets.

The spectrum of a state is estimated from its projection onto the first
``d + 1`` Fock states.  The off-diagonal block between the kept subspace
and its complement bounds how far eigenvalues (``eps_proj``) and
eigenvectors (``eps_vec``) can move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .fock import FockKet, FockOperator, ModeSpace, gen_inverse_sqrt, hermitian_eig, op_norm, poisson_tail

W_FLOOR = 1e-18
PSD_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionBudget:
    """Eigenvalue error budget of a finite projection.

    ``eps_proj = lam * sqrt(max(w, w_floor))``; the floor only applies when
    ``w > 0`` is below machine resolution.
    """

    eps_proj: float
    lam: float
    w: float


@dataclass(frozen=True)
class EigenBlock:
    index: int
    value: float
    vector: FockKet
    delta: float
    eps_vec: float
    usable: bool


def _eps(lam: float, w: float) -> float:
    if lam == 0 or w == 0:
        return 0.0
    return float(lam * np.sqrt(max(w, W_FLOOR)))


def projection_budget(rho_big: FockOperator, d: int) -> ProjectionBudget:
    """Whitened off-diagonal norm and tail weight of ``rho_big`` split at ``d``.

    ``lam = || (rho^P)^{-1/2} P rho Q (rho^Q)^{-1/2} ||_inf`` with generalised
    inverses and ``w = Tr rho^Q``, where ``P`` keeps photon numbers ``<= d``.
    """
    A = rho_big.matrix
    D = A.shape[0] - 1
    if not D > d:
        raise ValueError("outer cutoff must exceed the inner cutoff")
    vals = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
    if vals[0] < -PSD_TOL:
        raise ValueError("rho_big is not PSD")
    k = d + 1
    top, off, tail = A[:k, :k], A[:k, k:], A[k:, k:]
    w = float(np.real(np.trace(tail)))
    lam = op_norm(gen_inverse_sqrt(top) @ off @ gen_inverse_sqrt(tail))
    return ProjectionBudget(_eps(lam, w), lam, max(w, 0.0))


def model_budget(mu: float, q: float, d: int) -> ProjectionBudget:
    """Analytic budget for the model laser state with the exact Poisson tail.

    The off-diagonal block of the model state is the rank-one matrix
    ``(1 - q) a_P a_Q^dag`` built from the coherent amplitudes, so its
    one-norm and operator norm both equal ``(1 - q) |a_P| |a_Q| <=
    (1 - q) sqrt(w)``.  ``lam`` is therefore reported as ``1 - q``.  This is
    the coefficient of ``sqrt(w)`` in the bound, not the whitened norm
    returned by :func:`projection_budget`, which can be larger.
    """
    w = poisson_tail(mu, d)
    lam = 1.0 - q
    return ProjectionBudget(_eps(lam, w), lam, w)


def _gaps(values: NDArray[np.float64], i: int, lower_floor: float) -> float:
    """Smallest distance from ``values[i]`` to its neighbours in a descending list."""
    gaps = []
    if i > 0:
        gaps.append(values[i - 1] - values[i])
    if i + 1 < len(values):
        gaps.append(values[i] - values[i + 1])
    else:
        # the discarded complement carries eigenvalues in [0, w]
        gaps.append(values[i] - lower_floor)
    return float(min(gaps))


def _fix_sign(v: NDArray[np.complex128]) -> NDArray[np.complex128]:
    k = int(np.argmax(np.abs(v)))
    phase = v[k] / abs(v[k]) if v[k] != 0 else 1.0
    return v / phase


def approx_eigendecomposition(rho: FockOperator, budget: ProjectionBudget, n_blocks: int) -> list[EigenBlock]:
    """Top ``n_blocks`` eigenpairs of the projected state with certified errors.

    ``delta = (smallest neighbour gap) - eps_proj`` and
    ``eps_vec = 2 eps_proj / delta``; blocks with ``delta <= 0`` are marked
    unusable and carry an infinite ``eps_vec``.
    """
    dim = rho.matrix.shape[0]
    if not 1 <= n_blocks <= dim:
        raise ValueError("n_blocks must lie between 1 and the dimension")
    values, vectors = hermitian_eig(rho)
    out = []
    for i in range(n_blocks):
        delta = _gaps(values, i, budget.w) - budget.eps_proj
        usable = delta > 0
        if budget.eps_proj == 0 and usable:
            eps_vec = 0.0
        else:
            eps_vec = 2 * budget.eps_proj / delta if usable else float("inf")
        vec = _fix_sign(vectors[:, i])
        out.append(EigenBlock(i, float(values[i]), FockKet(ModeSpace(1, dim - 1), vec), float(delta), float(eps_vec), bool(usable)))
    return out


# -- perturbation checks -------------------------------------------------------------


def weyl_check(rho: NDArray, sigma: NDArray, tol: float = 1e-12) -> bool:
    """``|lambda_i(rho) - lambda_i(sigma)| <= ||rho - sigma||_inf`` for every ``i``."""
    a = np.linalg.eigvalsh(rho)
    b = np.linalg.eigvalsh(sigma)
    return bool(np.all(np.abs(a - b) <= op_norm(rho - sigma) + tol))


def davis_kahan_check(rho: NDArray, sigma: NDArray, i: int, tol: float = 1e-12) -> bool:
    """Fidelity bound ``F^2 >= 1 - eps^2 / delta_i^2`` for the ``i``-th eigenvector (descending).

    ``eps = ||rho - sigma||_inf`` and ``delta_i`` is the neighbour gap of
    ``sigma``'s ``i``-th eigenvalue minus ``eps``.  Returns ``True`` without
    testing when ``delta_i <= 0``, where the bound says nothing.
    """
    eps = op_norm(rho - sigma)
    vs, us = hermitian_eig(sigma)
    vr, ur = hermitian_eig(rho)
    gaps = []
    if i > 0:
        gaps.append(vs[i - 1] - vs[i])
    if i + 1 < len(vs):
        gaps.append(vs[i] - vs[i + 1])
    delta = min(gaps) - eps
    if delta <= 0:
        return True
    fid = abs(np.vdot(us[:, i], ur[:, i])) ** 2
    return bool(fid >= 1 - eps**2 / delta**2 - tol)
