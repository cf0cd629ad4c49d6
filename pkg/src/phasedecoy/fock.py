"""Truncated Fock-space linear algebra.

Occupation-number bases, coherent states, photon-number projectors,
multi-photon isometries of passive linear-optical networks and threshold
detector POVMs.  Everything is dense numpy; dimensions in this package stay
in the hundreds.

Basis order is graded lexicographic: tuples are sorted by total photon
number first and lexicographically (descending first mode) inside each
photon-number sector, so every total-photon projector is a leading diagonal
block.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial, lgamma
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammainc

PER_MODE = "per_mode"
TOTAL = "total"

HERMITIAN_TOL = 1e-12


def _graded_tuples(n_modes: int, total: int) -> list[tuple[int, ...]]:
    """All occupation tuples of ``n_modes`` modes with exactly ``total`` photons."""
    if n_modes == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _graded_tuples(n_modes - 1, total - first):
            out.append((first,) + rest)
    return out


@dataclass(frozen=True)
class ModeSpace:
    """Occupation-number basis of ``n_modes`` bosonic modes under a cutoff.

    ``cutoff_kind`` is ``"total"`` (sum of occupations <= cutoff) or
    ``"per_mode"`` (each occupation <= cutoff).
    """

    n_modes: int
    cutoff: int
    cutoff_kind: str = TOTAL

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")
        if self.cutoff_kind not in (TOTAL, PER_MODE):
            raise ValueError(f"unknown cutoff kind {self.cutoff_kind!r}")

    @cached_property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        max_total = self.cutoff if self.cutoff_kind == TOTAL else self.cutoff * self.n_modes
        out = []
        for n in range(max_total + 1):
            for occ in _graded_tuples(self.n_modes, n):
                if self.cutoff_kind == PER_MODE and max(occ) > self.cutoff:
                    continue
                out.append(occ)
        return tuple(out)

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {occ: i for i, occ in enumerate(self.basis)}

    @property
    def dim(self) -> int:
        return len(self.basis)

    def index(self, occupation: Sequence[int]) -> int:
        return self._index[tuple(occupation)]

    def photon_numbers(self) -> np.ndarray:
        """Total photon number of every basis state."""
        return np.array([sum(occ) for occ in self.basis], dtype=int)

    def sector(self, n: int) -> slice:
        """Contiguous index range holding exactly ``n`` photons (total cutoff only)."""
        totals = self.photon_numbers()
        idx = np.flatnonzero(totals == n)
        if idx.size == 0:
            return slice(0, 0)
        return slice(int(idx[0]), int(idx[-1]) + 1)


@dataclass(frozen=True)
class ProductSpace:
    """Tensor product of Fock spaces, basis in Kronecker order."""

    factors: tuple

    @property
    def n_modes(self) -> int:
        return sum(f.n_modes for f in self.factors)

    @cached_property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            sum(parts, ()) for parts in itertools.product(*(f.basis for f in self.factors))
        )

    @property
    def dim(self) -> int:
        return int(np.prod([f.dim for f in self.factors]))

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {occ: i for i, occ in enumerate(self.basis)}

    def index(self, occupation: Sequence[int]) -> int:
        return self._index[tuple(occupation)]

    def factor_modes(self) -> list[tuple[int, ...]]:
        out, start = [], 0
        for f in self.factors:
            out.append(tuple(range(start, start + f.n_modes)))
            start += f.n_modes
        return out


@dataclass(frozen=True)
class FockKet:
    space: ModeSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (self.space.dim,):
            raise ValueError("amplitude vector does not match the space dimension")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def projector(self) -> "FockOperator":
        a = self.amplitudes
        return FockOperator(self.space, np.outer(a, a.conj()))


@dataclass(frozen=True)
class FockOperator:
    """Dense operator between truncated Fock spaces.

    ``domain`` defaults to ``space``; a different domain makes a rectangular
    map such as a network isometry.
    """

    space: object
    matrix: np.ndarray
    domain: object = field(default=None)

    def __post_init__(self):
        if self.domain is None:
            object.__setattr__(self, "domain", self.space)
        if self.matrix.shape != (self.space.dim, self.domain.dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"({self.space.dim}, {self.domain.dim})"
            )

    @property
    def is_square(self) -> bool:
        return self.space == self.domain

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.is_square and bool(np.allclose(self.matrix, self.matrix.conj().T, rtol=0, atol=tol))

    @property
    def dag(self) -> "FockOperator":
        return FockOperator(self.domain, self.matrix.conj().T, self.space)

    def __matmul__(self, other: "FockOperator") -> "FockOperator":
        if self.domain != other.space:
            raise ValueError("incompatible spaces for composition")
        return FockOperator(self.space, self.matrix @ other.matrix, other.domain)

    def expectation(self, state: "FockOperator") -> float:
        return float(np.real(np.trace(self.matrix @ state.matrix)))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


# -- states -------------------------------------------------------------------


def poisson_weights(mu: float, cutoff: int) -> np.ndarray:
    """Poisson probabilities e^{-mu} mu^n / n! for n = 0..cutoff."""
    n = np.arange(cutoff + 1)
    if mu == 0:
        out = np.zeros(cutoff + 1)
        out[0] = 1.0
        return out
    logs = -mu + n * np.log(mu) - np.array([lgamma(k + 1) for k in n])
    return np.exp(logs)


def poisson_tail(mu: float, cutoff: int) -> float:
    """Weight of a Poisson(mu) distribution above ``cutoff``, without cancellation."""
    if mu == 0:
        return 0.0
    return float(gammainc(cutoff + 1, mu))


def coherent_ket(alpha: complex, cutoff: int) -> FockKet:
    """Truncated single-mode coherent state; not renormalised.

    The squared norm falls short of one by ``poisson_tail(|alpha|^2, cutoff)``.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    alpha = complex(alpha)
    mu = abs(alpha) ** 2
    mags = np.sqrt(poisson_weights(mu, cutoff))
    phase = np.exp(1j * np.angle(alpha) * np.arange(cutoff + 1)) if alpha != 0 else 1.0
    return FockKet(ModeSpace(1, cutoff), (mags * phase).astype(complex))


def multimode_coherent_ket(alphas: Sequence[complex], space: ModeSpace) -> FockKet:
    """Product coherent state restricted to ``space`` (amplitudes c_n = prod_k e^{-|a_k|^2/2} a_k^{n_k}/sqrt(n_k!))."""
    alphas = np.asarray(alphas, dtype=complex)
    if alphas.shape != (space.n_modes,):
        raise ValueError("need one amplitude per mode")
    norm = np.exp(-0.5 * np.sum(np.abs(alphas) ** 2))
    amps = np.empty(space.dim, dtype=complex)
    for i, occ in enumerate(space.basis):
        val = norm
        for a, n in zip(alphas, occ):
            val *= a**n / np.sqrt(factorial(n))
        amps[i] = val
    return FockKet(space, amps)


def fock_ket(space: ModeSpace, occupation: Sequence[int]) -> FockKet:
    amps = np.zeros(space.dim, dtype=complex)
    amps[space.index(occupation)] = 1.0
    return FockKet(space, amps)


# -- operators ----------------------------------------------------------------


def identity(space) -> FockOperator:
    return FockOperator(space, np.eye(space.dim, dtype=complex))


def total_photon_projector(space: ModeSpace, N: int) -> FockOperator:
    """Projector onto basis states holding at most ``N`` photons in total."""
    if N < 0:
        raise ValueError("N must be non-negative")
    diag = (space.photon_numbers() <= N).astype(complex)
    return FockOperator(space, np.diag(diag))


def restrict(op: FockOperator, space: ModeSpace) -> FockOperator:
    """Compress a square operator to a graded sub-basis (e.g. a smaller total cutoff)."""
    idx = [op.space.index(occ) for occ in space.basis]
    return FockOperator(space, op.matrix[np.ix_(idx, idx)])


def tensor(a: FockOperator, b: FockOperator) -> FockOperator:
    """Kronecker product; the basis of the result is the product basis in Kronecker order."""
    def factors(s):
        return s.factors if isinstance(s, ProductSpace) else (s,)

    space = ProductSpace(factors(a.space) + factors(b.space))
    domain = ProductSpace(factors(a.domain) + factors(b.domain))
    if domain == space:
        domain = None
    return FockOperator(space, np.kron(a.matrix, b.matrix), domain)


def _kept_space(space, keep: tuple[int, ...]):
    if isinstance(space, ModeSpace):
        return ModeSpace(len(keep), space.cutoff, space.cutoff_kind)
    groups = space.factor_modes()
    kept = [f for f, modes in zip(space.factors, groups) if set(modes) <= set(keep)]
    covered = sorted(m for f, modes in zip(space.factors, groups) if set(modes) <= set(keep) for m in modes)
    if covered != list(keep):
        raise ValueError("partial trace on a product space must keep whole factors")
    return kept[0] if len(kept) == 1 else ProductSpace(tuple(kept))


def partial_trace(op: FockOperator, keep_modes: Sequence[int]) -> FockOperator:
    """Trace out every mode not listed in ``keep_modes``."""
    if not op.is_square:
        raise ValueError("partial trace needs a square operator")
    keep = tuple(sorted(set(int(m) for m in keep_modes)))
    n_modes = op.space.n_modes
    if not keep or keep[0] < 0 or keep[-1] >= n_modes:
        raise ValueError(f"invalid mode subset {keep_modes!r} for {n_modes} modes")
    gone = tuple(m for m in range(n_modes) if m not in keep)
    out_space = _kept_space(op.space, keep)
    out = np.zeros((out_space.dim, out_space.dim), dtype=op.matrix.dtype)
    # group basis indices by the occupation of the traced modes
    groups: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for i, occ in enumerate(op.space.basis):
        key = tuple(occ[m] for m in gone)
        kept_idx = out_space.index(tuple(occ[m] for m in keep))
        groups.setdefault(key, []).append((i, kept_idx))
    for members in groups.values():
        rows = np.array([m[0] for m in members])
        cols = np.array([m[1] for m in members])
        out[np.ix_(cols, cols)] += op.matrix[np.ix_(rows, rows)]
    return FockOperator(out_space, out)


# -- linear optics --------------------------------------------------------------


def _check_isometric(mode_map: np.ndarray, tol: float = 1e-10) -> None:
    gram = mode_map.conj().T @ mode_map
    if not np.allclose(gram, np.eye(mode_map.shape[1]), rtol=0, atol=tol):
        raise ValueError("mode_map columns are not orthonormal")


def linear_network_isometry(mode_map: np.ndarray, N: int) -> FockOperator:
    """Fock-space action of a passive network on all inputs with at most ``N`` photons.

    ``mode_map[k, j]`` is the amplitude for input mode ``j`` to reach output
    mode ``k``.  Each input creation operator is replaced by
    ``sum_k mode_map[k, j] b_k^dag`` and the product is expanded into output
    monomials.
    """
    U = np.asarray(mode_map, dtype=complex)
    _check_isometric(U)
    n_out, n_in = U.shape
    space_in = ModeSpace(n_in, N)
    space_out = ModeSpace(n_out, N)
    V = np.zeros((space_out.dim, space_in.dim), dtype=complex)
    sqrt_fact = np.sqrt([float(factorial(k)) for k in range(N + 1)])

    for col, occ in enumerate(space_in.basis):
        # polynomial in output creation operators: monomial exponents -> coefficient
        poly: dict[tuple[int, ...], complex] = {(0,) * n_out: 1.0 + 0j}
        for j, n_j in enumerate(occ):
            for _ in range(n_j):
                nxt: dict[tuple[int, ...], complex] = {}
                for mono, c in poly.items():
                    for k in range(n_out):
                        amp = U[k, j]
                        if amp == 0:
                            continue
                        m = list(mono)
                        m[k] += 1
                        m = tuple(m)
                        nxt[m] = nxt.get(m, 0) + c * amp
                poly = nxt
        norm_in = np.prod([sqrt_fact[n] for n in occ])
        for mono, c in poly.items():
            V[space_out.index(mono), col] = c * np.prod([sqrt_fact[m] for m in mono]) / norm_in
    return FockOperator(space_out, V, space_in)


def threshold_povm(
    network: np.ndarray,
    observed_bins: Mapping[str, Sequence[int]],
    pattern: Mapping[str, bool],
    N: int,
) -> FockOperator:
    """POVM element of a click pattern of threshold detectors behind a network.

    ``observed_bins`` maps detector labels to disjoint sets of output modes;
    a detector clicks when any of its modes holds a photon.  Output modes in
    no bin are discarded (loss, unused ports).  ``pattern`` maps each label
    to click (True) or no-click (False).  The element acts on the input
    space with at most ``N`` photons and is exact there, because the network
    conserves photon number.
    """
    seen: set[int] = set()
    for label, modes in observed_bins.items():
        if seen & set(modes):
            raise ValueError(f"observed bin {label!r} overlaps another bin")
        seen |= set(modes)
    if set(pattern) != set(observed_bins):
        raise ValueError("pattern must assign click/no-click to every observed bin")
    V = linear_network_isometry(network, N)
    weights = np.ones(V.space.dim)
    for i, occ in enumerate(V.space.basis):
        for label, modes in observed_bins.items():
            clicked = any(occ[m] > 0 for m in modes)
            if clicked != bool(pattern[label]):
                weights[i] = 0.0
                break
    M = V.matrix.conj().T @ (weights[:, None] * V.matrix)
    M = 0.5 * (M + M.conj().T)
    return FockOperator(V.domain, M)


def all_patterns(labels: Sequence[str]) -> list[dict[str, bool]]:
    return [dict(zip(labels, bits)) for bits in itertools.product((False, True), repeat=len(labels))]


# -- spectral helpers -------------------------------------------------------------


def _as_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, FockOperator) else np.asarray(op)


def _require_hermitian(A: np.ndarray, tol: float = 1e-10) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, A.conj().T, rtol=0, atol=tol * scale):
        raise ValueError("operator is not Hermitian")


def hermitian_eig(op) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order with matching eigenvector columns.

    Ties keep the order LAPACK returns for the basis, which is deterministic.
    """
    A = _as_matrix(op)
    _require_hermitian(A)
    vals, vecs = np.linalg.eigh(0.5 * (A + A.conj().T))
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def op_norm(op) -> float:
    """Largest singular value."""
    A = _as_matrix(op)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def trace_norm(op) -> float:
    """Sum of singular values."""
    A = _as_matrix(op)
    if A.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


GEN_INVERSE_RTOL = 1e-12


def gen_inverse_sqrt(op, rtol: float = GEN_INVERSE_RTOL) -> np.ndarray:
    """Generalised inverse of the square root of a PSD matrix.

    Eigenvalues below ``rtol`` times the largest are treated as zero.
    """
    A = _as_matrix(op)
    if A.size == 0:
        return np.zeros_like(A)
    _require_hermitian(A)
    vals, vecs = np.linalg.eigh(0.5 * (A + A.conj().T))
    top = vals.max(initial=0.0)
    if top <= 0:
        return np.zeros_like(A)
    keep = vals > rtol * top
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / np.sqrt(vals[keep])
    out = (vecs * inv) @ vecs.conj().T
    return out
