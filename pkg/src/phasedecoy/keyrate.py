"""Block-decomposed key-rate lower bound for the three-state protocol.

Each approximate eigenvector ``|v_n>`` of the signal-intensity state gives
one block.  Its unknown joint state ``rho_AB`` (Alice's encoding register
times Bob's space with at most ``N`` photons) is constrained by decoy
intervals, by Alice's reduced state and by a trace window.  The
relative-entropy objective is minimised with Frank-Wolfe and the last
iterate is turned into a certified lower bound by linearisation and a
dual-certified conic minimum.

Rates are in bits per signal-intensity round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize_scalar

from . import optim
from .approx_diag import EigenBlock
from .protocol import SIGNALS, Z_EARLY, Z_LATE, EventSchema, preparation_isometry

logger = logging.getLogger(__name__)

EPS_REG = 1e-10
FW_MAX_ITER = 150
FW_REL_TOL = 1e-7
RETRY_FLOORS = (1e-7, 1e-6, 1e-5)

# Alice's key bit for each key-generating signal and Bob's matching Z event
KEY_SIGNALS = {"0": 0, "1": 1}
BOB_GUESS = {Z_LATE: 0, Z_EARLY: 1}


# -- objective -------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveMap:
    """Key map as one Kraus operator per Bob photon-number sector plus a pinching.

    ``kraus[m]`` maps the sector-``m`` input space to the sector-``m``
    output space; ``projectors[m]`` are the pinching projectors on that
    output space.
    """

    kraus: tuple
    projectors: tuple

    def __post_init__(self):
        if len(self.kraus) != len(self.projectors):
            raise ValueError("need one projector set per sector")
        for K, P in zip(self.kraus, self.projectors):
            if np.linalg.eigvalsh(K.conj().T @ K)[-1] > 1 + 1e-9:
                raise ValueError("objective map must be trace non-increasing")
            total = sum(P)
            if not np.allclose(total, np.eye(K.shape[0]), atol=1e-10):
                raise ValueError("pinching projectors must sum to the identity")
            for a in range(len(P)):
                for b in range(len(P)):
                    if not np.allclose(P[a] @ P[b], P[a] if a == b else 0, atol=1e-10):
                        raise ValueError("pinching projectors must be orthogonal projectors")

    @property
    def out_dim(self) -> int:
        return sum(K.shape[0] for K in self.kraus)

    def apply(self, rho: Sequence[NDArray]) -> list[NDArray]:
        return [K @ r @ K.conj().T for K, r in zip(self.kraus, rho)]


def _psd_sqrt(A: NDArray) -> NDArray:
    vals, vecs = np.linalg.eigh(0.5 * (A + A.conj().T))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T


def build_objective_map(povms: Mapping[str, NDArray], sectors: Sequence[slice], n_signals: int = len(SIGNALS)) -> ObjectiveMap:
    """Keep rounds where Alice sent ``0`` or ``1`` and Bob saw a Z event; pinch Alice's register.

    ``povms`` are Bob's event operators on his truncated space.
    """
    keep_a = np.zeros((n_signals, n_signals))
    for i in KEY_SIGNALS.values():
        keep_a[i, i] = 1.0
    kept = np.real(povms[Z_EARLY] + povms[Z_LATE])
    kraus, projs = [], []
    for sl in sectors:
        root = _psd_sqrt(kept[sl, sl])
        s = sl.stop - sl.start
        kraus.append(np.kron(keep_a, root))
        projs.append(tuple(np.kron(np.diag(np.eye(n_signals)[i]), np.eye(s)) for i in range(n_signals)))
    return ObjectiveMap(tuple(kraus), tuple(projs))


def _logm(A: NDArray) -> NDArray:
    vals, vecs = np.linalg.eigh(0.5 * (A + A.conj().T))
    return (vecs * np.log(vals)) @ vecs.conj().T


def _pinch(P: Sequence[NDArray], A: NDArray) -> NDArray:
    return sum(p @ A @ p for p in P)


def _regularise(G: list[NDArray], eps: float, dim: int) -> list[NDArray]:
    return [(1 - eps) * g + eps * np.eye(g.shape[0]) / dim for g in G]


def objective(rho: Sequence[NDArray], omap: ObjectiveMap, eps: float = EPS_REG) -> float:
    """``D(G(rho) || Z(G(rho)))`` in bits, with ``G`` regularised by ``eps``."""
    G = _regularise(omap.apply(rho), eps, omap.out_dim)
    total = 0.0
    for g, P in zip(G, omap.projectors):
        z = _pinch(P, g)
        total += float(np.real(np.trace(g @ (_logm(g) - _logm(z)))))
    return total / np.log(2)


def gradient(rho: Sequence[NDArray], omap: ObjectiveMap, eps: float = EPS_REG) -> list[NDArray]:
    """Gradient of :func:`objective` with respect to each sector block."""
    G = _regularise(omap.apply(rho), eps, omap.out_dim)
    out = []
    for K, g, P in zip(omap.kraus, G, omap.projectors):
        L = _logm(g) - _logm(_pinch(P, g))
        out.append((1 - eps) * K.conj().T @ L @ K / np.log(2))
    return out


def regularisation_penalty(eps: float, dim: int) -> float:
    """Continuity cost in bits of the ``eps`` regularisation on a ``dim``-dimensional output."""
    if eps <= 0:
        return 0.0
    return float(2 * eps * (dim - 1) * np.log2(dim / (eps * (dim - 1))))


# -- block data ------------------------------------------------------------------------


def rho_A_block(block: EigenBlock | NDArray, priors: Sequence[float]) -> NDArray[np.float64]:
    """Alice's reduced source state ``sqrt(p_i p_j) <v|V_i^dag V_j|v>`` for one block vector."""
    v = block.vector.amplitudes if isinstance(block, EigenBlock) else np.asarray(block)
    cutoff = v.shape[0] - 1
    kets = [preparation_isometry(s, cutoff).matrix @ v for s in SIGNALS]
    p = np.sqrt(np.asarray(priors, dtype=float))
    gram = np.array([[np.vdot(a, b) for b in kets] for a in kets])
    out = np.outer(p, p) * gram
    return np.real_if_close(0.5 * (out + out.conj().T), tol=1e6)


def block_weight_floor(pi_n_lower: Sequence[float], priors: Sequence[float]) -> float:
    """``W = 1 - sum_i p(i) Y^L(i, Pi_N)``, clamped to [0, 1]."""
    val = 1.0 - float(np.dot(priors, pi_n_lower))
    return float(min(1.0, max(0.0, val)))


@dataclass(frozen=True)
class YieldRow:
    """``lo <= sum_m Tr[ops[m] rho_m] <= hi``; ``None`` skips a side."""

    ops: tuple
    lo: float | None
    hi: float | None
    label: str = ""


@dataclass
class BlockProblem:
    """Feasible set of one block.

    ``rows`` already include the eigenvector error; ``rho_A`` is built from
    the approximate eigenvector and is widened by ``eps_vec`` times a slack.
    """

    index: int
    weight: float
    rho_A: NDArray
    sector_dims: tuple
    rows: list
    trace_window: tuple
    eps_vec: float
    usable: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight = max(0.0, float(self.weight))
        lo, hi = self.trace_window
        if lo > hi + 1e-12:
            raise ValueError("empty trace window")
        if np.linalg.eigvalsh(self.rho_A)[0] < -1e-9:
            raise ValueError("rho_A must be PSD")

    @property
    def a_dim(self) -> int:
        return self.rho_A.shape[0]

    def conic(self, upper_floor: float = 0.0) -> optim.ConicProblem:
        """Conic skeleton: sector blocks of ``rho_AB`` followed by the slack ``S``."""
        prob = optim.ConicProblem()
        na = self.a_dim
        for m, s in enumerate(self.sector_dims):
            prob.add_block(na * s, trace_cap=1.0, name=f"rho{m}")
        s_blk = prob.add_block(na, trace_cap=1.0, name="S")
        for r in self.rows:
            coeffs = {m: op for m, op in enumerate(r.ops)}
            if r.lo is not None and r.lo > 0:
                prob.add_constraint(coeffs, optim.GE, r.lo, r.label + ":lo")
            if r.hi is not None:
                prob.add_constraint(coeffs, optim.LE, max(r.hi, upper_floor), r.label + ":hi")
        ident = {m: np.eye(na * s) for m, s in enumerate(self.sector_dims)}
        lo, hi = self.trace_window
        if lo > 0:
            prob.add_constraint(ident, optim.GE, lo, "trace:lo")
        prob.add_constraint(ident, optim.LE, max(hi, upper_floor), "trace:hi")
        eye = np.eye(na)
        terms = []
        for m, s in enumerate(self.sector_dims):
            kraus = tuple(np.kron(eye, np.eye(s)[k : k + 1]) for k in range(s))
            terms.append(optim.LmiTerm(m, kraus))
        terms.append(optim.LmiTerm(s_blk, (eye,), coef=-self.eps_vec))
        prob.add_lmi(np.real(self.rho_A), terms, "Tr_B rho <= rho_A + eps_vec S")
        return prob


def protocol_rows(
    povms: Mapping[str, NDArray],
    sectors: Sequence[slice],
    priors: Sequence[float],
    intervals: Mapping[tuple[str, str], tuple[float, float]],
) -> list[YieldRow]:
    """Rows ``p_i Y^L <= Tr[(|i><i| (x) F) rho] <= p_i Y^U`` for every interval.

    ``intervals[(signal, event)]`` must already carry the eigenvector error.
    Event labels may be any key of ``povms``.
    """
    na = len(SIGNALS)
    rows = []
    for (signal, event), (lo, hi) in intervals.items():
        i = SIGNALS.index(signal)
        p = float(priors[i])
        if p == 0:
            continue
        proj = np.zeros((na, na))
        proj[i, i] = 1.0
        F = np.real(povms[event])
        ops = tuple(np.kron(proj, F[sl, sl]) for sl in sectors)
        rows.append(YieldRow(ops, p * lo if lo > 0 else None, p * hi if hi < 1 else None, f"{event}|{signal}"))
    return rows


# -- solver ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockResult:
    index: int
    weight: float
    rate: float
    bound: float
    f_best: float
    iterations: int
    certified: bool
    rel_gap: float
    diagnostics: str = ""


def _split(X: Sequence[NDArray], n_sectors: int) -> list[NDArray]:
    """Sector blocks of a solver point, projected onto the PSD cone."""
    out = []
    for m in range(n_sectors):
        A = np.real(np.asarray(X[m]))
        vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
        out.append((vecs * np.clip(vals, 0, None)) @ vecs.T)
    return out


def _solve_linear(problem: BlockProblem, grad: Sequence[NDArray], base: optim.ConicProblem, certify: bool) -> optim.SolveResult:
    coeffs = {m: g for m, g in enumerate(grad)}
    floors = (None,) + (RETRY_FLOORS if certify else ())
    res = None
    for floor in floors:
        prob = base if floor is None else problem.conic(floor)
        prob.set_objective(coeffs)
        res = optim.solve(prob, "min")
        if res.ok:
            return res
    return res


def solve_block(
    problem: BlockProblem,
    omap: ObjectiveMap,
    max_iter: int = FW_MAX_ITER,
    rel_tol: float = FW_REL_TOL,
    eps: float = EPS_REG,
) -> BlockResult:
    """Certified ``weight * max(0, min f)`` for one block.

    Frank-Wolfe only supplies the linearisation point.  The reported bound
    is ``f(rho*) - <grad, rho*> + min_feasible <grad, sigma> - zeta`` with the
    minimum replaced by its dual certificate.  Solver trouble gives 0.
    """
    n = len(problem.sector_dims)
    if not problem.usable or problem.weight <= 0:
        return BlockResult(problem.index, problem.weight, 0.0, 0.0, np.nan, 0, True, 0.0, "skipped")
    base = problem.conic()
    base.set_objective({})
    start = optim.solve(base, "min")
    if start.status == optim.INFEASIBLE:
        return BlockResult(problem.index, problem.weight, 0.0, 0.0, np.nan, 0, False, np.nan, "infeasible")
    rho = _split(start.solution, n)
    f = objective(rho, omap, eps)
    it = 0
    for it in range(1, max_iter + 1):
        grad = gradient(rho, omap, eps)
        res = _solve_linear(problem, grad, base, certify=False)
        if res.status == optim.INFEASIBLE or not all(np.all(np.isfinite(x)) for x in res.solution):
            break
        sigma = _split(res.solution, n)
        direction = [s - r for s, r in zip(sigma, rho)]
        fw_gap = -sum(float(np.sum(g * d)) for g, d in zip(grad, direction))
        if fw_gap <= rel_tol * max(abs(f), 1e-12):
            break

        def along(t: float) -> float:
            return objective([r + t * d for r, d in zip(rho, direction)], omap, eps)

        step = minimize_scalar(along, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-8})
        t = float(step.x) if step.fun < f else 0.0
        if t == 0.0:
            break
        rho = [r + t * d for r, d in zip(rho, direction)]
        f_new = objective(rho, omap, eps)
        improvement = f - f_new
        f = f_new
        if improvement <= rel_tol * max(abs(f), 1e-12):
            break

    grad = gradient(rho, omap, eps)
    res = _solve_linear(problem, grad, base, certify=True)
    zeta = regularisation_penalty(eps, omap.out_dim)
    if not res.ok:
        logger.warning("block %d: final linear bound not certified (%s); rate set to 0", problem.index, res.diagnostics)
        return BlockResult(problem.index, problem.weight, 0.0, 0.0, f, it, False, res.rel_gap, res.diagnostics)
    linear_at_rho = sum(float(np.sum(g * r)) for g, r in zip(grad, rho))
    bound = f - linear_at_rho + res.certified_bound - zeta
    if bound > f + 1e-6 * max(1.0, abs(f)):
        logger.warning("block %d: certified bound %.3g exceeds f(rho*) = %.3g", problem.index, bound, f)
    # rho* is feasible only to solver tolerance; capping at f keeps the bound valid
    bound = min(bound, f)
    rate = problem.weight * max(0.0, bound)
    return BlockResult(problem.index, problem.weight, rate, bound, f, it, True, res.rel_gap, res.diagnostics)


# -- error correction and totals -------------------------------------------------------


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def delta_leak(
    gamma: Mapping[str, Sequence[float]],
    priors: Sequence[float],
    schema: EventSchema = EventSchema(),
    f_ec: float = 1.0,
) -> float:
    """``f_EC * p(kept) * H(Alice bit | Bob Z event)`` from signal-intensity statistics.

    ``gamma[signal]`` is the event distribution of that signal.
    """
    if f_ec < 1:
        raise ValueError("f_EC must be at least 1")
    joint = np.zeros((2, 2))
    for signal, a in KEY_SIGNALS.items():
        p = float(priors[SIGNALS.index(signal)])
        for event, b in BOB_GUESS.items():
            joint[a, b] += p * float(gamma[signal][schema.index(event)])
    kept = float(joint.sum())
    if kept <= 0:
        return 0.0
    pj = joint / kept
    pb = pj.sum(axis=0)

    def h(x: NDArray) -> float:
        x = x[x > 0]
        return float(-np.sum(x * np.log2(x)))

    cond = max(0.0, h(pj.ravel()) - h(pb))
    return float(f_ec * kept * cond)


@dataclass(frozen=True)
class KeyRatePoint:
    distance: float
    q: float
    blocks: tuple
    delta_leak: float
    raw_rate: float
    rate: float
    ledger: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return all(b.certified for b in self.blocks)


def total_keyrate(
    blocks: Sequence[BlockResult],
    leak: float,
    distance: float = 0.0,
    q: float = 1.0,
    ledger: Mapping | None = None,
) -> KeyRatePoint:
    """``R = sum_n R_n - delta_leak``, reported raw and clamped at 0."""
    raw = float(sum(b.rate for b in blocks)) - float(leak)
    return KeyRatePoint(float(distance), float(q), tuple(blocks), float(leak), raw, max(0.0, raw), dict(ledger or {}))
