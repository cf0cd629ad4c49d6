"""Generalised decoy-state bounds on virtual-state statistics.

For one encoded signal the unknown channel (preparation isometry followed
by Eve's channel) is represented by its Choi matrix ``J`` projected onto
at most ``d`` photons at the source and ``N`` photons at Bob.  Observed
statistics of the actual laser states constrain ``J`` up to correction
terms for the discarded parts of the states and of Bob's space.  Virtual
statistics ``Tr[(sigma^T (x) F) J]`` are then bounded by two SDPs.

Every POVM in this package commutes with Bob's photon number, so ``J`` can
be taken block diagonal in that number without changing any optimum.
All data are real, so ``J`` can also be taken real.  Both reductions are
on by default and can be switched off for cross-checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import linprog

from . import optim
from .approx_diag import projection_budget
from .fock import FockOperator, ModeSpace, total_photon_projector

logger = logging.getLogger(__name__)

PI_N = "Pi_N"


@dataclass(frozen=True)
class Corrections:
    """Per-intensity correction terms: source tail ``w``, off-diagonal ``eps``, Bob tail ``W``."""

    w: float
    eps: float
    W: float

    def __post_init__(self):
        if min(self.w, self.eps, self.W) < 0:
            raise ValueError("corrections must be non-negative")


@dataclass(frozen=True)
class DecoyInstance:
    """Decoy data for one encoded signal.

    ``states[mu]`` are the projected actual states on ``d + 1`` Fock levels,
    ``povms[event]`` the projected POVM elements on two modes with at most
    ``N`` photons, ``stats[mu][event]`` the observed probabilities.
    """

    states: dict
    povms: dict
    stats: dict
    corrections: dict
    N: int

    def __post_init__(self):
        dims = {rho.matrix.shape for rho in self.states.values()}
        if len(dims) != 1:
            raise ValueError("actual states must share one space")
        kdim = ModeSpace(2, self.N).dim
        for event, G in self.povms.items():
            if G.matrix.shape != (kdim, kdim):
                raise ValueError(f"POVM {event!r} does not live on the N-photon space")
        if set(self.stats) != set(self.states) or set(self.corrections) != set(self.states):
            raise ValueError("stats, states and corrections must cover the same intensities")

    @property
    def d(self) -> int:
        return next(iter(self.states.values())).matrix.shape[0] - 1

    @property
    def bob_space(self) -> ModeSpace:
        return ModeSpace(2, self.N)


@dataclass(frozen=True)
class YieldInterval:
    lower: float
    upper: float
    applied: dict = field(default_factory=dict)
    certified: bool = True
    rel_gap: float = 0.0

    def __post_init__(self):
        if self.lower > self.upper + 1e-15:
            raise ValueError("lower bound exceeds upper bound")


@dataclass
class Smn:
    """Assembled feasible set: the conic skeleton plus the map from operators to block coefficients.

    ``alice`` lists the source Fock levels carried by the variable blocks.
    When the vacuum input is pinned (see :func:`build_smn`), level 0 is
    absent and its fixed contribution enters through :meth:`constant`.
    """

    problem: optim.ConicProblem
    sectors: list
    dim_m: int
    alice: np.ndarray
    vacuum_pinned: bool = False
    rebuild: Callable[[float], Smn] | None = field(default=None, repr=False, compare=False)
    upper_floor: float = 0.0
    _relaxed: dict = field(default_factory=dict, repr=False, compare=False)

    def relaxed(self, floor: float) -> Smn:
        """Copy whose upper rows are raised to at least ``floor`` (a valid relaxation)."""
        if self.rebuild is None:
            raise ValueError("this feasible set cannot be rebuilt")
        if floor not in self._relaxed:
            self._relaxed[floor] = self.rebuild(floor)
        return self._relaxed[floor]

    def coefficients(self, sigma_t: np.ndarray, F: np.ndarray) -> dict:
        """Block coefficients of ``Tr[(sigma_t (x) F) J]`` on the variable part."""
        s = sigma_t[np.ix_(self.alice, self.alice)]
        return {b: np.kron(s, F[sl, sl]) for b, sl in enumerate(self.sectors)}

    def constant(self, sigma_t: np.ndarray, F: np.ndarray) -> float:
        """Contribution of the pinned vacuum part to ``Tr[(sigma_t (x) F) J]``."""
        if not self.vacuum_pinned:
            return 0.0
        return float(np.real(sigma_t[0, 0] * F[0, 0]))


def _sectors(space: ModeSpace, blocked: bool) -> list[slice]:
    if not blocked:
        return [slice(0, space.dim)]
    return [space.sector(m) for m in range(space.cutoff + 1)]


def _pinned_vacuum_intensity(instance: DecoyInstance) -> float | None:
    """Intensity whose data force the vacuum input onto Bob's vacuum, if any.

    Requires a vacuum state with zero corrections and an event observed
    with certainty whose POVM element reaches 1 only on Bob's vacuum.
    """
    vac = np.zeros((instance.d + 1,) * 2)
    vac[0, 0] = 1.0
    s0 = instance.bob_space.sector(0)
    for mu, rho in instance.states.items():
        c = instance.corrections[mu]
        if c.w or c.eps or c.W or not np.allclose(rho.matrix, vac, rtol=0, atol=1e-15):
            continue
        for event, G in instance.povms.items():
            if instance.stats[mu][event] < 1.0:
                continue
            g = G.matrix
            rest = g[s0.stop :, s0.stop :]
            top = np.linalg.eigvalsh(rest)[-1] if rest.size else 0.0
            if abs(g[0, 0] - 1) < 1e-12 and top < 1 - 1e-9:
                return mu
    return None


def build_smn(
    instance: DecoyInstance,
    blocked: bool = True,
    real: bool = True,
    pin_vacuum: bool = True,
    upper_floor: float = 0.0,
) -> Smn:
    """Constraints defining the projected Choi feasible set for one signal.

    With ``pin_vacuum`` and the block-diagonal form, a vacuum decoy that
    never clicks fixes ``J`` on the source vacuum to ``|0,vac><0,vac|``
    and decouples it from the other levels.  The rows of that intensity
    are then constant and dropped.  This is exact.  It also removes the
    empty interior that otherwise stalls interior-point solvers.

    ``upper_floor`` raises every upper row to at least that value.  It
    only enlarges the set, so bounds stay valid; it is used as a retry when
    a near-zero upper row leaves too thin an interior.
    """
    dm = instance.d + 1
    sectors = _sectors(instance.bob_space, blocked)
    pinned_mu = _pinned_vacuum_intensity(instance) if (pin_vacuum and blocked) else None
    alice = np.arange(1, dm) if pinned_mu is not None else np.arange(dm)
    na = len(alice)
    prob = optim.ConicProblem()
    for m, sl in enumerate(sectors):
        prob.add_block(na * (sl.stop - sl.start), trace_cap=float(max(na, 1)), is_complex=not real, name=f"J{m}")
    rebuild = lambda f: build_smn(instance, blocked, real, pin_vacuum, f)  # noqa: E731
    smn = Smn(prob, sectors, dm, alice, pinned_mu is not None, rebuild, upper_floor)

    pi_n = total_photon_projector(instance.bob_space, instance.N).matrix
    for mu in sorted(instance.states):
        rho_t = instance.states[mu].matrix.T
        c = instance.corrections[mu]
        rows = [(event, G.matrix, float(instance.stats[mu][event])) for event, G in instance.povms.items()]
        for event, G, gamma in rows:
            lo = gamma - c.W - c.w - 2 * c.eps
            hi = gamma + c.eps
            const = smn.constant(rho_t, G)
            if mu == pinned_mu:
                if not lo - 1e-12 <= const <= hi + 1e-12:
                    raise ValueError("pinned vacuum contradicts its own statistics")
                continue
            coeffs = smn.coefficients(rho_t, G)
            if lo - const > 0:
                prob.add_constraint(coeffs, optim.GE, lo - const, f"{event}@{mu}:lo")
            prob.add_constraint(coeffs, optim.LE, max(hi - const, upper_floor), f"{event}@{mu}:hi")
        lo_n = 1.0 - c.W - c.w - c.eps
        if mu != pinned_mu and lo_n - smn.constant(rho_t, pi_n) > 0:
            prob.add_constraint(smn.coefficients(rho_t, pi_n), optim.GE, lo_n - smn.constant(rho_t, pi_n), f"{PI_N}@{mu}:lo")

    eye = np.eye(na)
    terms = []
    for b, sl in enumerate(sectors):
        s = sl.stop - sl.start
        kraus = tuple(np.kron(eye, np.eye(s)[r : r + 1]) for r in range(s))
        terms.append(optim.LmiTerm(b, kraus))
    prob.add_lmi(eye, terms, "Tr_K J <= Pi_M")
    return smn


def build_joint_smn(
    instances: Mapping[str, DecoyInstance],
    prep: Mapping[str, np.ndarray],
    blocked: bool = True,
    pin_vacuum: bool = True,
    upper_floor: float = 0.0,
) -> Smn:
    """Feasible set of one channel acting on the prepared two-mode states of every signal.

    This is the unrelaxed form: a single Choi matrix on the two-mode source
    space (``prep[signal]`` maps the one-mode pulse onto it) must explain
    the data of all signals at once.  Its size grows quickly with ``d``, so
    it is meant for cross-checks at small cutoffs.  Virtual states passed to
    :func:`yield_bounds` with this skeleton must already be mapped onto the
    two-mode space, e.g. with :func:`prepare_virtual`.  Vacuum pinning
    applies when every signal pins the same vacuum intensity; the
    preparation isometries must map vacuum onto the first basis state.
    """
    if set(instances) != set(prep):
        raise ValueError("need one preparation isometry per signal")
    first = next(iter(instances.values()))
    da = next(iter(prep.values())).shape[0]
    sectors = _sectors(first.bob_space, blocked)
    pinned_mu = None
    if pin_vacuum and blocked:
        pins = {_pinned_vacuum_intensity(inst) for inst in instances.values()}
        vac_ok = all(abs(abs(np.asarray(V)[0, 0]) - 1) < 1e-12 for V in prep.values())
        if len(pins) == 1 and vac_ok:
            pinned_mu = pins.pop()
    alice = np.arange(1, da) if pinned_mu is not None else np.arange(da)
    na = len(alice)
    prob = optim.ConicProblem()
    for m, sl in enumerate(sectors):
        prob.add_block(na * (sl.stop - sl.start), trace_cap=float(na), name=f"J{m}")
    rebuild = lambda f: build_joint_smn(instances, prep, blocked, pin_vacuum, f)  # noqa: E731
    smn = Smn(prob, sectors, da, alice, pinned_mu is not None, rebuild, upper_floor)
    for signal, inst in instances.items():
        V = np.asarray(prep[signal])
        if V.shape != (da, inst.d + 1):
            raise ValueError("preparation isometry has the wrong shape")
        pi_n = total_photon_projector(inst.bob_space, inst.N).matrix
        for mu in sorted(inst.states):
            if mu == pinned_mu:
                continue
            rho_t = np.real_if_close((V @ inst.states[mu].matrix @ V.conj().T).T)
            c = inst.corrections[mu]
            for event, G in inst.povms.items():
                gamma = float(inst.stats[mu][event])
                coeffs = smn.coefficients(rho_t, G.matrix)
                const = smn.constant(rho_t, G.matrix)
                lo = gamma - c.W - c.w - 2 * c.eps - const
                if lo > 0:
                    prob.add_constraint(coeffs, optim.GE, lo, f"{event}|{signal}@{mu}:lo")
                hi = max(gamma + c.eps - const, upper_floor)
                prob.add_constraint(coeffs, optim.LE, hi, f"{event}|{signal}@{mu}:hi")
            lo_n = 1.0 - c.W - c.w - c.eps - smn.constant(rho_t, pi_n)
            if lo_n > 0:
                prob.add_constraint(smn.coefficients(rho_t, pi_n), optim.GE, lo_n, f"{PI_N}|{signal}@{mu}:lo")
    eye = np.eye(na)
    terms = []
    for b, sl in enumerate(sectors):
        s = sl.stop - sl.start
        terms.append(optim.LmiTerm(b, tuple(np.kron(eye, np.eye(s)[r : r + 1]) for r in range(s))))
    prob.add_lmi(eye, terms, "Tr_K J <= 1")
    return smn


def prepare_virtual(sigma: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Virtual one-mode state pushed through a preparation isometry."""
    return np.real_if_close(V @ np.asarray(sigma) @ V.conj().T)


def _source_corrections(sigma: np.ndarray, dm: int) -> tuple[np.ndarray, float, float]:
    """Projected virtual state and its (w, eps) costs when it extends beyond the source cutoff."""
    if sigma.shape[0] == dm:
        return sigma, 0.0, 0.0
    if sigma.shape[0] < dm:
        raise ValueError("virtual state has fewer levels than the source cutoff")
    budget = projection_budget(FockOperator(ModeSpace(1, sigma.shape[0] - 1), sigma.astype(complex)), dm - 1)
    return sigma[:dm, :dm], budget.w, budget.eps_proj


RETRY_FLOORS = (1e-7, 1e-6, 1e-5)


def _solve_sense(smn: Smn, coeffs: dict, sense: str, tol: float) -> optim.SolveResult:
    """Solve, retrying on relaxed copies when the solver does not certify."""
    res = None
    for floor in (None,) + (RETRY_FLOORS if smn.rebuild is not None else ()):
        target = smn if floor is None else smn.relaxed(max(floor, smn.upper_floor))
        target.problem.set_objective(coeffs)
        res = optim.solve(target.problem, sense, tol)
        if res.ok:
            return res
    return res


def _solve_pair(smn: Smn, coeffs: dict, tol: float, sides: str = "both") -> tuple[float, float, bool, float]:
    """Certified (min, max); an uncertified or skipped side falls back to 0 or 1."""
    results = []
    lo_v, hi_v = -np.inf, np.inf
    if sides in ("both", "lower"):
        lo = _solve_sense(smn, coeffs, "min", tol)
        results.append(lo)
        if lo.ok:
            lo_v = lo.certified_bound
        else:
            logger.warning("decoy minimum not certified (%s); using 0", lo.diagnostics)
    if sides in ("both", "upper"):
        hi = _solve_sense(smn, coeffs, "max", tol)
        results.append(hi)
        if hi.ok:
            hi_v = hi.certified_bound
        else:
            logger.warning("decoy maximum not certified (%s); using 1", hi.diagnostics)
    gaps = [r.rel_gap for r in results if r.ok]
    return lo_v, hi_v, all(r.ok for r in results), max(gaps) if gaps else np.nan


def yield_bounds(
    instance: DecoyInstance,
    sigma: np.ndarray | FockOperator,
    F: np.ndarray | FockOperator,
    smn: Smn | None = None,
    tol: float = optim.DEFAULT_TOL,
    sides: str = "both",
) -> YieldInterval:
    """Certified interval for ``Tr[F Phi(sigma)]`` with ``0 <= F <= Pi_N``.

    ``sides`` may be ``"lower"`` or ``"upper"`` to solve one SDP only; the
    other end is then the trivial 0 or 1.
    """
    if sides not in ("both", "lower", "upper"):
        raise ValueError("sides must be 'both', 'lower' or 'upper'")
    sigma = sigma.matrix if isinstance(sigma, FockOperator) else np.asarray(sigma)
    F = F.matrix if isinstance(F, FockOperator) else np.asarray(F)
    smn = smn or build_smn(instance)
    sig_m, w, eps = _source_corrections(sigma, smn.dim_m)
    if not np.any(F):
        return YieldInterval(0.0, 0.0, {"eps_iM": eps, "w_iM": w})
    sig_t = np.real_if_close(sig_m.T)
    lo, hi, ok, gap = _solve_pair(smn, smn.coefficients(sig_t, F), tol, sides)
    const = smn.constant(sig_t, F)
    lo, hi = lo + const, hi + const
    lo = lo - eps
    hi = hi + w + eps
    lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
    return YieldInterval(min(lo, hi), hi, {"eps_iM": eps, "w_iM": w}, ok, gap)


def general_povm_yield_bounds(
    instance: DecoyInstance,
    sigma: np.ndarray | FockOperator,
    F: FockOperator,
    W_iN: float | None = None,
    smn: Smn | None = None,
    tol: float = optim.DEFAULT_TOL,
) -> YieldInterval:
    """Interval for a POVM element that may act beyond ``N`` photons.

    ``F`` lives on two modes with any total cutoff ``>= N`` and must be block
    diagonal in photon number.  ``W_iN`` defaults to ``1 - Y^L(sigma, Pi_N)``.
    """
    smn = smn or build_smn(instance)
    space = F.space
    if space.cutoff < instance.N:
        raise ValueError("F must be defined on at least N photons")
    keep = [space.index(occ) for occ in instance.bob_space.basis]
    F_n = F.matrix[np.ix_(keep, keep)]
    sigma_m = sigma.matrix if isinstance(sigma, FockOperator) else np.asarray(sigma)
    if W_iN is None:
        pi_n = total_photon_projector(instance.bob_space, instance.N).matrix
        W_iN = 1.0 - yield_bounds(instance, sigma_m, pi_n, smn, tol).lower
    base = yield_bounds(instance, sigma_m, F_n, smn, tol)
    outside = F.matrix.copy()
    outside[np.ix_(keep, keep)] = 0
    if not np.any(outside):
        return base
    # base.upper already carries w_iM + eps_iM; the general case costs a second eps_iM
    hi = min(1.0, base.upper + W_iN + base.applied["eps_iM"])
    applied = dict(base.applied, W_iN=W_iN)
    return YieldInterval(base.lower, hi, applied, base.certified, base.rel_gap)


def eigvec_corrected_bounds(bounds: YieldInterval, eps_vec: float) -> YieldInterval:
    """Widen by the eigenvector error; an infinite error gives the trivial interval."""
    if not np.isfinite(eps_vec):
        return YieldInterval(0.0, 1.0, dict(bounds.applied, eps_vec=eps_vec), bounds.certified, bounds.rel_gap)
    lo = min(max(bounds.lower - eps_vec, 0.0), 1.0)
    hi = min(max(bounds.upper + eps_vec, 0.0), 1.0)
    return YieldInterval(lo, hi, dict(bounds.applied, eps_vec=eps_vec), bounds.certified, bounds.rel_gap)


def standard_decoy_lp(
    gammas: Mapping[float, float],
    poisson: Mapping[float, np.ndarray],
    n_max: int,
    target: int,
) -> tuple[float, float]:
    """Bounds on the ``target``-photon yield of one (signal, event) pair from phase-randomised data.

    ``gammas[mu]`` is the observed probability and ``poisson[mu]`` the
    photon-number weights for at least ``n_max + 1`` terms.  Photon numbers
    above ``n_max`` contribute an unknown amount between 0 and their weight.
    """
    if not 0 <= target <= n_max:
        raise ValueError("target must lie in 0..n_max")
    rows, rhs = [], []
    for mu, g in gammas.items():
        p = np.asarray(poisson[mu][: n_max + 1], dtype=float)
        tail = max(0.0, 1.0 - float(np.sum(p)))
        rows.append(p)
        rhs.append(g)
        rows.append(-p)
        rhs.append(-(g - tail))
    c = np.zeros(n_max + 1)
    c[target] = 1.0
    out = []
    for sign in (1.0, -1.0):
        res = linprog(sign * c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=[(0, 1)] * (n_max + 1), method="highs")
        if res.status == 2:
            raise ValueError("statistics are inconsistent with any photon-number yields")
        if res.status != 0:
            raise RuntimeError(f"LP failed: {res.message}")
        out.append(sign * res.fun)
    return float(max(0.0, out[0])), float(min(1.0, out[1]))
