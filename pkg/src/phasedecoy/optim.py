"""Conic problems over Hermitian PSD blocks, a Clarabel adapter and dual certificates.

A :class:`ConicProblem` holds PSD matrix variables, a linear objective,
scalar linear constraints and linear matrix inequalities of the form

    P - sum_t coef_t * sum_r L_r X_{b_t} L_r^dag  >=  0,

which covers partial-trace bounds such as ``Tr_B X <= P``.  Complex blocks
are mapped to real symmetric ones by :func:`embed_complex` before solving.

Every variable carries an a priori trace cap that is also imposed as an
explicit constraint.  :func:`certify_bound` turns any (approximate) dual
point into a rigorous one-sided bound by projecting the multipliers onto
their cones and charging the residual dual infeasibility against the caps.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

LE, GE, EQ = "<=", ">=", "=="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_TROUBLE = "numerical-trouble"

DEFAULT_TOL = 1e-9
MAX_REL_GAP = 1e-6


@dataclass(frozen=True)
class PsdBlock:
    dim: int
    trace_cap: float
    is_complex: bool = False
    name: str = ""


@dataclass(frozen=True)
class LinearConstraint:
    """``sum_b Re Tr(A_b X_b)  relation  rhs``."""

    coeffs: dict
    relation: str
    rhs: float
    label: str = ""


@dataclass(frozen=True)
class LmiTerm:
    block: int
    kraus: tuple
    coef: float = 1.0


@dataclass(frozen=True)
class LmiConstraint:
    """``const - sum_t coef_t sum_r L_r X_t L_r^dag  is PSD``."""

    const: np.ndarray
    terms: tuple
    label: str = ""


@dataclass
class ConicProblem:
    """Minimise or maximise ``sum_b Re Tr(C_b X_b)`` over PSD blocks."""

    blocks: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    lmis: list = field(default_factory=list)

    def add_block(self, dim: int, trace_cap: float, is_complex: bool = False, name: str = "") -> int:
        if dim < 1:
            raise ValueError("block dimension must be positive")
        if trace_cap <= 0:
            raise ValueError("trace cap must be positive")
        self.blocks.append(PsdBlock(dim, float(trace_cap), is_complex, name))
        return len(self.blocks) - 1

    def add_constraint(self, coeffs: dict, relation: str, rhs: float, label: str = "") -> None:
        if relation not in (LE, GE, EQ):
            raise ValueError(f"unknown relation {relation!r}")
        self._check_refs(coeffs)
        self.constraints.append(LinearConstraint(dict(coeffs), relation, float(rhs), label))

    def add_lmi(self, const: np.ndarray, terms: Sequence[LmiTerm], label: str = "") -> None:
        const = np.asarray(const)
        for t in terms:
            self._check_refs({t.block: None})
            for L in t.kraus:
                if L.shape != (const.shape[0], self.blocks[t.block].dim):
                    raise ValueError("LMI Kraus operator has the wrong shape")
        self.lmis.append(LmiConstraint(const, tuple(terms), label))

    def set_objective(self, coeffs: dict) -> None:
        self._check_refs(coeffs)
        self.objective = dict(coeffs)

    def _check_refs(self, coeffs: dict) -> None:
        for b, A in coeffs.items():
            if not 0 <= b < len(self.blocks):
                raise ValueError(f"constraint references undeclared block {b}")
            if A is not None and np.shape(A) != (self.blocks[b].dim,) * 2:
                raise ValueError(f"coefficient for block {b} has shape {np.shape(A)}")

    @property
    def is_real(self) -> bool:
        return not any(b.is_complex for b in self.blocks)

    def evaluate(self, X: Sequence[np.ndarray]) -> float:
        return sum(float(np.real(np.trace(C @ X[b]))) for b, C in self.objective.items())

    def constraint_values(self, X: Sequence[np.ndarray]) -> np.ndarray:
        return np.array(
            [sum(float(np.real(np.trace(A @ X[b]))) for b, A in c.coeffs.items()) for c in self.constraints]
        )


@dataclass
class SolveResult:
    status: str
    primal_value: float
    dual_value: float
    solution: list
    certified_bound: float
    rel_gap: float
    sense: str
    diagnostics: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# -- complex embedding --------------------------------------------------------------


def _embed(A: np.ndarray) -> np.ndarray:
    re, im = np.real(A), np.imag(A)
    return np.block([[re, -im], [im, re]])


def embed_complex(problem: ConicProblem) -> ConicProblem:
    """Real symmetric problem equivalent to ``problem``.

    A Hermitian ``X`` becomes ``Y = [[Re X, -Im X], [Im X, Re X]]``.  Linear
    coefficients on complex blocks are embedded and halved, since
    ``Tr(emb(A) emb(X)) = 2 Re Tr(A X)``; trace caps double.  Any PSD ``Y``
    maps back to a feasible ``X`` with the same values (see
    :func:`extract_complex`), so the relaxation is exact.
    """
    if problem.is_real:
        return problem

    def coeff(b: int, A: np.ndarray) -> np.ndarray:
        return 0.5 * _embed(A) if problem.blocks[b].is_complex else np.real(A)

    out = ConicProblem()
    for blk in problem.blocks:
        if blk.is_complex:
            out.add_block(2 * blk.dim, 2 * blk.trace_cap, False, blk.name)
        else:
            out.add_block(blk.dim, blk.trace_cap, False, blk.name)
    out.set_objective({b: coeff(b, C) for b, C in problem.objective.items()})
    for c in problem.constraints:
        out.add_constraint({b: coeff(b, A) for b, A in c.coeffs.items()}, c.relation, c.rhs, c.label)
    for lmi in problem.lmis:
        complex_lmi = np.iscomplexobj(lmi.const) and np.any(np.imag(lmi.const)) or any(
            problem.blocks[t.block].is_complex or np.iscomplexobj(np.asarray(L)) and np.any(np.imag(L))
            for t in lmi.terms
            for L in t.kraus
        )
        if not complex_lmi:
            out.add_lmi(np.real(lmi.const), [LmiTerm(t.block, tuple(np.real(L) for L in t.kraus), t.coef) for t in lmi.terms], lmi.label)
            continue
        terms = []
        for t in lmi.terms:
            if problem.blocks[t.block].is_complex:
                kraus = tuple(_embed(np.asarray(L, dtype=complex)) for L in t.kraus)
            else:
                kraus = []
                for L in t.kraus:
                    L = np.asarray(L, dtype=complex)
                    # real X: emb(L X L^dag) = sum of the two stacked real Kraus pairs
                    top = np.vstack([np.real(L), np.imag(L)])
                    bot = np.vstack([-np.imag(L), np.real(L)])
                    kraus += [top, bot]
                kraus = tuple(kraus)
            terms.append(LmiTerm(t.block, kraus, t.coef))
        out.add_lmi(_embed(np.asarray(lmi.const, dtype=complex)), terms, lmi.label)
    return out


def extract_complex(problem: ConicProblem, real_solution: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Map a solution of ``embed_complex(problem)`` back to the original blocks."""
    out = []
    for blk, Y in zip(problem.blocks, real_solution):
        if blk.is_complex:
            n = blk.dim
            X = 0.5 * (Y[:n, :n] + Y[n:, n:]) + 0.5j * (Y[n:, :n] - Y[:n, n:])
            out.append(0.5 * (X + X.conj().T))
        else:
            out.append(Y)
    return out


# -- svec helpers -------------------------------------------------------------------

SQRT2 = np.sqrt(2.0)


@lru_cache(maxsize=None)
def _triu_cols(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle (row, col) indices in column-major order, Clarabel's PSD triangle layout."""
    pairs = [(i, j) for j in range(n) for i in range(j + 1)]
    return np.array([p[0] for p in pairs], dtype=int), np.array([p[1] for p in pairs], dtype=int)


def svec(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    i, j = _triu_cols(n)
    S = 0.5 * (A + A.T)
    return np.where(i == j, 1.0, SQRT2) * S[i, j]


def smat(v: np.ndarray, n: int) -> np.ndarray:
    i, j = _triu_cols(n)
    A = np.zeros((n, n))
    vals = np.where(i == j, 1.0, 1.0 / SQRT2) * v
    A[i, j] = vals
    A[j, i] = vals
    return A


def _svec_to_vec(n: int) -> sp.csr_matrix:
    """Sparse map from svec(X) to row-major vec(X)."""
    i, j = _triu_cols(n)
    rows, cols, vals = [], [], []
    for k, (a, b) in enumerate(zip(i, j)):
        if a == b:
            rows.append(a * n + a)
            cols.append(k)
            vals.append(1.0)
        else:
            rows += [a * n + b, b * n + a]
            cols += [k, k]
            vals += [1 / SQRT2, 1 / SQRT2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * n, len(i)))


def _vec_to_svec(n: int) -> sp.csr_matrix:
    i, j = _triu_cols(n)
    rows, cols, vals = [], [], []
    for k, (a, b) in enumerate(zip(i, j)):
        if a == b:
            rows.append(k)
            cols.append(a * n + a)
            vals.append(1.0)
        else:
            rows += [k, k]
            cols += [a * n + b, b * n + a]
            vals += [1 / SQRT2, 1 / SQRT2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(i), n * n))


def _svec_len(n: int) -> int:
    return n * (n + 1) // 2


# -- solving ------------------------------------------------------------------------


@dataclass
class _Assembled:
    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    cones: list
    offsets: list
    n_nonneg: int
    lmi_rows: list
    n_other: int


def _assemble(problem: ConicProblem, sense: str) -> _Assembled:
    sizes = [_svec_len(b.dim) for b in problem.blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n_var = int(offsets[-1])
    sign = 1.0 if sense == "min" else -1.0

    q = np.zeros(n_var)
    for b, C in problem.objective.items():
        q[offsets[b] : offsets[b + 1]] += sign * svec(np.real(C))

    rows: list[sp.spmatrix] = []
    rhs: list[np.ndarray] = []

    def lin_row(coeffs: dict, scale: float) -> sp.csr_matrix:
        r = np.zeros(n_var)
        for b, Ab in coeffs.items():
            r[offsets[b] : offsets[b + 1]] += scale * svec(np.real(Ab))
        return sp.csr_matrix(r)

    # scalar rows, all as "<=": a.x + s = b, s >= 0
    for c in problem.constraints:
        if c.relation in (LE, EQ):
            rows.append(lin_row(c.coeffs, 1.0))
            rhs.append(np.array([c.rhs]))
        if c.relation in (GE, EQ):
            rows.append(lin_row(c.coeffs, -1.0))
            rhs.append(np.array([-c.rhs]))
    for b, blk in enumerate(problem.blocks):
        rows.append(lin_row({b: np.eye(blk.dim)}, 1.0))
        rhs.append(np.array([blk.trace_cap]))
    n_nonneg = len(rows)
    cones: list = [clarabel.NonnegativeConeT(n_nonneg)] if n_nonneg else []

    # LMI rows: M(x) + s = svec(P), s in PSD
    lmi_rows = []
    for lmi in problem.lmis:
        p = lmi.const.shape[0]
        out_map = _vec_to_svec(p)
        block_maps = {}
        for t in lmi.terms:
            n = problem.blocks[t.block].dim
            K = sum(np.kron(L, L) for L in t.kraus) * t.coef
            M = out_map @ sp.csr_matrix(K) @ _svec_to_vec(n)
            block_maps[t.block] = block_maps.get(t.block, 0) + M
        full = sp.lil_matrix((_svec_len(p), n_var))
        for b, M in block_maps.items():
            full[:, offsets[b] : offsets[b + 1]] = M
        start = sum(r.shape[0] for r in rows)
        rows.append(full.tocsr())
        rhs.append(svec(np.real(lmi.const)))
        cones.append(clarabel.PSDTriangleConeT(p))
        lmi_rows.append((start, start + _svec_len(p), p))

    n_other = sum(r.shape[0] for r in rows)
    # variable rows: -x + s = 0, s in PSD
    for b, blk in enumerate(problem.blocks):
        m = sizes[b]
        r = sp.lil_matrix((m, n_var))
        r[:, offsets[b] : offsets[b + 1]] = -sp.identity(m)
        rows.append(r.tocsr())
        rhs.append(np.zeros(m))
        cones.append(clarabel.PSDTriangleConeT(blk.dim))

    A = sp.vstack(rows).tocsc()
    b = np.concatenate(rhs)
    return _Assembled(A, b, q, cones, list(offsets), n_nonneg, lmi_rows, n_other)


def _settings(tol: float) -> clarabel.DefaultSettings:
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_ktratio = 1e-7
    s.max_iter = 500
    return s


def _certify_min(asm: _Assembled, problem: ConicProblem, z: np.ndarray) -> float:
    """Weak-duality lower bound for the internal minimisation from a raw dual ``z``."""
    z = np.array(z[: asm.n_other], dtype=float)
    if not np.all(np.isfinite(z)):
        return float("nan")
    z[: asm.n_nonneg] = np.maximum(z[: asm.n_nonneg], 0.0)
    for start, stop, p in asm.lmi_rows:
        Z = smat(z[start:stop], p)
        vals, vecs = np.linalg.eigh(Z)
        z[start:stop] = svec((vecs * np.maximum(vals, 0.0)) @ vecs.T)
    A_other = asm.A[: asm.n_other]
    S = asm.q + A_other.T @ z
    bound = -float(asm.b[: asm.n_other] @ z)
    for k, blk in enumerate(problem.blocks):
        Sk = smat(S[asm.offsets[k] : asm.offsets[k + 1]], blk.dim)
        lam = float(np.linalg.eigvalsh(Sk)[0])
        bound += min(0.0, lam) * blk.trace_cap
    return bound


def solve(problem: ConicProblem, sense: str = "min", tol: float = DEFAULT_TOL) -> SolveResult:
    """Solve with Clarabel and attach a certified one-sided bound.

    For ``sense="min"`` the certified bound is a lower bound on the optimum;
    for ``"max"`` it is an upper bound.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    real = embed_complex(problem)
    asm = _assemble(real, sense)
    P = sp.csc_matrix((asm.q.size, asm.q.size))
    try:
        solver = clarabel.DefaultSolver(P, asm.q, asm.A, asm.b, asm.cones, _settings(tol))
        sol = solver.solve()
    except Exception as exc:  # solver-internal failure is reported, never raised as a bound
        logger.warning("solver raised: %s", exc)
        return _failed(problem, sense, f"solver exception: {exc}")

    raw = str(sol.status)
    sign = 1.0 if sense == "min" else -1.0
    x = np.asarray(sol.x)
    blocks_real = [smat(x[asm.offsets[k] : asm.offsets[k + 1]], blk.dim) for k, blk in enumerate(real.blocks)]
    solution = extract_complex(problem, blocks_real)

    if "Infeasible" in raw and "Dual" not in raw:
        return SolveResult(INFEASIBLE, np.nan, np.nan, solution, np.nan, np.nan, sense, raw)

    primal = sign * float(sol.obj_val)
    dual = sign * float(sol.obj_val_dual)
    rel_gap = abs(primal - dual) / max(1.0, abs(primal))
    cert = sign * _certify_min(asm, real, np.asarray(sol.z))
    status = OPTIMAL if raw in ("Solved", "AlmostSolved") and rel_gap <= MAX_REL_GAP else NUMERICAL_TROUBLE
    if not np.isfinite(cert):
        status = NUMERICAL_TROUBLE
    return SolveResult(status, primal, dual, solution, cert, rel_gap, sense, raw)


def _failed(problem: ConicProblem, sense: str, msg: str) -> SolveResult:
    zeros = [np.zeros((b.dim, b.dim), dtype=complex if b.is_complex else float) for b in problem.blocks]
    return SolveResult(NUMERICAL_TROUBLE, np.nan, np.nan, zeros, np.nan, np.nan, sense, msg)


def certify_bound(
    problem: ConicProblem,
    sense: str,
    y: np.ndarray,
    lmi_duals: Sequence[np.ndarray] = (),
) -> float:
    """Rigorous bound from user-supplied multipliers, in the problem's own terms.

    ``y`` holds one multiplier per linear constraint, with signs projected
    so that ``>=`` rows have ``y >= 0`` and ``<=`` rows ``y <= 0``.  The
    bound is ``sum_k y_k rhs_k - sum_l <Z_l, P_l> + sum_b min(0,
    lambda_min(S_b)) cap_b`` with
    ``S_b = C_b - sum_k y_k A_kb + sum_l M_l^*(Z_l)``).  Equality rows take
    any sign.  For ``sense="max"`` the problem is negated first.

    Dual infeasibility ``lambda_min(S_b) < 0`` is charged at the trace cap,
    which is the inflation that keeps the bound valid for inexact duals.
    """
    sign = 1.0 if sense == "min" else -1.0
    y = np.asarray(y, dtype=float).copy()
    if y.shape != (len(problem.constraints),):
        raise ValueError("need one multiplier per linear constraint")
    for k, c in enumerate(problem.constraints):
        if c.relation == LE:
            y[k] = min(y[k], 0.0)
        elif c.relation == GE:
            y[k] = max(y[k], 0.0)
    S = {b: sign * np.asarray(C, dtype=complex) for b, C in problem.objective.items()}
    for b in range(len(problem.blocks)):
        S.setdefault(b, np.zeros((problem.blocks[b].dim,) * 2, dtype=complex))
    bound = float(y @ np.array([c.rhs for c in problem.constraints])) if problem.constraints else 0.0
    for k, c in enumerate(problem.constraints):
        for b, A in c.coeffs.items():
            S[b] = S[b] - y[k] * A
    for lmi, Z in zip(problem.lmis, lmi_duals):
        vals, vecs = np.linalg.eigh(0.5 * (Z + Z.conj().T))
        Z = (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T
        bound -= float(np.real(np.trace(Z @ lmi.const)))
        for t in lmi.terms:
            for L in t.kraus:
                S[t.block] = S[t.block] + t.coef * (L.conj().T @ Z @ L)
    for b, blk in enumerate(problem.blocks):
        H = 0.5 * (S[b] + S[b].conj().T)
        lam = float(np.linalg.eigvalsh(H)[0])
        bound += min(0.0, lam) * blk.trace_cap
    return sign * bound


def with_trace_caps(problem: ConicProblem, caps: Sequence[float]) -> ConicProblem:
    """Copy of ``problem`` with replaced trace caps."""
    out = ConicProblem(
        [replace(b, trace_cap=float(c)) for b, c in zip(problem.blocks, caps)],
        dict(problem.objective),
        list(problem.constraints),
        list(problem.lmis),
    )
    return out
