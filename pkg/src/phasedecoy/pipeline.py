"""End-to-end key-rate evaluation for one (q, distance) point.

Two exact symmetries of the three-state setup cut the number of decoy
SDPs.  Swapping the two time bins maps signal ``0`` onto signal ``1``.
The same swap exchanges Z-early and Z-late and leaves every other event
and the cross-click rate unchanged.  So the yields of signal ``1`` are
those of signal ``0`` with the two Z events exchanged.  Signal ``+`` is
invariant under the swap, so its two Z yields coincide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .approx_diag import EigenBlock, approx_eigendecomposition, model_budget
from .decoy import (
    Corrections,
    DecoyInstance,
    YieldInterval,
    build_smn,
    eigvec_corrected_bounds,
    yield_bounds,
)
from .fock import poisson_tail, total_photon_projector
from .keyrate import (
    FW_MAX_ITER,
    FW_REL_TOL,
    BlockProblem,
    BlockResult,
    KeyRatePoint,
    block_weight_floor,
    build_objective_map,
    delta_leak,
    protocol_rows,
    rho_A_block,
    solve_block,
    total_keyrate,
)
from .laser import model_state
from .optim import DEFAULT_TOL
from .protocol import (
    SIGNALS,
    Z_EARLY,
    Z_LATE,
    ProtocolParams,
    Statistics,
    event_povms,
    simulate_statistics,
    weight_outside_bound,
)

logger = logging.getLogger(__name__)

PI_N = "Pi_N"
SWAP_EVENT = {Z_EARLY: Z_LATE, Z_LATE: Z_EARLY}


@dataclass(frozen=True)
class Truncation:
    d: int = 10
    N: int = 2
    n_blocks: int = 3

    def __post_init__(self):
        if not self.d >= self.N >= 1:
            raise ValueError("need d >= N >= 1")
        if self.n_blocks < 1 or self.n_blocks > self.d + 1:
            raise ValueError("n_blocks must lie in 1..d+1")


@dataclass
class DecoyTable:
    """Yield intervals per ``(block, signal, event)``, event ``Pi_N`` included."""

    intervals: dict = field(default_factory=dict)

    def get(self, n: int, signal: str, event: str) -> YieldInterval:
        return self.intervals[(n, signal, event)]


def decoy_instance(params: ProtocolParams, stats: Statistics, povms: dict, q: float, signal: str, trunc: Truncation) -> DecoyInstance:
    d, N = trunc.d, trunc.N
    states, observed, corr = {}, {}, {}
    for mu in params.intensities:
        states[mu] = model_state(mu, q, d)
        observed[mu] = dict(zip(stats.schema.events, stats.gamma[(signal, mu)]))
        W = weight_outside_bound(stats.cross_click[(signal, mu)], N, params.t_x)
        corr[mu] = Corrections(poisson_tail(mu, d), model_budget(mu, q, d).eps_proj, W)
    return DecoyInstance(states, povms, observed, corr, N)


def decoy_table(
    params: ProtocolParams,
    q: float,
    blocks: list[EigenBlock],
    trunc: Truncation,
    stats: Statistics | None = None,
    use_symmetry: bool = True,
    tol: float = DEFAULT_TOL,
) -> DecoyTable:
    """Certified yields of every usable block for every signal and event."""
    stats = stats or simulate_statistics(params)
    ops = event_povms(params, trunc.N)
    povms = {e: op.matrix for e, op in ops.items()}
    pi_n = total_photon_projector(next(iter(ops.values())).space, trunc.N).matrix
    table = DecoyTable()
    solve_for = ("0", "+") if use_symmetry else SIGNALS
    for signal in solve_for:
        inst = decoy_instance(params, stats, ops, q, signal, trunc)
        smn = build_smn(inst)
        for b in blocks:
            if not b.usable:
                continue
            v = b.vector.amplitudes
            sigma = np.real_if_close(np.outer(v, v.conj()))
            for event, F in povms.items():
                if use_symmetry and signal == "+" and event == Z_LATE:
                    continue
                table.intervals[(b.index, signal, event)] = yield_bounds(inst, sigma, F, smn, tol)
            table.intervals[(b.index, signal, PI_N)] = yield_bounds(inst, sigma, pi_n, smn, tol, sides="lower")
            if use_symmetry and signal == "+":
                table.intervals[(b.index, "+", Z_LATE)] = table.intervals[(b.index, "+", Z_EARLY)]
    if use_symmetry:
        for (n, signal, event), y in list(table.intervals.items()):
            if signal == "0":
                table.intervals[(n, "1", SWAP_EVENT.get(event, event))] = y
    return table


def block_problems(
    params: ProtocolParams,
    blocks: list[EigenBlock],
    table: DecoyTable,
    trunc: Truncation,
    eps_proj: float,
) -> list[BlockProblem]:
    ops = event_povms(params, trunc.N)
    povms = {e: op.matrix for e, op in ops.items()}
    space = next(iter(ops.values())).space
    sectors = [space.sector(m) for m in range(trunc.N + 1)]
    priors = params.priors
    out = []
    for b in blocks:
        dims = tuple(sl.stop - sl.start for sl in sectors)
        rho_a = rho_A_block(b, priors)
        weight = b.value - eps_proj
        if not b.usable:
            out.append(BlockProblem(b.index, weight, rho_a, dims, [], (0.0, 1.0), float("inf"), usable=False))
            continue
        intervals = {}
        for signal in SIGNALS:
            for event in povms:
                y = eigvec_corrected_bounds(table.get(b.index, signal, event), b.eps_vec)
                intervals[(signal, event)] = (y.lower, y.upper)
        rows = protocol_rows(povms, sectors, priors, intervals)
        W = block_weight_floor([table.get(b.index, s, PI_N).lower for s in SIGNALS], priors)
        window = (max(0.0, 1.0 - W - b.eps_vec), 1.0)
        out.append(BlockProblem(b.index, weight, rho_a, dims, rows, window, b.eps_vec, diagnostics={"W": W}))
    return out


def keyrate_point(
    params: ProtocolParams,
    q: float,
    trunc: Truncation = Truncation(),
    f_ec: float = 1.0,
    use_symmetry: bool = True,
    tol: float = DEFAULT_TOL,
    fw_max_iter: int = FW_MAX_ITER,
    fw_rel_tol: float = FW_REL_TOL,
) -> KeyRatePoint:
    """Certified key rate at ``params.distance`` for the model laser with parameter ``q``."""
    mu_s = params.signal_intensity
    budget = model_budget(mu_s, q, trunc.d)
    blocks = approx_eigendecomposition(model_state(mu_s, q, trunc.d), budget, trunc.n_blocks)
    stats = simulate_statistics(params)
    table = decoy_table(params, q, blocks, trunc, stats, use_symmetry, tol)
    problems = block_problems(params, blocks, table, trunc, budget.eps_proj)

    ops = event_povms(params, trunc.N)
    povms = {e: op.matrix for e, op in ops.items()}
    space = next(iter(ops.values())).space
    omap = build_objective_map(povms, [space.sector(m) for m in range(trunc.N + 1)])
    results: list[BlockResult] = [solve_block(p, omap, fw_max_iter, fw_rel_tol) for p in problems]

    gamma_s = {s: stats.gamma[(s, mu_s)] for s in SIGNALS}
    leak = delta_leak(gamma_s, params.priors, stats.schema, f_ec)

    ledger = {
        "eps_proj": budget.eps_proj,
        "eps_vec": [b.eps_vec for b in blocks],
        "W_N": {
            (s, mu): weight_outside_bound(stats.cross_click[(s, mu)], trunc.N, params.t_x)
            for s in SIGNALS
            for mu in params.intensities
        },
        "W_block": [p.diagnostics.get("W", np.nan) for p in problems],
        "decoy_certified": all(y.certified for y in table.intervals.values()),
        "decoy_max_gap": float(np.nanmax([y.rel_gap for y in table.intervals.values()] + [0.0])),
    }
    return total_keyrate(results, leak, params.distance, q, ledger)
