from __future__ import annotations

import numpy as np
import pytest

from oracles import loss_choi, true_yield
from phasedecoy.approx_diag import approx_eigendecomposition, model_budget
from phasedecoy.decoy import (
    YieldInterval,
    build_joint_smn,
    build_smn,
    eigvec_corrected_bounds,
    general_povm_yield_bounds,
    prepare_virtual,
    standard_decoy_lp,
    yield_bounds,
)
from phasedecoy.fock import FockOperator, ModeSpace, poisson_weights, total_photon_projector
from phasedecoy.laser import model_state
from phasedecoy.pipeline import Truncation, decoy_instance
from phasedecoy.protocol import SIGNALS, Z_LATE, ProtocolParams, event_povms, preparation_isometry, simulate_statistics

D, N = 4, 2


def make_instance(signal: str, q: float = 0.9564, distance: float = 0.0, d: int = D):
    params = ProtocolParams(distance=distance)
    stats = simulate_statistics(params)
    ops = event_povms(params, N)
    return params, decoy_instance(params, stats, ops, q, signal, Truncation(d, N, 3))


def block_vectors(q: float, d: int = D):
    blocks = approx_eigendecomposition(model_state(0.5, q, d), model_budget(0.5, q, d), 3)
    return [b.vector.amplitudes for b in blocks if b.usable]


@pytest.mark.parametrize("signal", SIGNALS)
def test_true_choi_is_feasible(signal):
    params, inst = make_instance(signal, distance=10.0)
    smn = build_smn(inst, pin_vacuum=False, real=False)
    J = loss_choi(signal, D, params.eta, N)
    bob = ModeSpace(2, N)
    X = []
    for sl in smn.sectors:
        idx = np.concatenate([a * bob.dim + np.arange(sl.start, sl.stop) for a in smn.alice])
        X.append(J[np.ix_(idx, idx)])
    vals = smn.problem.constraint_values(X)
    for c, v in zip(smn.problem.constraints, vals):
        if c.relation == "<=":
            assert v <= c.rhs + 1e-10, c.label
        else:
            assert v >= c.rhs - 1e-10, c.label
    lmi = smn.problem.lmis[0]
    S = lmi.const - sum(L @ X[t.block] @ L.conj().T for t in lmi.terms for L in t.kraus)
    assert np.linalg.eigvalsh(S)[0] >= -1e-10


@pytest.mark.parametrize("signal", ["0", "+"])
@pytest.mark.parametrize("distance", [0.0, 50.0])
def test_bounds_contain_truth(signal, distance):
    params, inst = make_instance(signal, distance=distance)
    smn = build_smn(inst)
    for v in block_vectors(0.9564)[:2]:
        sigma = np.real_if_close(np.outer(v, v.conj()))
        for event, G in inst.povms.items():
            y = yield_bounds(inst, sigma, G, smn)
            t = true_yield(signal, v, params.eta, G.matrix, N)
            assert y.certified
            assert y.lower - 1e-7 <= t <= y.upper + 1e-7, event


def test_zero_operator_gives_zero_interval():
    _, inst = make_instance("0")
    y = yield_bounds(inst, np.eye(D + 1) / (D + 1), np.zeros((ModeSpace(2, N).dim,) * 2))
    assert (y.lower, y.upper) == (0.0, 0.0)


def test_pinned_and_unpinned_agree():
    _, inst = make_instance("0", q=1.0, distance=25.0)
    v = np.zeros(D + 1)
    v[1] = 1.0
    sigma = np.outer(v, v)
    G = inst.povms[Z_LATE]
    a = yield_bounds(inst, sigma, G, build_smn(inst, pin_vacuum=True))
    b = yield_bounds(inst, sigma, G, build_smn(inst, pin_vacuum=False))
    assert build_smn(inst).vacuum_pinned
    assert a.certified and b.certified
    # the unpinned set only certifies on a relaxed retry, so it may be slightly looser
    assert b.lower - 1e-7 <= a.lower <= b.lower + 1e-3
    assert b.upper - 1e-3 <= a.upper <= b.upper + 1e-7


def test_sides_option():
    _, inst = make_instance("0")
    smn = build_smn(inst)
    v = block_vectors(1.0)[1]
    sigma = np.outer(v, v)
    G = next(iter(inst.povms.values())).matrix
    both = yield_bounds(inst, sigma, G, smn)
    lo = yield_bounds(inst, sigma, G, smn, sides="lower")
    hi = yield_bounds(inst, sigma, G, smn, sides="upper")
    assert lo.lower == pytest.approx(both.lower, abs=1e-9) and lo.upper == 1.0
    assert hi.upper == pytest.approx(both.upper, abs=1e-9) and hi.lower == 0.0
    with pytest.raises(ValueError):
        yield_bounds(inst, sigma, G, smn, sides="middle")


def test_relaxed_copy_is_looser():
    _, inst = make_instance("0", distance=50.0)
    smn = build_smn(inst)
    loose = smn.relaxed(1e-3)
    assert loose is smn.relaxed(1e-3)
    v = block_vectors(1.0)[1]
    G = next(iter(inst.povms.values())).matrix
    a = yield_bounds(inst, np.outer(v, v), G, smn)
    b = yield_bounds(inst, np.outer(v, v), G, loose)
    assert b.lower <= a.lower + 1e-7 and b.upper >= a.upper - 1e-7


def test_joint_set_within_relaxed_and_both_sound():
    d = 3
    params = ProtocolParams(distance=10.0)
    stats = simulate_statistics(params)
    ops = event_povms(params, N)
    trunc = Truncation(d, N, 2)
    insts = {s: decoy_instance(params, stats, ops, 1.0, s, trunc) for s in SIGNALS}
    prep = {s: preparation_isometry(s, d).matrix for s in SIGNALS}
    joint = build_joint_smn(insts, prep)
    v = np.zeros(d + 1)
    v[1] = 1.0
    sigma = np.outer(v, v)
    for s in ("0", "+"):
        relaxed = build_smn(insts[s])
        for event, G in ops.items():
            r = yield_bounds(insts[s], sigma, G, relaxed)
            j = yield_bounds(insts[s], prepare_virtual(sigma, prep[s]), G, joint)
            t = true_yield(s, v, params.eta, G.matrix, N)
            assert r.lower - 1e-7 <= t <= r.upper + 1e-7
            assert j.lower - 1e-7 <= t <= j.upper + 1e-7
            assert j.lower >= r.lower - 1e-4 and j.upper <= r.upper + 1e-4


def test_eigvec_correction():
    y = YieldInterval(0.2, 0.5)
    c = eigvec_corrected_bounds(y, 0.1)
    assert (c.lower, c.upper) == pytest.approx((0.1, 0.6))
    c = eigvec_corrected_bounds(YieldInterval(0.05, 0.98), 0.1)
    assert (c.lower, c.upper) == (0.0, 1.0)
    c = eigvec_corrected_bounds(y, float("inf"))
    assert (c.lower, c.upper) == (0.0, 1.0)
    with pytest.raises(ValueError):
        YieldInterval(0.6, 0.5)


def test_general_povm_padding_and_outside_weight():
    _, inst = make_instance("0", q=1.0)
    smn = build_smn(inst)
    big = ModeSpace(2, N + 1)
    G = next(iter(inst.povms.values())).matrix
    keep = [big.index(o) for o in ModeSpace(2, N).basis]
    F = np.zeros((big.dim, big.dim), dtype=complex)
    F[np.ix_(keep, keep)] = G
    v = np.zeros(D + 1)
    v[1] = 1.0
    sigma = np.outer(v, v)
    base = yield_bounds(inst, sigma, G, smn)
    padded = general_povm_yield_bounds(inst, sigma, FockOperator(big, F), W_iN=0.01, smn=smn)
    assert (padded.lower, padded.upper) == (base.lower, base.upper)
    F2 = F + total_photon_projector(big, N + 1).matrix - total_photon_projector(big, N).matrix
    wide = general_povm_yield_bounds(inst, sigma, FockOperator(big, F2), W_iN=0.01, smn=smn)
    assert wide.upper == pytest.approx(min(1.0, base.upper + 0.01 + base.applied["eps_iM"]))
    with pytest.raises(ValueError):
        general_povm_yield_bounds(inst, sigma, FockOperator(ModeSpace(2, 1), np.eye(3)), smn=smn)


def test_standard_lp_brackets_linear_loss_yields():
    eta = 0.3
    n_max = 12
    yields = 1 - (1 - eta) ** np.arange(n_max + 30)
    mus = (0.5, 0.1, 0.0)
    poisson = {mu: poisson_weights(mu, n_max + 29) for mu in mus}
    gammas = {mu: float(poisson[mu] @ yields) for mu in mus}
    for target in (0, 1, 2):
        lo, hi = standard_decoy_lp(gammas, poisson, n_max, target)
        assert lo - 1e-9 <= yields[target] <= hi + 1e-9
    lo1, hi1 = standard_decoy_lp(gammas, poisson, n_max, 1)
    assert hi1 - lo1 < 0.2
    with pytest.raises(ValueError):
        standard_decoy_lp(gammas, poisson, n_max, n_max + 1)
    with pytest.raises(ValueError):
        standard_decoy_lp({0.0: 0.5, 0.5: 0.0}, poisson, n_max, 0)
