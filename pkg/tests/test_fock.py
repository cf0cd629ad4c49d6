from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import poisson

from phasedecoy.fock import (
    FockOperator,
    ModeSpace,
    all_patterns,
    coherent_ket,
    fock_ket,
    gen_inverse_sqrt,
    hermitian_eig,
    linear_network_isometry,
    multimode_coherent_ket,
    op_norm,
    partial_trace,
    poisson_tail,
    poisson_weights,
    restrict,
    tensor,
    threshold_povm,
    total_photon_projector,
    trace_norm,
)


@pytest.mark.parametrize("modes,cutoff", [(1, 5), (2, 3), (3, 2), (4, 4)])
def test_total_cutoff_dimension(modes, cutoff):
    from math import comb

    assert ModeSpace(modes, cutoff).dim == comb(cutoff + modes, modes)


def test_per_mode_dimension_and_sectors():
    s = ModeSpace(2, 3, "per_mode")
    assert s.dim == 16
    t = ModeSpace(3, 4)
    n = t.photon_numbers()
    assert np.all(np.diff(n) >= 0)
    for k in range(5):
        sl = t.sector(k)
        assert np.all(n[sl] == k)
        assert np.sum(n == k) == sl.stop - sl.start


def test_bad_spaces():
    with pytest.raises(ValueError):
        ModeSpace(0, 2)
    with pytest.raises(ValueError):
        ModeSpace(1, -1)
    with pytest.raises(ValueError):
        ModeSpace(1, 2, "bogus")


@pytest.mark.parametrize("mu", [0.0, 0.1, 0.5, 2.3])
def test_poisson_against_scipy(mu):
    w = poisson_weights(mu, 12)
    assert np.allclose(w, poisson.pmf(np.arange(13), mu), rtol=1e-13, atol=1e-300)
    assert poisson_tail(mu, 12) == pytest.approx(poisson.sf(12, mu), rel=1e-10, abs=1e-300)


def test_coherent_norm_shortfall_is_tail():
    ket = coherent_ket(0.7 * np.exp(0.3j), 6)
    assert ket.norm ** 2 == pytest.approx(1 - poisson_tail(0.49, 6), abs=1e-15)


def test_network_is_isometry_and_hong_ou_mandel():
    bs = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    V = linear_network_isometry(bs, 3)
    assert np.allclose(V.matrix.conj().T @ V.matrix, np.eye(V.domain.dim), atol=1e-12)
    out = V.matrix @ fock_ket(ModeSpace(2, 3), (1, 1)).amplitudes
    assert abs(out[V.space.index((1, 1))]) < 1e-14
    assert abs(out[V.space.index((2, 0))]) == pytest.approx(1 / np.sqrt(2))


def test_coherent_input_maps_to_coherent_output():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    U = q[:, :2]
    alpha = np.array([0.4 + 0.1j, -0.3j])
    N = 5
    V = linear_network_isometry(U, N)
    inp = multimode_coherent_ket(alpha, ModeSpace(2, N)).amplitudes
    expect = multimode_coherent_ket(U @ alpha, ModeSpace(4, N)).amplitudes
    assert np.allclose(V.matrix @ inp, expect, atol=1e-13)


def test_non_isometric_map_rejected():
    with pytest.raises(ValueError):
        linear_network_isometry(np.array([[1.0, 0.0], [0.5, 1.0]]), 2)


def test_threshold_patterns_resolve_identity():
    t = 0.3
    U = np.array([[np.sqrt(t), 0], [np.sqrt(1 - t), 0], [0, 1.0]])
    bins = {"a": (0,), "b": (1,)}
    total = sum(threshold_povm(U, bins, p, 3).matrix for p in all_patterns(list(bins)))
    assert np.allclose(total, np.eye(ModeSpace(2, 3).dim), atol=1e-12)


def test_threshold_single_photon_click_probability():
    t = 0.3
    U = np.array([[np.sqrt(t), 0], [np.sqrt(1 - t), 0], [0, 1.0]])
    E = threshold_povm(U, {"a": (0,), "b": (1,)}, {"a": True, "b": False}, 2)
    one = fock_ket(ModeSpace(2, 2), (1, 0)).amplitudes
    assert np.real(one.conj() @ E.matrix @ one) == pytest.approx(t)


def test_overlapping_bins_rejected():
    with pytest.raises(ValueError):
        threshold_povm(np.eye(2), {"a": (0,), "b": (0, 1)}, {"a": True, "b": True}, 1)


def test_partial_trace_of_product():
    a = coherent_ket(0.5, 4).projector()
    b = coherent_ket(0.2j, 4).projector()
    prod = tensor(a, b)
    assert np.allclose(partial_trace(prod, [0]).matrix, a.matrix * np.trace(b.matrix), atol=1e-14)
    assert np.allclose(partial_trace(prod, [1]).matrix, b.matrix * np.trace(a.matrix), atol=1e-14)


def test_partial_trace_two_mode_space():
    s = ModeSpace(2, 2, "per_mode")
    ket = multimode_coherent_ket([0.3, 0.4], s)
    red = partial_trace(ket.projector(), [0])
    ref = coherent_ket(0.3, 2).projector().matrix * coherent_ket(0.4, 2).norm ** 2
    assert np.allclose(red.matrix, ref, atol=1e-14)
    with pytest.raises(ValueError):
        partial_trace(ket.projector(), [5])


def test_projector_and_restrict():
    s = ModeSpace(2, 3)
    P = total_photon_projector(s, 1)
    assert np.trace(P.matrix).real == 3
    small = restrict(FockOperator(s, np.diag(np.arange(s.dim)).astype(complex)), ModeSpace(2, 1))
    assert np.allclose(np.diag(small.matrix).real, [0, 1, 2])


def test_spectral_helpers():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = A + A.conj().T
    vals, vecs = hermitian_eig(H)
    assert np.all(np.diff(vals) <= 0)
    assert np.allclose(H @ vecs, vecs * vals, atol=1e-10)
    assert op_norm(A) == pytest.approx(np.linalg.norm(A, 2))
    assert trace_norm(A) == pytest.approx(np.linalg.norm(A, "nuc"))
    with pytest.raises(ValueError):
        hermitian_eig(A)


def test_generalised_inverse_sqrt_on_rank_deficient():
    v = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    P = 4 * np.outer(v, v)
    G = gen_inverse_sqrt(P)
    assert np.allclose(G @ P @ G, np.outer(v, v), atol=1e-12)
