import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqi import numerics as nm
from cqi.numerics import DensityOperator, ValidationError

KET0 = np.array([1, 0], complex)
KET1 = np.array([0, 1], complex)
PLUS = np.array([1, 1], complex) / math.sqrt(2)


def test_density_operator_validation():
    with pytest.raises(ValidationError):
        DensityOperator(np.diag([0.6, 0.6]))
    with pytest.raises(ValidationError):
        DensityOperator(np.array([[0.5, 1], [0, 0.5]]))
    with pytest.raises(ValidationError):
        DensityOperator(np.diag([1.1, -0.1]))
    with pytest.raises(ValidationError):
        DensityOperator(np.eye(4) / 4, (3, 2))
    # tiny negative eigenvalues are clamped
    r = DensityOperator(np.diag([1 + 5e-11, -5e-11]))
    assert np.linalg.eigvalsh(r.matrix)[0] >= 0
    assert r.matrix.flags.writeable is False


def test_fidelity_examples():
    r = nm.random_mixed_state(3, nm.make_rng(0))
    assert nm.fidelity(r, r) == pytest.approx(1, abs=1e-9)
    assert nm.fidelity(nm.proj(KET0), nm.proj(KET1)) == pytest.approx(0, abs=1e-12)
    assert nm.fidelity(nm.proj(KET0), np.eye(2) / 2) == pytest.approx(0.5)


def test_fidelity_pure_is_overlap(rng):
    psi = nm.haar_vector(3, rng)
    sigma = nm.random_mixed_state(3, rng)
    expect = np.real(psi.conj() @ sigma.matrix @ psi)
    assert nm.fidelity(nm.proj(psi), sigma) == pytest.approx(expect, abs=1e-10)
    assert nm.fidelity(sigma, nm.proj(psi)) == pytest.approx(expect, abs=1e-10)


def test_fidelity_dimension_mismatch():
    with pytest.raises(ValidationError):
        nm.fidelity(np.eye(2) / 2, np.eye(3) / 3)


def test_trace_distance_examples():
    assert nm.trace_distance(nm.proj(KET0), nm.proj(KET0)) == pytest.approx(0)
    assert nm.trace_distance(nm.proj(KET0), nm.proj(KET1)) == pytest.approx(1)
    assert nm.trace_distance(nm.proj(KET0), nm.proj(PLUS)) == pytest.approx(1 / math.sqrt(2))


def test_partial_trace_examples(rng):
    a, b = nm.random_mixed_state(2, rng), nm.random_mixed_state(3, rng)
    prod = a.tensor(b)
    assert np.allclose(nm.partial_trace(prod, [0]).matrix, a.matrix, atol=1e-12)
    assert np.allclose(nm.partial_trace(prod, [1]).matrix, b.matrix, atol=1e-12)
    bell = DensityOperator.from_vector(np.array([1, 0, 0, 1]) / math.sqrt(2), (2, 2))
    assert np.allclose(nm.partial_trace(bell, [1]).matrix, np.eye(2) / 2)
    assert np.allclose(nm.partial_trace(prod, [0, 1]).matrix, prod.matrix)
    with pytest.raises(ValidationError):
        nm.partial_trace(prod, [2])


def test_permute_subsystems_matches_permutation_matrix(rng):
    a, b, c = (nm.random_mixed_state(2, rng).matrix for _ in range(3))
    X = np.kron(np.kron(a, b), c)
    # permute_subsystems lists the old factor for each new slot
    Y = nm.permute_subsystems(X, (2, 2, 2), (2, 0, 1))
    assert np.allclose(Y, np.kron(np.kron(c, a), b))
    # permutation_matrix sends factor i to slot perm[i]
    P = nm.permutation_matrix((2, 0, 1), 2)
    assert np.allclose(P @ X @ P.T, np.kron(np.kron(b, c), a))
    assert np.allclose(P @ X @ P.T, nm.permute_subsystems(X, (2, 2, 2), (1, 2, 0)))


def test_apply_channel_examples(rng):
    r = nm.random_mixed_state(2, rng)
    assert np.allclose(nm.apply_channel(nm.identity_channel(2), r).matrix, r.matrix)
    assert np.allclose(nm.apply_channel(nm.depolarizing_channel(2, 1.0), r).matrix, np.eye(2) / 2)
    assert np.allclose(nm.apply_channel(nm.dephasing_channel(2), nm.proj(PLUS)).matrix, np.eye(2) / 2)
    with pytest.raises(ValidationError):
        nm.apply_channel(nm.identity_channel(3), r)


def test_channel_requires_tp():
    with pytest.raises(ValidationError):
        nm.Channel(np.array([np.eye(2) * 0.9]))


def test_choi_examples():
    J = nm.kraus_to_choi(nm.identity_channel(3))
    omega = np.eye(3).reshape(-1)
    assert np.allclose(J, np.outer(omega, omega))
    J0 = nm.kraus_to_choi(nm.replace_channel(nm.proj(KET0), 2))
    assert np.allclose(J0, np.kron(np.eye(2), nm.proj(KET0)))


def test_choi_round_trip(rng):
    ch = nm.random_channel(2, 2, 2, rng)
    back = nm.choi_to_kraus(ch.choi(), (2,), (2,))
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = 1
            assert np.allclose(ch(E), back(E), atol=1e-9)
            assert np.allclose(nm.choi_apply(ch.choi(), E, 2, 2), ch(E), atol=1e-12)


def test_choi_errors():
    with pytest.raises(ValidationError):
        nm.choi_to_kraus(np.eye(4) * 0.3, (2,), (2,))  # input marginal 0.6 I
    bad = np.kron(np.eye(2), np.diag([1.5, -0.5]))
    with pytest.raises(ValidationError):
        nm.choi_to_kraus(bad, (2,), (2,))


def test_haar_moments():
    rng = nm.make_rng(7)
    U = nm.haar_unitary(3, rng, size=10)
    assert np.allclose(U @ nm.dagger(U), np.eye(3), atol=1e-12)
    psi = nm.haar_vector(2, rng, size=100_000)
    first = np.einsum("si,sj->ij", psi, psi.conj()) / len(psi)
    assert np.allclose(first, np.eye(2) / 2, atol=2e-2)
    pp = np.einsum("si,sj->sij", psi, psi).reshape(len(psi), 4)
    second = pp.T @ pp.conj() / len(psi)
    sym = (np.eye(4) + nm.swap_operator(2)) / 2
    assert np.allclose(second, 2 * sym / 6, atol=2e-2)


def test_state_with_spectrum(rng):
    assert np.allclose(nm.state_with_spectrum([1, 0]).matrix, np.diag([1, 0]))
    assert np.allclose(nm.state_with_spectrum([0.8, 0.2]).matrix, np.diag([0.8, 0.2]))
    U = nm.haar_unitary(3, rng)
    r = nm.state_with_spectrum([0.5, 0.3, 0.2], U)
    assert np.allclose(np.sort(np.linalg.eigvalsh(r.matrix))[::-1], [0.5, 0.3, 0.2], atol=1e-12)
    with pytest.raises(ValidationError):
        nm.state_with_spectrum([0.2, 0.8])
    with pytest.raises(ValidationError):
        nm.state_with_spectrum([0.8, 0.3])


def test_herm_exp(rng):
    assert np.allclose(nm.herm_exp(np.diag([1.0, 2.0]), 0), np.eye(2))
    Z = np.diag([1.0, -1.0])
    assert np.allclose(nm.herm_exp(Z, math.pi), np.diag([np.exp(-1j * math.pi), np.exp(1j * math.pi)]))
    v = nm.haar_vector(3, rng)
    th = np.outer(v, v.conj())
    T = 0.7
    assert np.allclose(nm.herm_exp(th, T), np.eye(3) + (np.exp(-1j * T) - 1) * th, atol=1e-10)
    H = nm.random_mixed_state(4, rng).matrix
    U = nm.herm_exp(H, 2.3)
    assert np.allclose(U @ nm.dagger(U), np.eye(4), atol=1e-10)
    with pytest.raises(ValidationError):
        nm.herm_exp(np.array([[0, 1], [0, 0]]), 1.0)


def test_rng_streams_reproducible():
    a = nm.make_rng(5, 1).normal(size=4)
    b = nm.make_rng(5, 1).normal(size=4)
    c = nm.make_rng(5, 2).normal(size=4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_fidelity_monotone_under_channels():
    rng = nm.make_rng(11)
    for _ in range(100):
        ch = nm.random_channel(2, 2, 3, rng)
        r, s = nm.random_mixed_state(2, rng), nm.random_mixed_state(2, rng)
        assert nm.fidelity(ch(r.matrix), ch(s.matrix)) >= nm.fidelity(r, s) - 1e-9


def test_fuchs_van_de_graaf():
    rng = nm.make_rng(12)
    for _ in range(100):
        r, s = nm.random_mixed_state(3, rng), nm.random_mixed_state(3, rng)
        F, D = nm.fidelity(r, s), nm.trace_distance(r, s)
        assert 1 - math.sqrt(F) <= D + 1e-10
        assert D <= math.sqrt(1 - F) + 1e-10


def test_pure_pair_trace_distance_identity(rng):
    a, b = nm.haar_vector(3, rng), nm.haar_vector(3, rng)
    F = abs(np.vdot(a, b)) ** 2
    assert nm.trace_distance(nm.proj(a), nm.proj(b)) ** 2 == pytest.approx(1 - F, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 4), kraus=st.integers(1, 4))
def test_channel_outputs_are_states(seed, d, kraus):
    rng = nm.make_rng(seed)
    ch = nm.random_channel(d, d, kraus, rng)
    out = nm.apply_channel(ch, nm.random_mixed_state(d, rng))
    assert abs(np.trace(out.matrix) - 1) < 1e-10
    J = ch.choi()
    assert np.linalg.eigvalsh(J)[0] > -1e-9
    assert np.allclose(nm.ptrace(J, (d, d), [0]), np.eye(d), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), da=st.integers(1, 3), db=st.integers(1, 3))
def test_partial_trace_of_tensor_is_exact(seed, da, db):
    rng = nm.make_rng(seed)
    a, b = nm.random_mixed_state(da, rng), nm.random_mixed_state(db, rng)
    prod = a.tensor(b)
    assert np.allclose(nm.partial_trace(prod, [0]).matrix, a.matrix, atol=1e-12)
    assert np.allclose(nm.partial_trace(prod, [1]).matrix, b.matrix, atol=1e-12)


def test_clip_to_state():
    m = nm.clip_to_state(np.diag([0.7, 0.5, -0.2]))
    assert np.allclose(m, np.diag([7 / 12, 5 / 12, 0]))
