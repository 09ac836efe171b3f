import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nocprep import qcore
from nocprep.qcore import BELL, IDENTITY_2, SIGMA_X, SIGMA_Z

floats = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def complex_arrays(shape):
    return st.tuples(arrays(float, shape, elements=floats),
                     arrays(float, shape, elements=floats)).map(lambda t: t[0] + 1j * t[1])


def test_kron_identity():
    np.testing.assert_array_equal(qcore.kron(IDENTITY_2, IDENTITY_2), np.eye(4))


def test_kron_bit_flip_on_first_qubit():
    out = qcore.kron(SIGMA_X, IDENTITY_2) @ qcore.basis_state("00")
    np.testing.assert_array_equal(out, qcore.basis_state("10"))


def test_zz_on_odd_bell_state():
    zz = qcore.kron(SIGMA_Z, SIGMA_Z)
    np.testing.assert_allclose(zz @ BELL["01"], -BELL["01"], atol=1e-15)


@given(complex_arrays((4, 2, 2)))
def test_kron_mixed_product(m):
    a, b, c, d = m
    lhs = qcore.kron(a, b) @ qcore.kron(c, d)
    rhs = qcore.kron(a @ c, b @ d)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_pauli_on_rejects_bad_qubit():
    with pytest.raises(ValueError):
        qcore.pauli_on("x", 3)


def test_vectorize_stacks_columns():
    np.testing.assert_array_equal(qcore.vectorize(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])


@given(complex_arrays((4, 4)))
def test_vectorize_round_trip(m):
    v = qcore.vectorize(m)
    assert v.shape == (16,)
    np.testing.assert_array_equal(qcore.unvectorize(v, 4, 4), m)


def test_vectorize_batch_matches_single(rng):
    m = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
    batch = qcore.vectorize(m)
    for k in range(5):
        np.testing.assert_array_equal(batch[k], qcore.vectorize(m[k]))


def test_unvectorize_length_mismatch():
    with pytest.raises(ValueError):
        qcore.unvectorize(np.zeros(15), 4, 4)


def test_bell_basis_orthonormal():
    b = qcore.bell_basis()
    np.testing.assert_allclose(b.conj() @ b.T, np.eye(4), atol=1e-15)


def test_fidelity_identical_and_orthogonal():
    assert qcore.fidelity_error(BELL["01"], BELL["01"]) == pytest.approx((1.0, 0.0), abs=1e-15)
    assert qcore.fidelity_error(qcore.basis_state("00"), BELL["01"]) == (0.0, 1.0)


def test_fidelity_rejects_unnormalized():
    with pytest.raises(qcore.NotNormalizedError):
        qcore.fidelity_error(2 * BELL["01"], BELL["01"])


@given(st.floats(-20, 20), complex_arrays((4,)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_fidelity_global_phase_invariance(theta, psi):
    psi = psi / np.linalg.norm(psi)
    e1 = qcore.fidelity_error(psi, BELL["10"])[1]
    e2 = qcore.fidelity_error(np.exp(1j * theta) * psi, BELL["10"])[1]
    assert abs(e1 - e2) <= 1e-12


@given(complex_arrays((4,)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_fidelity_error_in_unit_interval(psi):
    f, eps = qcore.fidelity_error(psi / np.linalg.norm(psi), BELL["11"])
    assert 0.0 <= eps <= 1.0
    assert 0.0 <= f <= 1.0 + 1e-12


def test_check_unitary():
    assert qcore.check_unitary(np.eye(4), 1e-12)
    assert not qcore.check_unitary(2 * np.eye(4), 1e-12)
    with pytest.raises(ValueError):
        qcore.check_unitary(np.ones((2, 3)), 1e-12)


@settings(max_examples=30)
@given(complex_arrays((4, 4)).filter(lambda m: np.linalg.cond(m) < 1e6))
def test_polar_snap_is_unitary_and_idempotent(m):
    u = qcore.polar_snap(m)
    assert qcore.unitarity_drift(u) < 1e-12
    np.testing.assert_allclose(qcore.polar_snap(u), u, atol=1e-12)


def test_is_hermitian():
    assert qcore.is_hermitian(SIGMA_X)
    assert not qcore.is_hermitian(np.array([[0, 1], [0, 0]]))
