import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from openhall.algebra import (build_liouvillian, check_density_matrix, fix_gauge, hermitian_eigensystem,
                              kernel_projector_stack, liouvillian_stack, null_space_steady_state,
                              unvec, vec)
from openhall.errors import SolverError, ValidationError

from conftest import random_density, random_hermitian

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
dims = st.integers(min_value=2, max_value=4)


@given(seeds, dims)
@settings(max_examples=40, deadline=None)
def test_vec_matches_kron_identity(seed, n):
    rng = np.random.default_rng(seed)
    A, X, B = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for _ in range(3))
    assert np.allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X))
    assert np.array_equal(unvec(vec(X)), X)


@given(seeds, dims)
@settings(max_examples=40, deadline=None)
def test_generator_preserves_trace_and_hermiticity(seed, n):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, n)
    jumps = [(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), float(rng.random()))
             for _ in range(3)]
    L = build_liouvillian(h, jumps)
    d = L.apply(random_density(rng, n))
    assert abs(np.trace(d)) < 1e-12
    assert np.max(np.abs(d - d.conj().T)) < 1e-12


def test_eigensystem_gauge_is_deterministic(rng):
    h = random_hermitian(rng, 3)
    w, U = hermitian_eigensystem(h)
    assert np.all(np.diff(w) > 0)
    assert np.allclose(U.conj().T @ h @ U, np.diag(w))
    first = U[0]
    assert np.allclose(first.imag, 0) and np.all(first.real >= 0)
    U2 = fix_gauge(U * np.exp(1j * rng.random(3)))
    assert np.allclose(U2, U)


def test_gauge_skips_tiny_leading_components():
    v = np.array([[1e-12], [1j]])
    assert np.allclose(fix_gauge(v), [[1e-12 * -1j], [1.0]])


def test_nonhermitian_hamiltonian_rejected():
    with pytest.raises(ValidationError):
        hermitian_eigensystem(np.array([[0, 1], [0, 0]], dtype=complex))


def test_decay_to_ground_state():
    h = np.diag([1.0, -1.0]).astype(complex)
    lower = np.array([[0, 0], [1, 0]], dtype=complex)     # |1><0|: upper -> lower
    st_ = null_space_steady_state(build_liouvillian(h, [(lower, 0.3)]))
    assert st_.multiplicity == 1
    assert np.allclose(st_.rho, np.diag([0, 1]), atol=1e-12)
    check_density_matrix(st_.rho)


def test_closed_generator_has_degenerate_kernel():
    st_ = null_space_steady_state(build_liouvillian(np.diag([0.0, 1.0, 3.0]).astype(complex)))
    assert st_.multiplicity == 3
    assert np.allclose(st_.rho, np.eye(3) / 3)


def test_kernel_projector_is_idempotent(rng):
    L = liouvillian_stack(np.diag([0.0, 1.0]).astype(complex))
    P = kernel_projector_stack(L, 2)
    assert np.allclose(P @ P, P)
    assert np.allclose(L @ P, 0)


def test_generator_without_kernel_raises():
    with pytest.raises(SolverError):
        null_space_steady_state(-np.eye(4))


def test_invalid_rates_and_shapes():
    h = np.eye(2, dtype=complex)
    with pytest.raises(ValidationError):
        build_liouvillian(h, [(np.eye(2), -1.0)])
    with pytest.raises(ValidationError):
        build_liouvillian(h, [(np.eye(3), 1.0)])


def test_density_matrix_checks():
    with pytest.raises(ValidationError):
        check_density_matrix(np.diag([0.7, 0.7]))
    with pytest.raises(ValidationError):
        check_density_matrix(np.diag([1.2, -0.2]))
