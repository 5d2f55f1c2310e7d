import numpy as np
import pytest

from openhall.algebra import build_liouvillian, null_space_steady_state
from openhall.errors import ConfigError, DegeneratePoint, ValidationError
from openhall.lindblad import (CustomDissipator, _eigen_liouvillian, SingleSteadyBand, SpinLowering, TwoSteadyBands,
                               alpha1_single_expansion, alpha1_single_steady_band,
                               alpha1_two_steady_bands, first_order_stack, jump_operators, parse_dissipator_config,
                               solve_first_order_general, spinor_basis, steady0_two_band,
                               steady0_two_band_weak, tau1_spin_dissipator, tau1_weak_gamma,
                               validate_momentum_conservation)

from conftest import random_hermitian


def test_spin_steady_state_matches_null_space():
    theta, phi, E1, g = 0.7, 1.3, 2.0, 0.4
    U = spinor_basis(theta, phi)
    energies = np.array([E1, -E1])
    jumps = jump_operators(SpinLowering(g), U)
    L = build_liouvillian(np.diag(energies).astype(complex), jumps)
    rho = null_space_steady_state(L).rho
    assert np.allclose(steady0_two_band(theta, E1, g), rho, atol=1e-12)


def test_weak_spin_steady_state_is_the_limit():
    theta = 0.9
    assert np.allclose(steady0_two_band(theta, 1.5, 1e-9), steady0_two_band_weak(theta), atol=1e-8)


def test_spin_first_order_matches_general_solver(rng):
    theta, phi, E1, g = 1.1, -0.4, 1.3, 0.2
    U = spinor_basis(theta, phi)
    eps = np.array([E1, -E1])
    hp = random_hermitian(rng, 2) * 0.1
    spec = SpinLowering(g)
    rho0 = steady0_two_band(theta, E1, g)
    L0 = _eigen_liouvillian(eps, jump_operators(spec, U))
    gen = first_order_stack(L0, hp, rho0)
    closed = tau1_spin_dissipator(theta, E1, g, hp)
    off = ~np.eye(2, dtype=bool)
    assert np.allclose(closed[off], gen[off], atol=1e-12)


def test_weak_gamma_terms_converge_quadratically(rng):
    theta, E1 = 0.6, 1.0
    hp = random_hermitian(rng, 2)
    errs = []
    for g in (0.02, 0.01):
        exact = tau1_spin_dissipator(theta, E1, g, hp)
        t0, t1 = tau1_weak_gamma(theta, E1, g, hp)
        errs.append(np.max(np.abs(exact - t0 - t1)))
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_single_band_alpha_and_expansion():
    a = alpha1_single_steady_band((0, 1), 0.3 + 0.1j, 2.0, 0.05)
    assert a == pytest.approx(-(0.3 + 0.1j) / (2.0 + 0.05j))
    e = alpha1_single_expansion((0, 1), 0.3 + 0.1j, 2.0, 0.05)
    assert abs(a - e) < 3 * (0.05 / 2.0) ** 3
    assert alpha1_single_steady_band((1, 1), 0.5, 0.0, 0.0) == 0
    with pytest.raises(DegeneratePoint):
        alpha1_single_steady_band((0, 1), 1.0, 0.0, 0.0)


def test_two_dark_bands_against_general_solver(rng):
    spec = TwoSteadyBands((0, 2), ((0.0, 0.05, 0.0), (0.0, 0.02, 0.0)), (0.7, 0.3))
    eps = np.array([-1.3, 0.2, 1.1])
    hp = random_hermitian(rng, 3) * 0.1
    rho0 = np.diag([0.7, 0.0, 0.3]).astype(complex)
    gen = solve_first_order_general((eps, np.eye(3)), hp, spec, rho0)
    closed = alpha1_two_steady_bands(spec, hp, eps)
    assert np.max(np.abs(closed - gen)) < 1e-8 * np.max(np.abs(gen))


@pytest.mark.parametrize("bad", [
    lambda: SingleSteadyBand(0, (0.1, 0.2)),
    lambda: SingleSteadyBand(3, (0.0, 0.2)),
    lambda: SpinLowering(-1.0),
    lambda: TwoSteadyBands((0, 0), ((0, 1, 0), (0, 1, 0))),
    lambda: TwoSteadyBands((0, 2), ((0, 1, 0), (0, 1, 0)), (0.6, 0.6)),
])
def test_invalid_specs(bad):
    with pytest.raises(ValidationError):
        bad()


def test_null_dimension_counts_dark_bands():
    assert SingleSteadyBand(0, (0.0, 0.1, 0.0)).null_dimension() == 2
    assert SpinLowering(0.0).null_dimension() == 2
    assert SpinLowering(lambda kx, ky: 0.1 + 0 * kx).null_dimension() == 1


def test_momentum_conservation_report():
    assert validate_momentum_conservation(SpinLowering(0.1)).ok
    rep = validate_momentum_conservation(CustomDissipator((), transfers=(((0, 0), (0.1, 0)),)))
    assert not rep.ok and rep.offending


def test_dissipator_config():
    spec = parse_dissipator_config({"dissipator": "single_band", "target": 1, "gamma": 0.2})
    assert spec == SingleSteadyBand(1, (0.2, 0.0))
    spec = parse_dissipator_config({"dissipator": "two_band", "targets": [0, 2], "gamma": 0.1}, 3)
    assert spec.rates == ((0.0, 0.1, 0.0), (0.0, 0.1, 0.0))
    with pytest.raises(ConfigError) as exc:
        parse_dissipator_config({"dissipator": "spin_lowering", "gamma": "fast"})
    assert exc.value.key == "gamma"
