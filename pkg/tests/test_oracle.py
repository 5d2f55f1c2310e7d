import math

import numpy as np
import pytest

from openhall.errors import ValidationError
from openhall.lindblad import SingleSteadyBand, SpinLowering, steady0_two_band
from openhall.model import custom_two_band, rashba_dresselhaus
from openhall.oracle import (builtin_pairs, exact_steady_state_at_field, extract_linear_response,
                             hall_from_current, probe_point, run_validation, scaled_fields)
from openhall.quadrature import plane_grid
from openhall.response import hall_conductivity_general, steady_state_k


def tilted_cone():
    # d = (1/sqrt2 + kx, ky, 1/sqrt2): theta = pi/4 and E1 = 1 at k = 0
    r = 1 / math.sqrt(2)
    return custom_two_band({"dx": [[r, 0, 0], [1, 1, 0]], "dy": [[1, 0, 1]], "dz": [[r, 0, 0]]})


def test_zero_field_state_is_the_spin_steady_state():
    rho = exact_steady_state_at_field(tilted_cone(), SpinLowering(0.1), (0.0, 0.0), 0.0)
    assert np.allclose(rho, steady0_two_band(math.pi / 4, 1.0, 0.1), atol=1e-12)


def test_finite_field_state_is_a_density_matrix():
    rho = exact_steady_state_at_field(tilted_cone(), SpinLowering(0.1), (0.2, -0.1), 1e-2)
    assert abs(np.trace(rho) - 1) < 1e-10
    assert np.min(np.linalg.eigvalsh(rho)) > -1e-10


@pytest.mark.parametrize("spec", [SpinLowering(0.1), SingleSteadyBand(1, (0.1, 0.0))])
def test_probe_recovers_first_order_state(spec):
    m = tilted_cone()
    k = (0.3, 0.2)
    probe = probe_point(m, spec, k)
    st = steady_state_k(m, spec, k, 1.0, solver="general")
    assert np.max(np.abs(probe.rho1 - st.order1)) < 1e-6 * np.max(np.abs(st.order1))
    assert probe.exponent >= 1.8


def test_extraction_input_checks():
    rho0 = np.eye(2) / 2
    with pytest.raises(ValidationError):
        extract_linear_response((1e-3, 1e-4), [rho0, rho0], rho0)
    with pytest.raises(ValidationError):
        extract_linear_response((1e-3, 5e-4, 2e-4), [rho0] * 3, rho0)
    with pytest.raises(ValidationError):
        extract_linear_response((1e-3, 0.0, 1e-5), [rho0] * 3, rho0)


def test_extraction_of_exact_quadratic():
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    r1 = np.array([[0, 1j], [-1j, 0]])
    r2 = np.array([[1, 0], [0, -1]], dtype=complex)
    fields = (1e-2, 1e-3, 1e-4)
    states = [rho0 + E * r1 + E ** 2 * r2 for E in fields]
    p = extract_linear_response(fields, states, rho0, rho1_reference=r1)
    assert np.allclose(p.rho1, r1, atol=1e-12)
    assert p.exponent == pytest.approx(2.0, abs=1e-6)


def test_scaled_fields():
    assert scaled_fields(np.array([[0.5]])) == pytest.approx((1e-3, 1e-4, 1e-5))
    assert scaled_fields(np.array([[10.0]])) == pytest.approx((1e-4, 1e-5, 1e-6))


def test_current_route_matches_general_route():
    m = rashba_dresselhaus(23.0, 10.0, 5.0)
    spec = SpinLowering(0.1)
    grid = plane_grid(m, (64, 64))
    cur = hall_from_current(m, spec, 1e-4, grid=grid, tol=1e-6, max_levels=5)
    gen = hall_conductivity_general(m, spec, grid=grid, tol=1e-6, max_levels=5)
    assert cur == pytest.approx(gen.total, abs=1e-5)


def test_current_route_needs_field():
    with pytest.raises(ValidationError):
        hall_from_current(tilted_cone(), SpinLowering(0.1), 0.0)


def test_ladder_passes_on_builtins():
    results = run_validation(seed=3, npoints=5)
    assert len(results) == 5 * len(builtin_pairs())
    assert all(r.ok for r in results), [r for r in results if not r.ok]


@pytest.mark.parametrize("mutation", ["s3_sign", "drop_hprime_diagonal"])
def test_ladder_catches_mutations(mutation):
    results = run_validation(seed=3, npoints=5, mutate=mutation)
    assert any(not r.ok for r in results)
