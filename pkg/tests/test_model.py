import math

import numpy as np
import pytest

from openhall.errors import ConfigError, DegeneratePoint, ValidationError
from openhall.model import (angle_derivatives, angles, bi2se3_valley, magnetic_lattice,
                            parse_model_config, qwz, rashba_dresselhaus)


def test_rashba_dresselhaus_d_vector():
    m = rashba_dresselhaus(23.0, 10.0, 5.0)
    d = m.d_vector(np.array(0.3), np.array(-0.2))
    assert np.allclose(d, (23 * -0.2 - 10 * 0.3, -23 * 0.3 + 10 * -0.2, 5.0))


def test_in_plane_gap_at_the_transition():
    lam = 23.0
    m = rashba_dresselhaus(lam, lam, 5.0)
    kx, ky = 0.4, -0.1
    d = m.d_vector(np.array(kx), np.array(ky))
    assert math.hypot(d[0], d[1]) == pytest.approx(math.sqrt(2) * lam * abs(ky - kx))


@pytest.mark.parametrize("model", [rashba_dresselhaus(23.0, 10.0, 5.0), bi2se3_valley(1.0, 0.5, 0.3),
                                   magnetic_lattice(1.0, 0.5, 1, 4, 1, 2), qwz(1.0)])
def test_analytic_partials_match_finite_differences(model):
    kx = np.array([0.31, -0.7])
    ky = np.array([0.52, 0.2])
    assert np.allclose(model.d_partials(kx, ky), model.d_partials_fd(kx, ky), atol=1e-7)


def test_hamiltonian_derivative_matches_pauli_expansion():
    m = qwz(0.5)
    kx, ky = np.array(0.2), np.array(1.1)
    dH = m.dhamiltonian(kx, ky)
    h = 1e-6
    num = (m.hamiltonian(kx + h, ky) - m.hamiltonian(kx - h, ky)) / (2 * h)
    assert np.allclose(dH[0], num, atol=1e-8)


def test_angles_and_degenerate_points():
    m = bi2se3_valley(1.0, 1.0, 0.0)
    a = angles(m, (0.5, 0.0))
    assert a.E1 == pytest.approx(math.hypot(0.5, 0.5))
    assert a.theta == pytest.approx(math.pi / 4)
    with pytest.raises(DegeneratePoint):
        angles(bi2se3_valley(1.0, 0.0, 0.0), (0.0, 0.0))


def test_angle_derivatives_by_finite_differences():
    m = rashba_dresselhaus(23.0, 10.0, 5.0)
    kx, ky = np.array(0.13), np.array(-0.08)
    th, ph, E1, dth, dph = angle_derivatives(m, kx, ky)
    h = 1e-6
    tp, pp = angle_derivatives(m, kx + h, ky)[:2]
    tm, pm = angle_derivatives(m, kx - h, ky)[:2]
    assert dth[0] == pytest.approx((tp - tm) / (2 * h), rel=1e-6)
    assert dph[0] == pytest.approx((pp - pm) / (2 * h), rel=1e-6)


def test_lattice_window_and_integer_validation():
    m = magnetic_lattice(1.0, 0.5, 1, 4, 1, 1)
    assert m.domain.periods == pytest.approx((math.pi / 2, 2 * math.pi))
    assert m.domain.open_axes == (True, False)
    with pytest.raises(ValidationError):
        magnetic_lattice(1.0, 0.5, 1, 2.5, 1, 1)


def test_config_builds_builtin():
    m = parse_model_config('[model]\nmodel = "rashba_dresselhaus"\nlambda = 23\nbeta = 10\nh0 = 5\n')
    assert m.params["beta"] == 10.0


@pytest.mark.parametrize("text,key", [
    ('[model]\nmodel = "rashba_dresselhaus"\nlambda = 23\nbeta = 10\n', "h0"),
    ('[model]\nmodel = "magnetic_lattice"\nta = 1\ndelta = 0.5\np = 1\nq = 4.5\nl = 1\nm = 1\n', "q"),
    ('[model]\nmodel = "qwz"\nmass = "heavy"\n', "mass"),
    ('[model]\nmodel = "qwz"\nmass = 1\nspin = 2\n', "spin"),
    ('[model]\nmodel = "graphene"\n', "model"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_model_config(text)
    assert exc.value.key == key


def test_custom_model_matches_builtin():
    block = {"model": {"model": "custom_two_band", "domain": "torus",
                       "dx_sin": [[1, 1, 0]], "dy_sin": [[1, 0, 1]],
                       "dz": [[1.0, 0, 0]], "dz_cos": [[1, 1, 0], [1, 0, 1]]}}
    custom = parse_model_config(block)
    ref = qwz(1.0)
    k = (np.array([0.3, 2.0]), np.array([-1.2, 0.4]))
    assert np.allclose(custom.hamiltonian(*k), ref.hamiltonian(*k))
    assert np.allclose(custom.dhamiltonian(*k), ref.dhamiltonian(*k))
