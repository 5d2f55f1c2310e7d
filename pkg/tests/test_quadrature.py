import math

import numpy as np
import pytest

from openhall.errors import ConvergenceError, ValidationError
from openhall.model import rashba_dresselhaus, qwz
from openhall.quadrature import (PlaneGrid, TorusGrid, default_grid, evaluate_once, integrate,
                                 period_grid, plane_grid, pointwise, symmetrize)
from openhall.errors import DegeneratePoint


def test_periodic_integrand_on_torus():
    rep = integrate(lambda kx, ky: 1 + np.cos(kx) ** 2 * np.sin(ky) ** 2, TorusGrid(resolution=(8, 8)))
    assert rep.value == pytest.approx(2 * math.pi * 1.25, rel=1e-12)


def test_open_axis_handles_nonperiodic_integrand():
    grid = TorusGrid((1.0, 2 * math.pi), (0.0, 0.0), (16, 16), open_axes=(True, False))
    rep = integrate(lambda kx, ky: np.exp(kx), grid, tol=1e-10)
    assert rep.value == pytest.approx((math.e - 1), rel=1e-9)


def test_gaussian_on_plane():
    rep = integrate(lambda kx, ky: np.exp(-(kx ** 2 + ky ** 2)), PlaneGrid(20.0, 1.0, (32, 16)),
                    tol=1e-9)
    assert rep.value == pytest.approx(0.5, rel=1e-8)


def test_shear_weights_carry_the_jacobian():
    S = ((2.0, 0.5), (0.0, 0.5))
    rep = integrate(lambda kx, ky: np.exp(-(kx ** 2 + ky ** 2)),
                    PlaneGrid(30.0, 1.0, (32, 32), shear=S), tol=1e-10, max_levels=6)
    assert rep.value == pytest.approx(0.5, rel=1e-9)


def test_anisotropic_model_gets_a_shear():
    assert plane_grid(rashba_dresselhaus(23.0, 22.9, 5.0)).shear is not None
    assert plane_grid(rashba_dresselhaus(23.0, 0.0, 5.0)).shear is None


def test_default_and_period_grids():
    assert isinstance(default_grid(qwz(1.0)), TorusGrid)
    assert isinstance(default_grid(rashba_dresselhaus(23.0, 10.0, 5.0)), PlaneGrid)
    assert period_grid(qwz(1.0)).origin == (0.0, 0.0)
    with pytest.raises(ValidationError):
        period_grid(rashba_dresselhaus(23.0, 10.0, 5.0))


def test_symmetric_partner_is_minus_k():
    sg = symmetrize(TorusGrid(resolution=(8, 8)))
    kx, ky, _ = sg.grid.nodes()
    assert np.allclose(kx.ravel()[sg.pairs], -kx.ravel())
    assert np.allclose(ky.ravel()[sg.pairs], -ky.ravel())
    pg = symmetrize(PlaneGrid(5.0, 1.0, (8, 8)))
    kx, ky, _ = pg.grid.nodes()
    assert np.allclose(kx.ravel()[pg.pairs], -kx.ravel())
    with pytest.raises(ValidationError):
        symmetrize(TorusGrid(origin=(0.0, 0.0)))


def test_isolated_degenerate_points_are_excluded():
    def f(kx, ky):
        if abs(kx) < 0.2 and abs(ky) < 0.2:
            raise DegeneratePoint("touching")
        return 1.0
    rep = evaluate_once(pointwise(f), TorusGrid(resolution=(32, 32)))
    assert rep.excluded == 4


def test_too_many_exclusions_raise():
    with pytest.raises(ConvergenceError):
        evaluate_once(lambda kx, ky: np.where(kx > 0, np.nan, 1.0), TorusGrid(resolution=(8, 8)))


def test_nonconvergence_raises():
    rng = np.random.default_rng(1)
    with pytest.raises(ConvergenceError):
        integrate(lambda kx, ky: rng.random(kx.shape), TorusGrid(resolution=(8, 8)), max_levels=2)


def test_small_resolution_rejected():
    with pytest.raises(ValidationError):
        TorusGrid(resolution=(4, 4))
    with pytest.raises(ValidationError):
        PlaneGrid(1.0, 1.0, (8, 9))
