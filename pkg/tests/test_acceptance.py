"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import math
import time

import numpy as np

from openhall.algebra import build_liouvillian, check_density_matrix
from openhall.lindblad import SingleSteadyBand, SpinLowering
from openhall.model import (bi2se3_valley, custom_two_band, magnetic_lattice, rashba_dresselhaus)
from openhall.oracle import builtin_pairs, exact_steady_state_at_field, random_gapped_points, run_validation
from openhall.quadrature import TorusGrid, period_grid, plane_grid
from openhall.response import (berry_curvature_field, bi2se3_analytic, chern_number_fhs, chern_value,
                               hall_conductivity_general, hall_integrands, hall_two_band_spin,
                               steady_state_k)

from conftest import random_density, random_hermitian

LAMBDA = 23.0


def report(capsys, number, ok, detail, elapsed):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s) {detail}")


def test_criterion_1_closed_quantization(capsys):
    t0 = time.perf_counter()
    m = magnetic_lattice(1.0, 0.5, 1, 4, 1, 1)
    c = chern_number_fhs(m, 0, resolution=(64, 64))
    b = hall_conductivity_general(m, SingleSteadyBand(0, (0.0, 0.0)), grid=period_grid(m), tol=1e-7)
    dt = time.perf_counter() - t0
    ok = c.residual < 1e-3 and abs(b.sigma0 - c.value) < 1e-4 and dt < 10
    report(capsys, 1, ok, f"C={c.value} residual={c.residual:.1e} sigma={b.sigma0:.2e}", dt)
    assert ok


def rd_open(beta, gamma=0.1, h0=5.0, res=(256, 256)):
    m = rashba_dresselhaus(LAMBDA, beta, h0)
    return m, hall_two_band_spin(m, gamma, plane_grid(m, res), tol=1e-6, max_levels=3)


def test_criterion_2_rashba_dresselhaus_transition(capsys):
    t0 = time.perf_counter()
    lo, hi = rd_open(22.9, gamma=1e-6)[1].sigma0, rd_open(23.1, gamma=1e-6)[1].sigma0
    flips = lo * hi < 0
    chern = {b: chern_number_fhs(rashba_dresselhaus(LAMBDA, b, 5.0), 0).value for b in (22.9, 23.1)}
    chern_ok = sorted(chern.values()) == [-1, 1] and chern[22.9] == -chern[23.1]
    bounded = []
    per_beta = []
    for beta in (5.0, 15.0, 22.0, 24.0, 30.0, 40.0):
        tb = time.perf_counter()
        m, open_ = rd_open(beta, gamma=1e-6)
        closed = hall_conductivity_general(m, SingleSteadyBand(0, (0.0, 0.0)),
                                           grid=plane_grid(m, (256, 256)), tol=1e-6, max_levels=3)
        bounded.append(abs(open_.sigma0) < abs(closed.sigma0))
        per_beta.append(time.perf_counter() - tb)
    dt = time.perf_counter() - t0
    ok = flips and chern_ok and all(bounded) and max(per_beta) < 60
    report(capsys, 2, ok, f"sigma0(22.9)={lo:+.6f} sigma0(23.1)={hi:+.6f} C={chern} "
                          f"open<closed={all(bounded)}", dt)
    assert ok


def test_criterion_3_first_order_sign(capsys):
    t0 = time.perf_counter()
    betas = (5.0, 12.0, 18.0, 28.0, 40.0)
    h0s = (1.0, 3.0, 5.0, 7.0, 10.0)
    worst_d1 = -math.inf
    spread = 0.0
    for beta in betas:
        s0 = []
        for h0 in h0s:
            b = rd_open(beta, gamma=0.1, h0=h0, res=(128, 128))[1]
            worst_d1 = max(worst_d1, b.dsigma1)
            s0.append(b.sigma0)
        spread = max(spread, max(s0) - min(s0))
    dt = time.perf_counter() - t0
    ok = worst_d1 < 0 and spread < 1e-6 and dt < 600
    report(capsys, 3, ok, f"max dsigma1={worst_d1:.3e} sigma0 spread over h0={spread:.1e}", dt)
    assert ok


def test_criterion_4_bi2se3(capsys):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for B, delta0 in ((0.3, 1.0), (0.0, 1.0), (0.3, 0.0)):
        tc = time.perf_counter()
        m = bi2se3_valley(1.0, delta0, B)
        grid = plane_grid(m, (128, 128))
        b = hall_two_band_spin(m, 0.1, grid, tol=1e-6, max_levels=5)
        g = hall_conductivity_general(m, SpinLowering(0.1), grid=grid, tol=1e-6, max_levels=5)
        ref = bi2se3_analytic(B, delta0)
        ok &= (abs(b.total - ref) < 2e-3 and abs(b.dsigma1) < 1e-6 and abs(g.dsigma1) < 1e-6
               and time.perf_counter() - tc < 60)
        parts.append(f"(B={B}, delta0={delta0}) sigma={b.total:+.6f} expected {ref:+.6f} "
                     f"gamma term={max(abs(b.dsigma1), abs(g.dsigma1)):.1e}")
    report(capsys, 4, ok, "; ".join(parts), time.perf_counter() - t0)
    assert ok


def test_criterion_5_lattice_parity(capsys):
    t0 = time.perf_counter()
    deltas = np.linspace(0.1, 2.0, 10)
    tas = np.linspace(-2.0, 2.0, 10)
    flip = same = True
    worst = 0.0
    grid_nodes = None
    for d in deltas:
        signs = {}
        for ta in tas:
            for mm in (1, 2):
                m = magnetic_lattice(float(ta), float(d), 1, 4, 1, mm)
                s = hall_two_band_spin(m, 0.1, tol=1e-6, max_levels=5)
                signs[ta, mm] = np.sign(s.total)
                if grid_nodes is None:
                    grid_nodes = TorusGrid(m.domain.periods, m.domain.origin, (32, 32),
                                           m.domain.open_axes).nodes()
                kx, ky, _ = grid_nodes
                worst = max(worst, float(np.nanmax(np.abs(
                    hall_integrands(m, SpinLowering(0.1), kx, ky)[..., 1]))))
        for ta in tas:
            flip &= signs[ta, 1] == -signs[ta, 2] != 0
        for mm in (1, 2):
            same &= len({signs[ta, mm] for ta in tas}) == 1
    dt = time.perf_counter() - t0
    ok = flip and same and worst < 1e-10 and dt < 300
    report(capsys, 5, ok, f"m-parity flip={flip} same sign in ta={same} max |dsigma1 integrand|={worst:.1e}", dt)
    assert ok


def test_criterion_6_oracle_ladder(capsys):
    t0 = time.perf_counter()
    results = run_validation(seed=0, npoints=20)
    dt = time.perf_counter() - t0
    failed = [r.name for r in results if not r.ok]
    ok = not failed and dt < 120
    report(capsys, 6, ok, f"{len(results) - len(failed)}/{len(results)} checks" +
           (f" failed: {failed}" if failed else ""), dt)
    assert ok


def trs_model():
    return custom_two_band({"domain": "torus", "dx": [[1.5, 0, 0]], "dx_cos": [[1, 1, 0]],
                            "dy_sin": [[1, 0, 1]], "dz_cos": [[0.5, 0, 1]]})


def test_criterion_7_invariants(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = {}

    def note(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    for _ in range(50):
        n = int(rng.integers(2, 5))
        jumps = [(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), float(rng.random()))
                 for _ in range(3)]
        d = build_liouvillian(random_hermitian(rng, n), jumps).apply(random_density(rng, n))
        note("trace", abs(np.trace(d)))
        note("hermiticity", np.max(np.abs(d - d.conj().T)))
    for label, model, spec in builtin_pairs():
        for k in random_gapped_points(model, 5, rng):
            for E in (0.0, 1e-3):
                rho = exact_steady_state_at_field(model, spec, k, E)
                check_density_matrix(rho, tol=1e-10)
                note("density trace", abs(np.trace(rho) - 1))
                note("density psd", max(0.0, -np.min(np.linalg.eigvalsh(rho))))
            a = steady_state_k(model, spec, k, 1e-3)
            b = steady_state_k(model, spec, k, 2e-3)
            note("alpha1 linearity", np.max(np.abs(b.order1 - 2 * a.order1)))
    for label, model, spec in builtin_pairs():
        if model.periods is not None:
            grid = TorusGrid(model.periods, (0.0, 0.0), (32, 32))
            for band in range(model.dim):
                c0 = chern_number_fhs(model, band, grid)
                c1 = chern_number_fhs(model, band, grid, rephase=rng)
                note("gauge chern", abs(c0.raw - c1.raw) + abs(c0.value - c1.value))
            F0 = berry_curvature_field(model, grid)
            F1 = berry_curvature_field(model, grid, rephase=rng)
            note("gauge chern value", abs(chern_value({0: 1.0}, F0) - chern_value({0: 1.0}, F1)))
        else:
            grid = plane_grid(model, (32, 32))
        if isinstance(spec, SpinLowering):
            continue
        g0 = hall_conductivity_general(model, spec, grid=grid, refine=False)
        g1 = hall_conductivity_general(model, spec, grid=grid, refine=False, rephase=rng)
        note("gauge sigma", max(abs(g0.sigma0 - g1.sigma0), abs(g0.dsigma1 - g1.dsigma1),
                                abs(g0.dsigma2 - g1.dsigma2)))
    trs = trs_model()
    c_trs = chern_number_fhs(trs, 0).value
    s_trs = hall_conductivity_general(trs, SingleSteadyBand(0, (0.0, 0.1)), tol=1e-8).sigma0
    dt = time.perf_counter() - t0
    limits = {"trace": 1e-12, "hermiticity": 1e-12, "density trace": 1e-10, "density psd": 1e-10,
              "alpha1 linearity": 1e-15, "gauge chern": 1e-10, "gauge chern value": 1e-10,
              "gauge sigma": 1e-10}
    bad = [k for k, v in worst.items() if not v <= limits[k]]
    ok = not bad and c_trs == 0 and abs(s_trs) < 1e-8 and dt < 60
    report(capsys, 7, ok, f"violations={bad} TRS chern={c_trs} TRS sigma0={s_trs:.1e}", dt)
    assert ok
