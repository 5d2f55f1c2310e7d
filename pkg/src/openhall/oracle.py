"""Finite-field ground truth.

At every momentum the full generator with H = H0 + H'(E_x) is solved
directly, without any expansion in E_x or in the decay rates.  The
linear response is then read off from a ladder of probe fields, and the
Hall conductivity from the field-induced interband current.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lindblad
from .algebra import (check_density_matrix, dagger, liouvillian_stack, unvec, vec)
from .errors import DegeneratePoint, SolverError, ValidationError
from .lindblad import SingleSteadyBand, SpinLowering, TwoSteadyBands, jump_operators, tau1_weak_gamma
from .model import Plane, TwoBandModel, bi2se3_valley, magnetic_lattice, qwz, rashba_dresselhaus, spin1_qwz
from .quadrature import default_grid, integrate
from .response import (_gaps, _interband_velocity, basis_kind_for,
                       eigen_frame, first_order_matrix, hprime_from_frame, order0_matrix)

DEFAULT_FIELDS = (1e-3, 1e-4, 1e-5)
MIN_EXPONENT = 1.8
NOISE_FLOOR = 1e-13


@dataclass
class ResponseProbe:
    fields: tuple
    states: list
    rho0: np.ndarray
    rho1: Optional[np.ndarray] = None
    exponent: float = math.nan
    remainders: tuple = ()


# --------------------------------------------------------------------------
# exact states

def _frame_data(model, spec, kx, ky, rng=None):
    kind = basis_kind_for(model, spec)
    fr = eigen_frame(model, kx, ky, kind, rng)
    return kind, fr


def _exact_shift(model, spec, kx, ky, E, fr, kind, rho0):
    """rho(E) - rho0 for the exact steady state at field E (batched).

    The shift solves L(E) x = -L(E) rho0 with L(E) rho0 = L0 rho0 - i[H', rho0]
    assembled from its small pieces, so no O(1) quantities cancel and the
    result keeps full relative precision as E -> 0.  Unique kernels add
    the condition Tr x = 0.  Degenerate unperturbed kernels follow rho0
    along the slow manifold: x = -sum_fast V_i (W_i . L rho0) / lambda_i.
    """
    n = fr.energies.shape[-1]
    h0 = np.zeros(fr.vx.shape, dtype=complex)
    idx = np.arange(n)
    h0[..., idx, idx] = fr.energies
    if E != 0:
        Hp = np.nan_to_num(hprime_from_frame(model, kx, ky, fr, E, kind))
    else:
        Hp = np.zeros(fr.vx.shape, dtype=complex)
    jumps = jump_operators(spec, fr.basis, (kx, ky))
    L0 = liouvillian_stack(h0, jumps)
    L = liouvillian_stack(h0 + Hp, jumps)
    mv = lambda A, v: np.einsum("...ij,...j->...i", A, v)
    b = mv(L0, vec(rho0)) + vec(-1j * (Hp @ rho0 - rho0 @ Hp))
    m = spec.null_dimension()
    if m == 1:
        cons = np.broadcast_to(np.conj(vec(np.eye(n)))[None, :], L.shape[:-2] + (1, n * n))
        A = np.concatenate([L, cons], axis=-2)
        rhs = np.concatenate([-b, np.zeros(b.shape[:-1] + (1,))], axis=-1)
        x = mv(np.linalg.pinv(A, rcond=1e-13), rhs)
        if np.any(np.linalg.norm(mv(L, x) + b, axis=-1) > 1e-8 * (np.linalg.norm(b, axis=-1) + 1e-300)
                  + 1e-14):
            raise SolverError("full generator has no unique trace-carrying kernel")
    else:
        w, V = np.linalg.eig(L)
        order = np.argsort(np.abs(w), axis=-1, kind="stable")
        fast = np.ones(w.shape, dtype=bool)
        np.put_along_axis(fast, order[..., :m], False, axis=-1)
        c = mv(np.linalg.inv(V), b)
        c = np.where(fast, c / np.where(fast, w, 1.0), 0.0)
        x = -mv(V, c)
    X = unvec(x)
    return 0.5 * (X + dagger(X))


def _exact_states(model, spec, kx, ky, E, fr, kind, rho0):
    """Exact steady states at field E on arrays of momenta, continuing ``rho0``."""
    return rho0 + _exact_shift(model, spec, kx, ky, E, fr, kind, rho0)


def exact_steady_state_at_field(model, spec, k, E_x):
    """Exact steady state at momentum k and field E_x, in the eigenbasis used
    by the perturbative formulas (spinor basis for the spin dissipator)."""
    kx, ky = np.asarray(float(k[0])), np.asarray(float(k[1]))
    kind, fr = _frame_data(model, spec, kx, ky)
    if np.any(_gaps(fr.energies)[1]):
        raise DegeneratePoint(f"degenerate bands at k={tuple(k)}", k=tuple(k))
    rho0 = order0_matrix(spec, fr.energies, fr, (kx, ky))
    rho = _exact_states(model, spec, kx, ky, float(E_x), fr, kind, rho0)
    return check_density_matrix(rho, tol=1e-8)


# --------------------------------------------------------------------------
# linear response extraction

def extract_linear_response(fields, states, rho0, rho1_reference=None):
    """Slope and remainder exponent from exact states at a ladder of fields.

    The slope is the Richardson extrapolation to E -> 0 of the difference
    quotients (rho(E) - rho0) / E over all probe fields.
    The remainder ||rho(E) - rho0 - E rho1|| is fitted on a log-log scale;
    when ``rho1_reference`` is given it is used in the remainder instead
    of the extracted slope, which tests that reference directly.
    """
    E = np.asarray(fields, float)
    if E.size < 3:
        raise ValidationError("need at least 3 probe fields")
    if np.any(E == 0) or not np.all(np.isfinite(E)):
        raise ValidationError("probe fields must be finite and nonzero")
    if np.max(np.abs(E)) / np.min(np.abs(E)) < 100 * (1 - 1e-9):
        raise ValidationError("probe fields must span at least two decades")
    order = np.argsort(np.abs(E))
    E = E[order]
    S = np.asarray(states)[order]
    rho0 = np.asarray(rho0)
    D = (S - rho0) / E[:, None, None]
    # Lagrange weights of the polynomial through (E_i, D_i), evaluated at E = 0
    wts = np.array([np.prod([E[j] / (E[j] - E[i]) for j in range(E.size) if j != i])
                    for i in range(E.size)])
    rho1 = np.tensordot(wts, D, axes=1)
    ref = rho1 if rho1_reference is None else np.asarray(rho1_reference)
    rem = np.array([np.linalg.norm(S[i] - rho0 - E[i] * ref) for i in range(E.size)])
    scale = max(1.0, float(np.linalg.norm(rho0)))
    use = rem > NOISE_FLOOR * scale
    if use.sum() >= 2:
        exponent = float(np.polyfit(np.log(np.abs(E[use])), np.log(rem[use]), 1)[0])
    else:
        exponent = math.inf       # linear to solver precision
    return ResponseProbe(tuple(E), list(S), rho0, rho1, exponent, tuple(rem))


def probe_point(model, spec, k, fields=DEFAULT_FIELDS):
    kx, ky = np.asarray(float(k[0])), np.asarray(float(k[1]))
    kind, fr = _frame_data(model, spec, kx, ky)
    rho0 = order0_matrix(spec, fr.energies, fr, (kx, ky))
    states = [_exact_states(model, spec, kx, ky, float(E), fr, kind, rho0) for E in fields]
    return extract_linear_response(fields, states, rho0)


# --------------------------------------------------------------------------
# Hall conductivity from the current

@dataclass(frozen=True)
class CurrentHall:
    sigma: float
    error: float
    levels: int
    excluded: int


def hall_from_current_report(model, spec, field_, grid=None, tol=1e-5, max_levels=5):
    E = float(field_.E_x if hasattr(field_, "E_x") else field_)
    if E == 0 or not math.isfinite(E):
        raise ValidationError("the current ratio needs a nonzero probe field")
    grid = default_grid(model) if grid is None else grid

    def f(kx, ky):
        kind, fr = _frame_data(model, spec, kx, ky)
        rho0 = order0_matrix(spec, fr.energies, fr, (kx, ky))
        dr = (_exact_shift(model, spec, kx, ky, E, fr, kind, rho0)
              - _exact_shift(model, spec, kx, ky, 0.0, fr, kind, rho0))
        out = -_interband_velocity(dr, fr.vy) / E
        bad = np.any(_gaps(fr.energies)[1], axis=(-2, -1))
        if kind == "spinor":
            bad |= ~np.isfinite(fr.angles[2]) | ~np.all(np.isfinite(fr.angles[4]), axis=0)
        out[bad] = np.nan
        return out

    rep = integrate(f, grid, tol=tol, max_levels=max_levels)
    return CurrentHall(float(rep.value), float(rep.error), rep.levels, rep.excluded)


def hall_from_current(model, spec, field_, grid=None, tol=1e-5, max_levels=5):
    """Hall conductivity (e^2/h) from the exact field-induced interband current."""
    return hall_from_current_report(model, spec, field_, grid, tol, max_levels).sigma


# --------------------------------------------------------------------------
# validation ladder

@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    worst: float
    threshold: float
    detail: str = ""


def builtin_pairs():
    """(label, model, dissipator spec) for every builtin combination."""
    rd = rashba_dresselhaus(23.0, 10.0, 5.0)
    bi = bi2se3_valley(1.0, 0.5, 0.3)
    ml = magnetic_lattice(1.0, 0.5, 1, 4, 1, 1)
    return [
        ("rashba_dresselhaus/spin", rd, SpinLowering(0.1)),
        ("rashba_dresselhaus/single", rd, SingleSteadyBand(1, (0.1, 0.0))),
        ("bi2se3_valley/spin", bi, SpinLowering(0.05)),
        ("bi2se3_valley/single", bi, SingleSteadyBand(0, (0.0, 0.05))),
        ("magnetic_lattice/spin", ml, SpinLowering(0.05)),
        ("magnetic_lattice/single", ml, SingleSteadyBand(0, (0.0, 0.05))),
        ("qwz/single", qwz(1.0), SingleSteadyBand(0, (0.0, 0.05))),
        ("spin1_qwz/single", spin1_qwz(1.0), SingleSteadyBand(0, (0.0, 0.05, 0.03))),
        ("spin1_qwz/two", spin1_qwz(1.0), TwoSteadyBands((0, 2), ((0.0, 0.05, 0.0), (0.0, 0.02, 0.0)),
                                                         (0.7, 0.3))),
    ]


def random_gapped_points(model, n, rng, min_gap=1e-2):
    """``n`` momenta with all band gaps and (two-band) in-plane gaps above ``min_gap``."""
    pts = []
    dom = model.domain
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 1000 * n:
            raise ValidationError(f"could not find {n} gapped points for {model.name}")
        if isinstance(dom, Plane):
            r = dom.scale * 3 * rng.random()
            a = 2 * math.pi * rng.random()
            k = (r * math.cos(a), r * math.sin(a))
        else:
            k = tuple(o + L * rng.random() for o, L in zip(dom.origin, dom.periods))
        w = np.linalg.eigvalsh(model.hamiltonian(np.asarray(k[0]), np.asarray(k[1])))
        scale = max(1.0, float(np.max(np.abs(w))))
        if np.min(np.diff(w)) < min_gap * scale:
            continue
        if isinstance(model, TwoBandModel):
            d = model.d_vector(np.asarray(k[0]), np.asarray(k[1]))
            if math.hypot(float(d[0]), float(d[1])) < min_gap * scale:
                continue
        pts.append(k)
    return pts


def _with_rate(spec, factor):
    if isinstance(spec, SpinLowering):
        return SpinLowering(spec.gamma * factor)
    if isinstance(spec, SingleSteadyBand):
        return SingleSteadyBand(spec.target, tuple(g * factor for g in spec.rates))
    return TwoSteadyBands(spec.targets, tuple(tuple(g * factor for g in r) for r in spec.rates),
                          spec.weights)


MUTATIONS = ("s3_sign", "drop_hprime_diagonal")


@dataclass
class _Hooks:
    tau1: object = None
    hprime: object = None


def _hooks(mutate):
    if mutate is None:
        return _Hooks(lindblad.tau1_spin_dissipator, hprime_from_frame)
    if mutate == "s3_sign":
        def tau1(theta, E1, gamma, hp):
            return lindblad.combine_tau1(*lindblad.tau1_terms(theta, E1, gamma, hp), hp, s3_sign=-1.0)
        return _Hooks(tau1, hprime_from_frame)
    if mutate == "drop_hprime_diagonal":
        def hprime(*args):
            hp = hprime_from_frame(*args)
            idx = np.arange(hp.shape[-1])
            hp = hp.copy()
            hp[..., idx, idx] = 0
            return hp
        return _Hooks(lindblad.tau1_spin_dissipator, hprime)
    raise ValidationError(f"unknown mutation {mutate!r}; choose from {MUTATIONS}")


def _closed_form(spec, fr, hp, k, hooks):
    if isinstance(spec, SpinLowering):
        theta, _, E1 = fr.angles[:3]
        return hooks.tau1(theta, E1, spec.rate(*k), hp)
    return first_order_matrix(spec, fr, hp, order0_matrix(spec, fr.energies, fr, k), k)


def _offdiag(x):
    n = x.shape[-1]
    return np.where(np.eye(n, dtype=bool), 0, x)


def scaled_fields(hprime_unit, fields=DEFAULT_FIELDS):
    """Shrink the probe ladder where |H'| per unit field exceeds 1, so that the
    largest probe stays in the linear regime."""
    h = float(np.max(np.abs(hprime_unit)))
    return tuple(E * min(1.0, 1.0 / h) for E in fields) if h > 0 else tuple(fields)


def check_pair(label, model, spec, points, fields=DEFAULT_FIELDS, mutate=None):
    """Run the three oracle rungs for one (model, dissipator) pair."""
    hooks = _hooks(mutate)
    w0 = w_closed = w_oracle = 0.0
    min_order = math.inf
    min_exp = math.inf
    for k in points:
        kx, ky = np.asarray(float(k[0])), np.asarray(float(k[1]))
        kind, fr = _frame_data(model, spec, kx, ky)
        hp = hooks.hprime(model, kx, ky, fr, 1.0, kind)
        rho0 = order0_matrix(spec, fr.energies, fr, (kx, ky))
        # (a) zeroth order against the null space of the unperturbed generator
        exact0 = _exact_states(model, spec, kx, ky, 0.0, fr, kind, rho0)
        w0 = max(w0, float(np.max(np.abs(exact0 - rho0))))
        # (b) closed form against the general solver, and expansion orders in the rates
        gen = first_order_matrix(spec, fr, hp, rho0, (kx, ky), "general")
        closed = _closed_form(spec, fr, hp, (kx, ky), hooks)
        mask = _offdiag if isinstance(spec, SpinLowering) else (lambda x: x)
        w_closed = max(w_closed, float(np.max(np.abs(mask(closed - gen)))
                                       / max(np.max(np.abs(gen)), 1e-300)))
        min_order = min(min_order, _expansion_order(spec, fr, hp, (kx, ky)))
        # (c) general solver against the finite-field states
        true_hp = hprime_from_frame(model, kx, ky, fr, 1.0, kind)
        gen_true = first_order_matrix(spec, fr, true_hp, rho0, (kx, ky), "general")
        ladder = scaled_fields(true_hp, fields)
        states = [_exact_states(model, spec, kx, ky, float(E), fr, kind, rho0) for E in ladder]
        probe = extract_linear_response(ladder, states, rho0, rho1_reference=gen)
        min_exp = min(min_exp, probe.exponent)
        w_oracle = max(w_oracle, float(np.max(np.abs(probe.rho1 - gen_true)) /
                                       max(np.max(np.abs(probe.rho1)), 1e-300)))
    order = 2 if isinstance(spec, SpinLowering) else 3
    return [
        CheckResult(f"{label}: zeroth order vs null space", w0 < 1e-9, w0, 1e-9),
        CheckResult(f"{label}: closed form vs general solver", w_closed < 1e-6, w_closed, 1e-6),
        CheckResult(f"{label}: rate-expansion order >= {order - 0.2:.1f}",
                    min_order >= order - 0.2, min_order, order - 0.2),
        CheckResult(f"{label}: general solver vs finite field", w_oracle < 1e-6, w_oracle, 1e-6),
        CheckResult(f"{label}: remainder exponent", min_exp >= MIN_EXPONENT, min_exp, MIN_EXPONENT),
    ]


def _expansion_order(spec, fr, hp, k, factors=(1.0, 0.5)):
    """Observed order of the error of the truncated rate expansion (log2 of the error ratio)."""
    errs = []
    for f in factors:
        s = _with_rate(spec, f * 0.1)
        if isinstance(s, SpinLowering):
            theta, _, E1 = fr.angles[:3]
            g = s.rate(*k)
            exact = lindblad.tau1_spin_dissipator(theta, E1, g, hp)
            t0, t1 = tau1_weak_gamma(theta, E1, g, hp)
            err = np.max(np.abs(exact - t0 - t1))
        elif isinstance(s, SingleSteadyBand):
            exact = lindblad.alpha1_single_matrix(s, fr.energies, hp)
            exp_ = _single_expansion_matrix(s, fr.energies, hp)
            err = np.max(np.abs(exact - exp_))
        else:
            exact = lindblad.alpha1_two_steady_bands(s, hp, fr.energies)
            err = np.max(np.abs(exact - lindblad.alpha1_two_steady_bands(s, hp, fr.energies,
                                                                         expansion=True)))
        errs.append(float(err))
    if errs[1] == 0.0 and errs[0] == 0.0:
        return math.inf
    return math.log2(errs[0] / max(errs[1], 1e-300))


def _single_expansion_matrix(spec, energies, hp):
    n = energies.shape[-1]
    s = spec.target
    out = np.zeros(hp.shape, dtype=complex)
    for j in range(n):
        if j == s:
            continue
        a = lindblad.alpha1_single_expansion((s, j), hp[..., s, j], energies[..., j] - energies[..., s],
                                             spec.rates[j])
        out[..., s, j] = a
        out[..., j, s] = np.conj(a)
    return out


def run_validation(seed=0, npoints=20, mutate=None, pairs=None):
    """The full oracle ladder over every builtin pair; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    results = []
    for label, model, spec in (pairs or builtin_pairs()):
        pts = random_gapped_points(model, npoints, rng)
        results.extend(check_pair(label, model, spec, pts, mutate=mutate))
    return results
