"""Linear response: H', velocities, Hall conductivities and Chern quantities.

Conductivities are in units of e^2/h.  With hbar = e = 1 the Hall
conductivity in these units is

    sigma = -(1/E_x) * integral dk_x dk_y / 2pi  v_y^(1)(k),

where v_y^(1) is the field-linear part of the interband velocity
sum_{i != j} alpha_ij <j|dH/dk_y|i>.  Every overlap is evaluated through
<m|d n> = <m|dH|n> / (eps_n - eps_m), which is gauge covariant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .algebra import dagger, eigh_stack
from .errors import DegeneratePoint, ResolutionError, ValidationError
from .lindblad import (SingleSteadyBand, SpinLowering, TwoSteadyBands,
                       _eigen_liouvillian, alpha1_single_matrix, alpha1_two_steady_bands,
                       first_order_stack, gap_shift, jump_operators, spinor_basis,
                       steady0_two_band, tau1_spin_dissipator, tau1_weak_gamma)
from .model import Plane, TwoBandModel, _pauli, angle_derivatives
from .quadrature import PlaneGrid, TorusGrid, default_grid, evaluate_once, integrate, plane_grid

GAP_FLOOR = 1e-12
FD_BASIS_STEP = 1e-6


@dataclass(frozen=True)
class FieldConfig:
    E_x: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.E_x):
            raise ValidationError(f"field must be finite, got {self.E_x}")


def _field_value(field_):
    if field_ is None:
        return 1.0
    return FieldConfig(field_.E_x if isinstance(field_, FieldConfig) else float(field_)).E_x


@dataclass(frozen=True)
class ConductivityBreakdown:
    sigma0: float
    dsigma1: float
    dsigma2: float
    total: float
    chern_rate: float
    error: float = 0.0
    excluded: int = 0
    levels: int = 0
    method: str = ""

    @classmethod
    def from_parts(cls, s0, s1, s2, error=0.0, excluded=0, levels=0, method=""):
        s0, s1, s2 = float(s0), float(s1), float(s2)
        total = s0 + s1 + s2
        return cls(s0, s1, s2, total, total, float(error), int(excluded), int(levels), method)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("sigma0", "dsigma1", "dsigma2", "total",
                                               "chern_rate", "error", "excluded", "levels",
                                               "method")}


def _from_report(rep, method, parts=None):
    v = np.asarray(rep.value, float)
    err = float(np.max(np.nan_to_num(np.asarray(rep.error, float), nan=0.0)))
    if parts is None:
        parts = (v[0], v[1], v[2]) if v.ndim else (float(v), 0.0, 0.0)
    return ConductivityBreakdown.from_parts(*parts, error=err, excluded=rep.excluded,
                                            levels=rep.levels, method=method)


# --------------------------------------------------------------------------
# eigen frames

@dataclass
class Frame:
    """Eigen data on an array of momenta; matrices in the eigenbasis."""

    energies: np.ndarray      # (..., N)
    basis: np.ndarray         # (..., N, N) columns
    vx: np.ndarray            # <m|dH/dkx|n>
    vy: np.ndarray
    angles: Optional[tuple] = None   # (theta, phi, E1, dtheta, dphi) for spinor frames


def _rephase(U, rng):
    if rng is None:
        return U
    ph = np.exp(2j * math.pi * rng.random(U.shape[:-2] + (1, U.shape[-1])))
    return U * ph


def eigen_frame(model, kx, ky, basis="eigh", rephase=None):
    """Eigenvalues, eigenvectors and velocity matrices at momenta (kx, ky).

    ``basis="spinor"`` (two-band models only) uses the (upper, lower)
    spinors built from the d-vector angles; ``"eigh"`` uses ascending
    gauge-fixed eigenvectors.  ``rephase`` (a numpy Generator) multiplies
    every eigenvector by a random phase, for gauge-invariance checks.
    """
    kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
    dH = model.dhamiltonian(kx, ky)
    ang = None
    if basis == "spinor":
        if not isinstance(model, TwoBandModel):
            raise ValidationError("the spinor basis exists for two-band models only")
        ang = angle_derivatives(model, kx, ky)
        theta, phi, E1 = ang[:3]
        U = spinor_basis(np.nan_to_num(theta), np.nan_to_num(phi))
        eps0 = model.offset_at(kx, ky)
        w = np.stack([eps0 + E1, eps0 - E1], axis=-1)
    elif basis == "eigh":
        w, U = eigh_stack(model.hamiltonian(kx, ky))
    else:
        raise ValidationError(f"unknown basis {basis!r}")
    U = _rephase(U, rephase)
    Ud = dagger(U)
    return Frame(w, U, Ud @ dH[0] @ U, Ud @ dH[1] @ U, ang)


def _gaps(w):
    """g[..., m, n] = eps_n - eps_m and a mask of unresolved pairs."""
    g = w[..., None, :] - w[..., :, None]
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1))[..., None, None]
    off = ~np.eye(w.shape[-1], dtype=bool)
    bad = (np.abs(g) < GAP_FLOOR * scale) & off
    return g, bad


def connection_offdiag(frame, axis=0):
    """<m|d_a n> for m != n (zero on the diagonal), NaN on degenerate pairs."""
    v = frame.vx if axis == 0 else frame.vy
    g, bad = _gaps(frame.energies)
    safe = np.where(bad | (g == 0), 1.0, g)
    out = np.where(g == 0, 0.0, v / safe)
    return np.where(bad, np.nan, out)


def _diag_connection_fd(model, kx, ky, basis_kind):
    """<n|d_x n> of gauge-fixed eigenvectors by central differences."""
    h = FD_BASIS_STEP
    Up = eigen_frame(model, kx + h, ky, basis_kind).basis
    Um = eigen_frame(model, kx - h, ky, basis_kind).basis
    U0 = eigen_frame(model, kx, ky, basis_kind).basis
    ov = np.einsum("...in,...in->...n", np.conj(U0), Up - Um) / (2 * h)
    return 1j * ov.imag


def hprime_from_frame(model, kx, ky, frame, E, basis_kind):
    """H'_mn = i E <m|d_x n> in the frame's eigenbasis (batched)."""
    A = connection_offdiag(frame, 0)
    n = A.shape[-1]
    idx = np.arange(n)
    if basis_kind == "spinor":
        theta, phi, E1, dth, dph = frame.angles
        diag = np.stack([-1j * np.cos(theta / 2) ** 2 * dph[0],
                         -1j * np.sin(theta / 2) ** 2 * dph[0]], axis=-1)
    else:
        diag = _diag_connection_fd(model, kx, ky, basis_kind)
    A = A.copy()
    A[..., idx, idx] = diag
    Hp = 1j * E * A
    return 0.5 * (Hp + dagger(Hp))


def perturbation_hprime(model, k, field_=None, basis=None):
    """H' at a single momentum, in the spinor basis for two-band models
    (order upper, lower) and the ascending eigenbasis otherwise."""
    E = _field_value(field_)
    kind = basis or ("spinor" if isinstance(model, TwoBandModel) else "eigh")
    kx, ky = np.asarray(k[0], float), np.asarray(k[1], float)
    fr = eigen_frame(model, kx, ky, kind)
    if E == 0:
        return np.zeros(fr.vx.shape, dtype=complex)
    Hp = hprime_from_frame(model, kx, ky, fr, E, kind)
    if not np.all(np.isfinite(Hp)):
        raise DegeneratePoint(f"degenerate bands or undefined angles at k={tuple(k)}", k=tuple(k))
    return Hp


# --------------------------------------------------------------------------
# steady states at one k

@dataclass(frozen=True)
class SteadyStateK:
    k: tuple
    energies: np.ndarray
    basis: np.ndarray
    order0: np.ndarray
    order1: np.ndarray
    field: float


def basis_kind_for(model, spec):
    return "spinor" if isinstance(spec, SpinLowering) else "eigh"


def order0_matrix(spec, energies, frame=None, k=None):
    n = np.shape(energies)[-1]
    shape = np.shape(energies)[:-1]
    rho = np.zeros(shape + (n, n), dtype=complex)
    if isinstance(spec, SingleSteadyBand):
        rho[..., spec.target, spec.target] = 1.0
        return rho
    if isinstance(spec, TwoSteadyBands):
        for s, w in zip(spec.targets, spec.weights):
            rho[..., s, s] = w
        return rho
    if isinstance(spec, SpinLowering):
        theta, _, E1 = frame.angles[:3]
        g = spec.rate(*(k if k is not None else (0.0, 0.0)))
        return steady0_two_band(theta, E1, g)
    raise ValidationError(f"no zeroth-order rule for {type(spec).__name__}")


def first_order_matrix(spec, frame, Hp, rho0, k=None, solver="closed_form"):
    """First-order coefficients (batched) by closed form or the general solver."""
    if solver == "general":
        jumps = jump_operators(spec, frame.basis, k)
        L0 = _eigen_liouvillian(frame.energies, jumps)
        return first_order_stack(L0, Hp, rho0, spec.null_dimension())
    if solver != "closed_form":
        raise ValidationError(f"unknown solver {solver!r}")
    if isinstance(spec, SingleSteadyBand):
        return alpha1_single_matrix(spec, frame.energies, Hp)
    if isinstance(spec, TwoSteadyBands):
        return alpha1_two_steady_bands(spec, Hp, frame.energies)
    if isinstance(spec, SpinLowering):
        theta, _, E1 = frame.angles[:3]
        g = spec.rate(*(k if k is not None else (0.0, 0.0)))
        return tau1_spin_dissipator(theta, E1, g, Hp)
    raise ValidationError(f"no closed form for {type(spec).__name__}")


def steady_state_k(model, spec, k, field_=None, solver="closed_form"):
    """Zeroth- and first-order steady state at one momentum."""
    E = _field_value(field_)
    kind = basis_kind_for(model, spec)
    kx, ky = float(k[0]), float(k[1])
    fr = eigen_frame(model, np.asarray(kx), np.asarray(ky), kind)
    if kind == "spinor" and not np.isfinite(fr.angles[2]) or np.any(_gaps(fr.energies)[1]):
        raise DegeneratePoint(f"degenerate bands at k={k}", k=(kx, ky))
    Hp = hprime_from_frame(model, np.asarray(kx), np.asarray(ky), fr, E, kind)
    if not np.all(np.isfinite(Hp)):
        raise DegeneratePoint(f"undefined perturbation at k={k}", k=(kx, ky))
    rho0 = order0_matrix(spec, fr.energies, fr, (kx, ky))
    rho1 = first_order_matrix(spec, fr, Hp, rho0, (kx, ky), solver)
    return SteadyStateK((kx, ky), fr.energies, fr.basis, rho0, rho1, E)


@dataclass(frozen=True)
class VelocityY:
    total: float
    zero_field: float
    response: float
    intraband: float = 0.0


def _interband_velocity(alpha, vy):
    """sum_{i != j} alpha_ij <j|dH/dky|i> (batched)."""
    n = alpha.shape[-1]
    off = ~np.eye(n, dtype=bool)
    terms = alpha * np.swapaxes(vy, -1, -2)
    return np.real(np.sum(np.where(off, terms, 0.0), axis=(-2, -1)))


def _intraband_velocity(alpha, vy):
    return np.real(np.einsum("...ii,...ii->...", alpha, vy))


def velocity_y_expectation(state, model, k=None):
    """Interband y-velocity of a steady state, with the zero-field part separated."""
    k = state.k if k is None else k
    kx, ky = np.asarray(k[0], float), np.asarray(k[1], float)
    dH = model.dhamiltonian(kx, ky)
    vy = dagger(state.basis) @ dH[1] @ state.basis
    v0 = float(_interband_velocity(state.order0, vy))
    v1 = float(_interband_velocity(state.order1, vy))
    return VelocityY(v0 + v1, v0, v1, float(_intraband_velocity(state.order1, vy)))


# --------------------------------------------------------------------------
# Hall conductivity

def _steady_band_integrands(model, spec, kx, ky, swap_xy=False, rephase=None):
    fr = eigen_frame(model, kx, ky, "eigh", rephase)
    if fr.energies.shape[-1] != spec.nbands:
        raise ValidationError(f"model has {fr.energies.shape[-1]} bands, spec {spec.nbands}")
    vx, vy = (fr.vy, fr.vx) if swap_xy else (fr.vx, fr.vy)
    g, bad = _gaps(fr.energies)
    D = gap_shift(spec)
    if isinstance(spec, SingleSteadyBand):
        targets, weights = (spec.target,), (1.0,)
    else:
        targets, weights = spec.targets, spec.weights
    out = np.zeros(kx.shape + (3,))
    badpt = np.zeros(kx.shape, dtype=bool)
    for s, w in zip(targets, weights):
        for n in range(fr.energies.shape[-1]):
            if n == s:
                continue
            gap = g[..., s, n]                     # eps_n - eps_s
            b = bad[..., s, n]
            badpt |= b
            safe = np.where(b, 1.0, gap)
            X = np.conj(vx[..., n, s]) * vy[..., n, s] / safe ** 2
            delta = D[s, n] / safe
            out[..., 0] += w * (-2 * X.imag)
            out[..., 1] += w * (2 * delta * X.real)
            out[..., 2] += w * (2 * delta ** 2 * X.imag)
    out[badpt] = np.nan
    return out


def _spin_integrands(model, spec, kx, ky, solver="closed_form", swap_xy=False):
    fr = eigen_frame(model, kx, ky, "spinor")
    theta, phi, E1, dth, dph = fr.angles
    Hp = hprime_from_frame(model, kx, ky, fr, 1.0, "spinor")
    g = spec.rate(kx, ky)
    rho0 = steady0_two_band(np.nan_to_num(theta), np.where(np.isfinite(E1), E1, 1.0), g)
    Hs = np.nan_to_num(Hp)
    if solver == "general":
        rho1 = first_order_matrix(spec, fr, Hs, rho0, (kx, ky), "general")
    else:
        rho1 = tau1_spin_dissipator(np.nan_to_num(theta), E1, g, Hs)
    t0, t1 = tau1_weak_gamma(np.nan_to_num(theta), E1, g, Hs)
    vy = fr.vx if swap_xy else fr.vy
    v21 = vy[..., 1, 0]
    s_exact = -2 * np.real(rho1[..., 0, 1] * v21)
    s0 = -2 * np.real(t0[..., 0, 1] * v21)
    s1 = -2 * np.real(t1[..., 0, 1] * v21)
    out = np.stack([s0, s1, s_exact - s0 - s1], axis=-1)
    badpt = ~np.all(np.isfinite(Hp), axis=(-2, -1)) | ~np.isfinite(E1) | (E1 < GAP_FLOOR)
    out[badpt] = np.nan
    return out


def hall_integrands(model, spec, kx, ky, swap_xy=False, rephase=None, solver="closed_form"):
    """(sigma0, dsigma1, dsigma2) integrands on arrays of momenta, shape (..., 3)."""
    kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
    if isinstance(spec, (SingleSteadyBand, TwoSteadyBands)):
        return _steady_band_integrands(model, spec, kx, ky, swap_xy, rephase)
    if isinstance(spec, SpinLowering):
        if not isinstance(model, TwoBandModel):
            raise ValidationError("the spin dissipator needs a two-band model")
        if swap_xy:
            raise ValidationError("x <-> y exchange is defined for steady-band integrands")
        return _spin_integrands(model, spec, kx, ky, solver)
    raise ValidationError(f"no Hall integrand for {type(spec).__name__}")


def hall_conductivity_general(model, spec, field_=None, grid=None, tol=1e-5, max_levels=5,
                              rephase=None, solver="closed_form", refine=True):
    """Hall conductivity split into zeroth, first and second order in the decay rates.

    Steady-band dissipators use the rate expansion of the exact
    first-order coefficients; the spin dissipator splits the exact
    first-order state into its gamma^0, gamma^1 and remaining parts.
    """
    _field_value(field_)
    grid = default_grid(model) if grid is None else grid
    seed = None
    if rephase is not None:
        seed = rephase.integers(2 ** 32)

    def f(kx, ky):
        rng = None if seed is None else np.random.default_rng([seed, kx.size])
        return hall_integrands(model, spec, kx, ky, rephase=rng, solver=solver)

    if refine:
        rep = integrate(f, grid, tol=tol, max_levels=max_levels)
    else:
        rep = evaluate_once(f, grid)
    return _from_report(rep, "general")


def _angle_integrands(model, gamma, kx, ky):
    theta, phi, E1, dth, dph = angle_derivatives(model, kx, ky)
    c, s = np.cos(theta), np.sin(theta)
    s0 = np.sin(2 * theta) / (3 + np.cos(2 * theta)) * (dth[0] * dph[1] - dth[1] * dph[0])
    s1 = gamma * (c / (2 * E1 * (1 + c * c)) * dth[0] * dth[1]
                  + c * s * s * (1 + 0.5 * s * s) / (E1 * (1 + c * c) ** 2) * dph[0] * dph[1])
    return np.stack([s0, s1], axis=-1)


def hall_two_band_spin(model, gamma, grid=None, tol=1e-5, max_levels=5, refine=True):
    """Closed-form (theta, phi) Hall conductivity of the spin dissipator to first order in gamma."""
    if callable(gamma) or isinstance(gamma, SpinLowering) and not gamma.constant:
        raise ValidationError("the closed forms assume a k-independent gamma")
    if isinstance(gamma, SpinLowering):
        gamma = gamma.gamma
    gamma = float(gamma)
    if not isinstance(model, TwoBandModel):
        raise ValidationError("closed forms need a two-band model")
    grid = default_grid(model) if grid is None else grid
    f = lambda kx, ky: _angle_integrands(model, gamma, kx, ky)
    rep = integrate(f, grid, tol=tol, max_levels=max_levels) if refine else evaluate_once(f, grid)
    v = np.asarray(rep.value)
    return _from_report(rep, "two_band_spin", parts=(v[0], v[1], 0.0))


# --------------------------------------------------------------------------
# Chern numbers

@dataclass(frozen=True)
class ChernNumber:
    value: int
    raw: float
    residual: float
    regularized: bool = False

    def __int__(self):
        return self.value


def _lattice_grid(model, grid, resolution):
    if grid is not None:
        return grid
    if isinstance(model.domain, Plane):
        return plane_grid(model, resolution or (128, 256), kmax=math.inf)
    periods = model.periods or model.domain.periods
    return TorusGrid(periods, model.domain.origin if model.periods is None else (0.0, 0.0),
                     resolution or (64, 64))


def _check_periodic(model, grid):
    ox, oy = grid.origin
    Lx, Ly = grid.periods
    pts = np.linspace(0.1, 0.9, 5)
    kx, ky = ox + pts * Lx, oy + pts[::-1] * Ly
    h = model.hamiltonian(kx, ky)
    scale = max(1.0, float(np.max(np.abs(h))))
    for dx, dy in ((Lx, 0.0), (0.0, Ly)):
        if np.max(np.abs(model.hamiltonian(kx + dx, ky + dy) - h)) > 1e-8 * scale:
            raise ValidationError(f"grid periods {grid.periods} are not periods of H(k); "
                                  "plaquette invariants need a closed torus")


def _plaquette_phases(u):
    """Berry phase of every plaquette for link variables on a periodic (i, j) lattice."""
    def link(a, b):
        z = np.einsum("...i,...i->...", np.conj(a), b)
        mod = np.abs(z)
        return np.where(mod > 1e-14, z / np.where(mod > 1e-14, mod, 1.0), np.nan)
    ux = link(u, np.roll(u, -1, axis=0))
    uy = link(u, np.roll(u, -1, axis=1))
    loop = ux * np.roll(uy, -1, axis=0) * np.conj(np.roll(ux, -1, axis=1)) * np.conj(uy)
    return np.angle(loop)


def _band_gap_ok(w, band):
    n = w.shape[-1]
    gaps = []
    if band > 0:
        gaps.append(w[..., band] - w[..., band - 1])
    if band < n - 1:
        gaps.append(w[..., band + 1] - w[..., band])
    return float(min(np.min(g) for g in gaps)) if gaps else math.inf


def chern_number_fhs(model, band, grid=None, resolution=None, rephase=None, regularize=None):
    """Lattice (plaquette) Chern number of one band.

    Torus grids must span a period of H(k).  Plane grids are compactified
    to a sphere: radial nodes run from k = 0 to the point at infinity.
    When the d-vector direction at infinity depends on the direction of
    k, a mass term -sgn(d_z(0)) |d_z(0)| (k / 4a)^2 is added to d_z (a
    the model scale) so that the compactification exists.
    """
    n = model.dim
    if not 0 <= band < n:
        raise ValidationError(f"band index {band} out of range for {n} bands")
    grid = _lattice_grid(model, grid, resolution)
    regularized = False
    if isinstance(grid, TorusGrid):
        _check_periodic(model, grid)
        ax, ay = grid.vertex_axes()
        kx, ky = np.meshgrid(ax, ay, indexing="ij")
        w, U = eigh_stack(model.hamiltonian(kx, ky))
        gap = _band_gap_ok(w, band)
        if gap < GAP_FLOOR:
            raise DegeneratePoint(f"band {band} touches a neighbour on the grid (gap {gap:.2e})")
        U = _rephase(U, rephase)
        phases = _plaquette_phases(U[..., :, band])
    else:
        u, regularized, orientation = _sphere_states(model, band, grid, rephase, regularize)
        phases = orientation * _plaquette_phases(u)[:-1, :]   # drop the wrap from infinity to 0
    if not np.all(np.isfinite(phases)):
        raise ResolutionError("orthogonal neighbouring states on the grid; refine it")
    raw = -float(np.sum(phases)) / (2 * math.pi)
    val = int(round(raw))
    res = abs(raw - val)
    if res >= 1e-3:
        raise ResolutionError(f"plaquette sum {raw:.6f} is not an integer (residual {res:.2e}); "
                              "refine the grid")
    return ChernNumber(val, raw, res, regularized)


def _sphere_states(model, band, grid, rephase, regularize):
    if not isinstance(model, TwoBandModel):
        raise ValidationError("plane compactification is implemented for two-band models")
    nu, npsi = grid.resolution
    a = grid.scale
    u = np.arange(1, nu) / nu
    r = a * np.tan(0.5 * math.pi * u)
    psi = np.arange(npsi) * 2 * math.pi / npsi
    R, P = np.meshgrid(r, psi, indexing="ij")
    kx, ky = grid.to_k(R * np.cos(P), R * np.sin(P))
    d = model.d_vector(kx, ky)
    d0 = model.d_vector(np.zeros(1), np.zeros(1))[:, 0]
    far = model.d_vector(*grid.to_k(a * 1e8 * np.cos(psi), a * 1e8 * np.sin(psi)))
    far = far / np.linalg.norm(far, axis=0)
    unique = np.max(np.linalg.norm(far - far[:, :1], axis=0)) < 1e-3
    if regularize is None:
        regularize = not unique
    if regularize:
        if abs(d0[2]) < GAP_FLOOR:
            raise DegeneratePoint("d_z(0) = 0: the plane model has no compactification")
        sgn = math.copysign(1.0, d0[2])
        d = d.copy()
        d[2] = d[2] - sgn * abs(d0[2]) * (R / (4 * a)) ** 2
        dinf = np.array([0.0, 0.0, -sgn])
    else:
        dinf = far[:, 0]
    dall = np.concatenate([np.broadcast_to(d0[:, None, None], (3, 1, npsi)), d,
                           np.broadcast_to(dinf[:, None, None], (3, 1, npsi))], axis=1)
    E1 = np.linalg.norm(dall, axis=0)
    if np.min(E1) < GAP_FLOOR:
        raise DegeneratePoint("bands touch on the compactified grid")
    h = _pauli(dall)
    w, U = eigh_stack(h)
    U = _rephase(U, rephase)
    states = U[..., :, band]
    # the poles are single points: share one state across the angular nodes
    states[0] = states[0, :1]
    states[-1] = states[-1, :1]
    orientation = 1.0 if grid.shear is None else float(np.sign(np.linalg.det(np.asarray(grid.shear))))
    return states, bool(regularize), orientation


# --------------------------------------------------------------------------
# curvature fields and Chern values

@dataclass(frozen=True)
class CurvatureField:
    grid: object
    curvature: np.ndarray          # (nbands, *grid shape)
    cell_weights: np.ndarray       # (*grid shape), includes the 1/2pi measure
    plaquette_phases: Optional[np.ndarray] = None


def berry_curvature_field(model, grid=None, rephase=None):
    """Berry curvature of every band at the grid nodes (gauge-invariant sum over states)."""
    grid = default_grid(model) if grid is None else grid
    if isinstance(grid, PlaneGrid) and not math.isinf(grid.kmax):
        grid = replace(grid, kmax=math.inf)
    kx, ky, cw = grid.nodes()
    fr = eigen_frame(model, kx, ky, "eigh", rephase)
    n = fr.energies.shape[-1]
    g, bad = _gaps(fr.energies)
    F = np.zeros((n,) + kx.shape)
    for b in range(n):
        for m in range(n):
            if m == b:
                continue
            gap = np.where(bad[..., m, b], np.nan, g[..., m, b])
            X = np.conj(fr.vx[..., m, b]) * fr.vy[..., m, b] / gap ** 2
            F[b] += -2 * X.imag
    phases = None
    if isinstance(grid, TorusGrid) and model.periods is not None:
        try:
            _check_periodic(model, grid)
            ax, ay = grid.vertex_axes()
            vx, vy = np.meshgrid(ax, ay, indexing="ij")
            _, U = eigh_stack(model.hamiltonian(vx, vy))
            phases = np.stack([_plaquette_phases(U[..., :, b]) for b in range(n)])
        except ValidationError:
            phases = None
    return CurvatureField(grid, F, cw, phases)


def chern_value(weights, curvature):
    """Weighted curvature integral sum_b int w_b(k) F_b(k) dk/2pi.

    ``weights`` is an array shaped like ``curvature.curvature`` or a
    mapping ``{band: weight array or scalar}``.
    """
    F = curvature.curvature
    if isinstance(weights, dict):
        total = 0.0
        for b, w in weights.items():
            w = np.asarray(w, float)
            if w.ndim and w.shape != F.shape[1:]:
                raise ValidationError(f"weights for band {b} have shape {w.shape}, grid {F.shape[1:]}")
            total += _masked_sum(w * F[b], curvature.cell_weights)
        return total
    w = np.asarray(weights, float)
    if w.shape != F.shape:
        raise ValidationError(f"weights shape {w.shape} does not match curvature {F.shape}")
    return _masked_sum(w * F, curvature.cell_weights)


def _masked_sum(vals, cw):
    vals = np.asarray(vals)
    good = np.isfinite(vals)
    return float(np.sum(np.where(good, vals, 0.0) * cw))


def chern_rate(breakdown):
    return breakdown.total


def bi2se3_analytic(B, delta0):
    sgn2 = lambda x: 0.0 if x == 0 else 1.0
    return 0.5 * math.log((1 + sgn2(B)) / (1 + sgn2(delta0)))


def lattice_hall_report(model, grid=None, tol=1e-5, max_levels=5):
    if model.name != "magnetic_lattice":
        raise ValidationError("lattice_hall expects the magnetic lattice model")
    if model.params["delta"] == 0:
        raise DegeneratePoint("delta = 0: the in-plane gap vanishes and phi is undefined")
    l = model.params["l"]
    grid = default_grid(model) if grid is None else grid

    def f(kx, ky):
        theta, _, _, dth, _ = angle_derivatives(model, kx, ky)
        c, s = np.cos(theta), np.sin(theta)
        return s * c / (1 + c * c) * dth[0] * l

    return integrate(f, grid, tol=tol, max_levels=max_levels)


def lattice_hall(model, grid=None, tol=1e-5, max_levels=5):
    """Hall conductivity of the magnetic lattice under the spin dissipator (gamma -> 0)."""
    return float(lattice_hall_report(model, grid, tol, max_levels).value)
