"""Dissipators, zeroth-order steady states and first-order coefficients.

All matrices here live in the instantaneous eigenbasis of H0(k).  The
two-band spin dissipator uses the spinor basis ordering
``[upper band, lower band]``; everything else uses ascending band order.

Sign conventions: the perturbed generator is
``L(rho) = L0(rho) - i[H', rho]``, so the first-order state solves
``L0(rho1) = i[H', rho0]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .algebra import (NULL_RTOL, dagger, kernel_projector_stack, liouvillian_stack, vec,
                      unvec)
from .errors import (ConfigError, DegeneratePoint, NonUniqueResponse, SolverError,
                     ValidationError)

SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)   # spin basis (up, down)


# --------------------------------------------------------------------------
# dissipator specifications

def _rates(values, name):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(f"{name} must be finite and nonnegative, got {values!r}")
    return tuple(arr.tolist()) if arr.ndim == 1 else tuple(tuple(r) for r in arr.tolist())


@dataclass(frozen=True)
class SingleSteadyBand:
    """Jumps |s><j| for every band j != s, with rates ``rates[j]``.

    ``rates[target]`` must be 0 (a jump |s><s| would only dephase).
    """

    target: int
    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "rates", _rates(self.rates, "rates"))
        n = len(self.rates)
        if not 0 <= self.target < n:
            raise ValidationError(f"target band {self.target} out of range for {n} bands")
        if self.rates[self.target] != 0:
            raise ValidationError("the rate of the target band itself must be 0")

    @property
    def nbands(self):
        return len(self.rates)

    def null_dimension(self, nbands=None):
        return 1 + sum(1 for j, g in enumerate(self.rates) if j != self.target and g == 0)


@dataclass(frozen=True)
class TwoSteadyBands:
    """Jumps |s_a><j| with rate table ``rates[a][j]`` (a = 0, 1) into two dark bands.

    ``weights`` are the zeroth-order populations of the two target bands.
    """

    targets: tuple
    rates: tuple
    weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        rates = _rates(self.rates, "rates")
        if len(rates) != 2 or len(set(len(r) for r in rates)) != 1:
            raise ValidationError("rates must be a 2 x N table")
        object.__setattr__(self, "rates", rates)
        s1, s2 = (int(t) for t in self.targets)
        n = len(rates[0])
        if s1 == s2 or not (0 <= s1 < n and 0 <= s2 < n):
            raise ValidationError(f"targets {self.targets} invalid for {n} bands")
        object.__setattr__(self, "targets", (s1, s2))
        for a in range(2):
            if rates[a][s1] != 0 or rates[a][s2] != 0:
                raise ValidationError("rates out of the target bands must be 0")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (2,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValidationError(f"weights must be two nonnegative numbers summing to 1, got {self.weights}")
        object.__setattr__(self, "weights", tuple(w.tolist()))

    @property
    def nbands(self):
        return len(self.rates[0])

    def null_dimension(self, nbands=None):
        tot = np.asarray(self.rates).sum(axis=0)
        return 2 + sum(1 for j in range(self.nbands) if j not in self.targets and tot[j] == 0)


@dataclass(frozen=True)
class SpinLowering:
    """sigma_minus decay in the spin basis at rate ``gamma`` (number or gamma(kx, ky))."""

    gamma: Union[float, Callable]

    def __post_init__(self):
        if not callable(self.gamma):
            g = float(self.gamma)
            if not np.isfinite(g) or g < 0:
                raise ValidationError(f"gamma must be finite and nonnegative, got {self.gamma}")
            object.__setattr__(self, "gamma", g)

    nbands = 2

    def rate(self, kx=0.0, ky=0.0):
        if callable(self.gamma):
            g = np.asarray(self.gamma(kx, ky), dtype=float)
            if np.any(g < 0):
                raise ValidationError("gamma(k) must be nonnegative")
            return g
        return self.gamma

    @property
    def constant(self):
        return not callable(self.gamma)

    def null_dimension(self, nbands=None):
        if callable(self.gamma):
            return 1
        return 1 if self.gamma > 0 else 2


@dataclass(frozen=True)
class CustomDissipator:
    """Explicit eigenbasis jump operators.  ``transfers`` lists (k_from, k_to)
    pairs the dissipator couples; any pair with k_from != k_to breaks
    momentum conservation."""

    jumps: tuple
    transfers: tuple = ()
    expected_null: int = 1

    @property
    def nbands(self):
        return np.asarray(self.jumps[0][0]).shape[0] if self.jumps else None

    def null_dimension(self, nbands=None):
        return self.expected_null


def gap_shift(spec, nbands=None):
    """Matrix ``D[s, n]`` of imaginary denominator shifts (zero where undefined)."""
    if isinstance(spec, SingleSteadyBand):
        n = spec.nbands
        D = np.zeros((n, n))
        D[spec.target, :] = spec.rates
        D[spec.target, spec.target] = 0.0
        return D
    if isinstance(spec, TwoSteadyBands):
        n = spec.nbands
        tot = np.asarray(spec.rates).sum(axis=0)
        D = np.zeros((n, n))
        for s in spec.targets:
            D[s, :] = tot
            D[s, list(spec.targets)] = 0.0
        return D
    raise ValidationError("gap shifts are defined for steady-band dissipators only")


# --------------------------------------------------------------------------
# jump operators

def jump_operators(spec, basis=None, k=None):
    """``[(F, rate), ...]`` in the eigenbasis given by the columns of ``basis``.

    For steady-band dissipators the operators are matrix units and the
    basis only fixes the dimension; for the spin dissipator
    ``F = U^dag sigma_minus U``.
    """
    if isinstance(spec, SingleSteadyBand):
        n = spec.nbands
        if basis is not None and np.shape(basis)[-1] != n:
            raise ValidationError(f"basis has {np.shape(basis)[-1]} bands, spec has {n}")
        out = []
        for j in range(n):
            if j == spec.target:
                continue
            F = np.zeros((n, n), dtype=complex)
            F[spec.target, j] = 1.0
            out.append((F, spec.rates[j]))
        return out
    if isinstance(spec, TwoSteadyBands):
        n = spec.nbands
        if basis is not None and np.shape(basis)[-1] != n:
            raise ValidationError(f"basis has {np.shape(basis)[-1]} bands, spec has {n}")
        out = []
        for a, s in enumerate(spec.targets):
            for j in range(n):
                if j in spec.targets:
                    continue
                F = np.zeros((n, n), dtype=complex)
                F[s, j] = 1.0
                out.append((F, spec.rates[a][j]))
        return out
    if isinstance(spec, SpinLowering):
        if basis is None:
            raise ValidationError("the spin dissipator needs the eigenbasis")
        U = np.asarray(basis, dtype=complex)
        if U.shape[-2:] != (2, 2):
            raise ValidationError("the spin dissipator acts on two-band models only")
        rate = spec.rate(*(k if k is not None else (0.0, 0.0)))
        return [(dagger(U) @ SIGMA_MINUS @ U, rate)]
    if isinstance(spec, CustomDissipator):
        return [(np.asarray(F, dtype=complex), float(g)) for F, g in spec.jumps]
    raise ValidationError(f"unknown dissipator spec {type(spec).__name__}")


def spinor_basis(theta, phi):
    """Columns (upper, lower) = (cos(t/2) e^{-i phi}, sin(t/2)), (-sin(t/2) e^{-i phi}, cos(t/2))."""
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    c, s, e = np.cos(theta / 2), np.sin(theta / 2), np.exp(-1j * phi)
    U = np.empty(theta.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = c * e
    U[..., 1, 0] = s
    U[..., 0, 1] = -s * e
    U[..., 1, 1] = c
    return U


# --------------------------------------------------------------------------
# closed forms for the spin dissipator

def steady0_two_band(theta, E1, gamma):
    """Zeroth-order steady state in the (upper, lower) eigenbasis."""
    theta, E1, gamma = (np.asarray(x, float) for x in (theta, E1, gamma))
    if np.any((E1 == 0) & (gamma == 0)):
        raise DegeneratePoint("E1 = gamma = 0: steady state not unique")
    den = gamma ** 2 + 3 * E1 ** 2 + E1 ** 2 * np.cos(2 * theta)
    t11 = np.sin(theta / 2) ** 2 * (gamma ** 2 + 2 * E1 ** 2 - 2 * E1 ** 2 * np.cos(theta)) / den
    t12 = gamma * (gamma - 2j * E1) * np.sin(theta) / (2 * den)
    shape = np.broadcast_shapes(theta.shape, E1.shape, gamma.shape)
    tau = np.empty(shape + (2, 2), dtype=complex)
    tau[..., 0, 0] = t11
    tau[..., 0, 1] = t12
    tau[..., 1, 0] = np.conj(t12)
    tau[..., 1, 1] = 1 - t11
    return tau


def steady0_two_band_weak(theta):
    """gamma -> 0 limit of the zeroth-order state (diagonal)."""
    theta = np.asarray(theta, float)
    t11 = np.sin(theta / 2) ** 2 * (1 - np.cos(theta)) / (1 + np.cos(theta) ** 2)
    tau = np.zeros(theta.shape + (2, 2), dtype=complex)
    tau[..., 0, 0] = t11
    tau[..., 1, 1] = 1 - t11
    return tau


def tau1_terms(theta, E1, gamma, hprime):
    """(s1, s2, s3, D) of the first-order coefficient; ``hprime`` is (..., 2, 2)."""
    h12, h21 = hprime[..., 0, 1], hprime[..., 1, 0]
    g, E, th = gamma, E1, theta
    s1 = np.cos(th) * (g - 2j * E) * (-4j * g ** 2 * h12 + g * E * (h12 + h21) - 14j * E ** 2 * h12)
    s2 = E * np.cos(3 * th) * (g - 2j * E) * (g * (h12 + h21) + 2j * E * h12)
    s3 = g * np.sin(th) * (-g ** 2 + 3j * g * E + 3 * E ** 2 + E * np.cos(2 * th) * (1j * g + E))
    D = g ** 2 + 3 * E ** 2 + E ** 2 * np.cos(2 * th)
    return s1, s2, s3, D


def combine_tau1(s1, s2, s3, D, hprime, s3_sign=1.0):
    dh = hprime[..., 0, 0] - hprime[..., 1, 1]
    t12 = (s1 - s2 + 2j * s3_sign * s3 * dh) / (4 * D ** 2)
    out = np.zeros(np.shape(t12) + (2, 2), dtype=complex)
    out[..., 0, 1] = t12
    out[..., 1, 0] = np.conj(t12)
    return out


def tau1_spin_dissipator(theta, E1, gamma, hprime):
    """First-order off-diagonal coefficients (diagonal left at zero)."""
    theta, E1, gamma = (np.asarray(x, float) for x in (theta, E1, gamma))
    hprime = np.asarray(hprime, dtype=complex)
    if np.any((E1 == 0) & (gamma == 0)):
        raise DegeneratePoint("E1 = gamma = 0: first-order state undefined")
    return combine_tau1(*tau1_terms(theta, E1, gamma, hprime), hprime)


def tau1_weak_gamma(theta, E1, gamma, hprime):
    """Expansion of the off-diagonal coefficient to first order in gamma.

    Returns ``(order0, order1)`` matrices; their sum approximates
    :func:`tau1_spin_dissipator` with an O(gamma^2) error.
    """
    th, E = np.asarray(theta, float), np.asarray(E1, float)
    g = np.asarray(gamma, float)
    h11, h12 = hprime[..., 0, 0], hprime[..., 0, 1]
    h21, h22 = hprime[..., 1, 0], hprime[..., 1, 1]
    c, c3, s = np.cos(th), np.cos(3 * th), np.sin(th)
    Q = (3 + np.cos(2 * th)) ** 2
    t0 = -(7 * c + c3) / (E * Q) * h12
    t1 = (-1j * g * (7 * c + c3) * h12 + 1j * g * (c3 - c) * (h12 + h21)
          + 1j * g * (3 * s + s * np.cos(2 * th)) * (h11 - h22)) / (2 * E ** 2 * Q)
    out = []
    for t in (t0, t1):
        m = np.zeros(np.shape(t) + (2, 2), dtype=complex)
        m[..., 0, 1] = t
        m[..., 1, 0] = np.conj(t)
        out.append(m)
    return tuple(out)


# --------------------------------------------------------------------------
# steady-band closed forms

def alpha1_single_steady_band(pair, hprime_sn, gap, rate):
    """alpha1_{sn} = -H'_{sn} / (eps_n - eps_s + i Delta_sn); zero on the diagonal.

    ``gap`` is eps_n - eps_s and ``rate`` is Delta_sn.
    """
    s, n = pair
    if s == n:
        return 0.0 * np.asarray(hprime_sn)
    gap = np.asarray(gap, float)
    rate = np.asarray(rate, float)
    if np.any((gap == 0) & (rate == 0)):
        raise DegeneratePoint(f"bands {s} and {n} touch with no decay")
    return -np.asarray(hprime_sn) / (gap + 1j * rate)


def alpha1_single_expansion(pair, hprime_sn, gap, rate):
    """Large-gap expansion of :func:`alpha1_single_steady_band` to (rate/gap)^2."""
    s, n = pair
    if s == n:
        return 0.0 * np.asarray(hprime_sn)
    x = np.asarray(rate, float) / np.asarray(gap, float)
    return -np.asarray(hprime_sn) / gap * (1 - 1j * x - x ** 2)


def alpha1_single_matrix(spec, energies, hprime):
    """Full first-order matrix for a single steady band (batched)."""
    eps = np.asarray(energies, float)
    hp = np.asarray(hprime, dtype=complex)
    n = eps.shape[-1]
    s = spec.target
    out = np.zeros(hp.shape, dtype=complex)
    for j in range(n):
        if j == s:
            continue
        a = alpha1_single_steady_band((s, j), hp[..., s, j], eps[..., j] - eps[..., s], spec.rates[j])
        out[..., s, j] = a
        out[..., j, s] = np.conj(a)
    return out


def alpha1_two_steady_bands(spec, hprime, energies, weights=None, expansion=False):
    """First-order matrix for two dark bands (batched over leading axes).

    Entries (s_a, n) for non-target n use the exact shifted denominator
    (or its large-gap expansion when ``expansion``); the (s1, s2)
    coherence is (w2 - w1) H'_{s1 s2} / (eps_s2 - eps_s1).
    """
    w = spec.weights if weights is None else tuple(weights)
    eps = np.asarray(energies, float)
    hp = np.asarray(hprime, dtype=complex)
    n = eps.shape[-1]
    s1, s2 = spec.targets
    if np.any(eps[..., s1] == eps[..., s2]):
        raise DegeneratePoint("the two steady bands are degenerate")
    tot = np.asarray(spec.rates).sum(axis=0)
    out = np.zeros(hp.shape, dtype=complex)
    f = alpha1_single_expansion if expansion else alpha1_single_steady_band
    for a, s in enumerate((s1, s2)):
        for j in range(n):
            if j in (s1, s2):
                continue
            v = w[a] * f((s, j), hp[..., s, j], eps[..., j] - eps[..., s], tot[j])
            out[..., s, j] = v
            out[..., j, s] = np.conj(v)
    v = (w[1] - w[0]) * hp[..., s1, s2] / (eps[..., s2] - eps[..., s1])
    out[..., s1, s2] = v
    out[..., s2, s1] = np.conj(v)
    return out


# --------------------------------------------------------------------------
# general first-order solver

def _eigen_liouvillian(energies, jumps):
    eps = np.asarray(energies, float)
    h0 = np.zeros(eps.shape + (eps.shape[-1],), dtype=complex)
    idx = np.arange(eps.shape[-1])
    h0[..., idx, idx] = eps
    return liouvillian_stack(h0, jumps)


def first_order_stack(L0, hprime, order0, expected_null=1, rtol=NULL_RTOL):
    """Solve L0 x = i[H', rho0] with the kernel component of x removed.

    Batched over leading axes.  The kernel component is defined by the
    spectral projector of L0; for a one-dimensional kernel this is the
    condition Tr x = 0.
    """
    L0 = np.asarray(L0, dtype=complex)
    hp = np.asarray(hprime, dtype=complex)
    rho0 = np.asarray(order0, dtype=complex)
    n = hp.shape[-1]
    rhs = vec(1j * (hp @ rho0 - rho0 @ hp))
    s = np.linalg.svd(L0, compute_uv=False)
    small = s < rtol * np.maximum(s[..., :1], np.finfo(float).tiny)
    nulls = small.sum(axis=-1)
    dmax = int(np.max(nulls)) if nulls.size else 0
    if dmax > expected_null:
        raise NonUniqueResponse("first-order system singular beyond the expected kernel", dmax)
    if dmax == 0:
        raise SolverError("unperturbed generator has no kernel; not a Lindblad generator")
    if expected_null == 1:
        cons = np.broadcast_to(np.conj(vec(np.eye(n)))[None, :], L0.shape[:-2] + (1, n * n))
    else:
        cons = kernel_projector_stack(L0, expected_null)
    A = np.concatenate([L0, cons], axis=-2)
    b = np.concatenate([rhs, np.zeros(rhs.shape[:-1] + (cons.shape[-2],))], axis=-1)
    x = np.einsum("...ij,...j->...i", np.linalg.pinv(A, rcond=1e-12), b)
    resid = np.linalg.norm(np.einsum("...ij,...j->...i", L0, x) - rhs, axis=-1)
    scale = np.linalg.norm(rhs, axis=-1) + np.finfo(float).tiny
    if np.any(resid > 1e-8 * np.maximum(scale, 1.0)):
        raise SolverError(f"first-order system inconsistent (residual {float(np.max(resid)):.3e})")
    X = unvec(x)
    return 0.5 * (X + dagger(X))


def solve_first_order_general(H0eigs, Hprime, spec, order0, k=None):
    """First-order coefficient matrix from the full linear system.

    ``H0eigs = (energies, basis)`` with energies in the same order as
    the basis columns; ``Hprime`` and ``order0`` are in that basis.
    """
    energies, basis = H0eigs
    energies = np.asarray(energies, float)
    jumps = jump_operators(spec, basis, k)
    L0 = _eigen_liouvillian(energies, jumps)
    return first_order_stack(L0, Hprime, order0, spec.null_dimension(len(energies)))


# --------------------------------------------------------------------------
# momentum conservation

@dataclass(frozen=True)
class MomentumReport:
    ok: bool
    statement: str
    offending: tuple = field(default_factory=tuple)


def validate_momentum_conservation(spec, model=None):
    """Check that every jump operator acts inside a single k block."""
    transfers = tuple(getattr(spec, "transfers", ()))
    bad = tuple((tuple(a), tuple(b)) for a, b in transfers
                if not np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=0, atol=0))
    if bad:
        return MomentumReport(False, f"jump operators couple distinct momenta: {bad}", bad)
    name = getattr(model, "name", "model")
    return MomentumReport(True, f"every jump operator of {type(spec).__name__} on {name} is "
                                "defined per k block and conserves crystal momentum")


# --------------------------------------------------------------------------
# config

def parse_dissipator_config(block, nbands=2):
    """Build a spec from a ``[dissipator]`` table."""
    kind = block.get("dissipator")
    if kind is None:
        raise ConfigError("missing dissipator type", "dissipator")

    def num(x, key):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"expected a number, got {x!r}", key)
        return float(x)

    gamma = block.get("gamma", 0.0)
    try:
        if kind == "spin_lowering":
            return SpinLowering(num(gamma, "gamma"))
        if kind == "single_band":
            target = block.get("targets", block.get("target", 0))
            if isinstance(target, list):
                if len(target) != 1:
                    raise ConfigError("single_band takes one target", "targets")
                target = target[0]
            target = int(num(target, "targets"))
            if isinstance(gamma, list):
                rates = [num(g, f"gamma[{i}]") for i, g in enumerate(gamma)]
                if len(rates) != nbands:
                    raise ConfigError(f"expected {nbands} rates", "gamma")
                rates[target] = 0.0
            else:
                g = num(gamma, "gamma")
                rates = [0.0 if j == target else g for j in range(nbands)]
            return SingleSteadyBand(target, tuple(rates))
        if kind == "two_band":
            targets = block.get("targets")
            if not isinstance(targets, list) or len(targets) != 2:
                raise ConfigError("two_band needs two targets", "targets")
            targets = tuple(int(num(t, "targets")) for t in targets)
            weights = tuple(num(w, "weights") for w in block.get("weights", [0.5, 0.5]))
            if isinstance(gamma, list):
                if len(gamma) == 2 and all(isinstance(r, list) for r in gamma):
                    table = [[num(g, "gamma") for g in row] for row in gamma]
                else:
                    row = [num(g, "gamma") for g in gamma]
                    table = [row, row]
            else:
                g = num(gamma, "gamma")
                table = [[g] * nbands, [g] * nbands]
            for row in table:
                if len(row) != nbands:
                    raise ConfigError(f"expected {nbands} rates per target", "gamma")
                for t in targets:
                    row[t] = 0.0
            return TwoSteadyBands(targets, tuple(map(tuple, table)), weights)
    except ValidationError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "dissipator") from None
    raise ConfigError(f"unknown dissipator {kind!r}; expected single_band, two_band or "
                      "spin_lowering", "dissipator")
