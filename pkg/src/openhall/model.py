"""Momentum-space band models.

Two kinds of model are supported.  A :class:`TwoBandModel` is described
by an offset and a d-vector, ``H = eps0 + d . sigma``.  A
:class:`BandModel` is any Hermitian matrix function of ``(kx, ky)``.
Both evaluate on numpy arrays of momenta, so whole grids are handled
in one call.

Units: energies in meV, momenta in nm^-1, couplings absorb hbar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError, DegeneratePoint, ValidationError

E1_FLOOR = 1e-12
FD_STEP = 1e-4

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class Torus:
    """Rectangular k-domain ``origin + [0, Lx) x [0, Ly)``.

    ``open_axes`` marks directions along which the integrand is not
    periodic over the window (e.g. a magnetic zone narrower than the
    period of H); quadrature then uses an endpoint transform there.
    """

    periods: tuple = (2 * math.pi, 2 * math.pi)
    origin: tuple = (-math.pi, -math.pi)
    open_axes: tuple = (False, False)


@dataclass(frozen=True)
class Plane:
    """The whole k-plane; ``kmax`` is the initial disk radius, ``scale`` the
    momentum scale around which quadrature nodes are concentrated."""

    kmax: float
    scale: float


def _five_point(f, kx, ky, axis, step=FD_STEP):
    if axis == 0:
        pts = [f(kx + j * step, ky) for j in (-2, -1, 1, 2)]
    else:
        pts = [f(kx, ky + j * step) for j in (-2, -1, 1, 2)]
    fm2, fm1, fp1, fp2 = (np.asarray(p) for p in pts)
    return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * step)


@dataclass(frozen=True)
class TwoBandModel:
    name: str
    d: Callable
    params: Mapping = field(default_factory=dict)
    offset: Optional[Callable] = None
    partials: Optional[Callable] = None
    domain: object = field(default_factory=Torus)
    periods: Optional[tuple] = None     # periodicity of H(k), for lattice invariants
    dim: int = 2

    def d_vector(self, kx, ky):
        kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
        dx, dy, dz = self.d(kx, ky)
        return np.stack(np.broadcast_arrays(dx, dy, dz, kx)[:3])

    def offset_at(self, kx, ky):
        kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
        if self.offset is None:
            return np.zeros(kx.shape)
        return np.broadcast_to(np.asarray(self.offset(kx, ky), float), kx.shape)

    def d_partials(self, kx, ky):
        """Array of shape (2, 3, ...): ``[axis, component]`` derivatives of d."""
        kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
        if self.partials is not None:
            px, py = self.partials(kx, ky)
            px = np.stack(np.broadcast_arrays(*px, kx)[:3])
            py = np.stack(np.broadcast_arrays(*py, kx)[:3])
            return np.stack([px, py])
        return self.d_partials_fd(kx, ky)

    def d_partials_fd(self, kx, ky):
        return np.stack([_five_point(self.d_vector, kx, ky, a) for a in (0, 1)])

    def hamiltonian(self, kx, ky):
        d = self.d_vector(kx, ky)
        eps = self.offset_at(kx, ky)
        return _pauli(d) + eps[..., None, None] * np.eye(2)

    def dhamiltonian(self, kx, ky):
        """(dH/dkx, dH/dky); the offset derivative is included by differences."""
        p = self.d_partials(kx, ky)
        out = [_pauli(p[0]), _pauli(p[1])]
        if self.offset is not None:
            for a in (0, 1):
                de = _five_point(self.offset_at, kx, ky, a)
                out[a] = out[a] + de[..., None, None] * np.eye(2)
        return np.stack(out)


def _pauli(d):
    d = np.asarray(d)
    return (d[0][..., None, None] * SIGMA_X + d[1][..., None, None] * SIGMA_Y
            + d[2][..., None, None] * SIGMA_Z)


@dataclass(frozen=True)
class BandModel:
    """Generic N-band model from a matrix function ``h(kx, ky) -> (..., N, N)``."""

    name: str
    dim: int
    h: Callable
    params: Mapping = field(default_factory=dict)
    dh: Optional[Callable] = None
    domain: object = field(default_factory=Torus)
    periods: Optional[tuple] = None

    def hamiltonian(self, kx, ky):
        kx, ky = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
        out = np.asarray(self.h(kx, ky), dtype=complex)
        return np.broadcast_to(out, kx.shape + (self.dim, self.dim))

    def dhamiltonian(self, kx, ky):
        if self.dh is not None:
            return np.stack([np.asarray(a, dtype=complex) for a in self.dh(kx, ky)])
        return np.stack([_five_point(self.hamiltonian, kx, ky, a) for a in (0, 1)])


# --------------------------------------------------------------------------
# angles

@dataclass(frozen=True)
class AngleField:
    theta: np.ndarray
    phi: np.ndarray
    E1: np.ndarray


def angles_from_d(d):
    """(theta, phi, E1) arrays from a stacked d-vector; E1 = 0 gives NaN angles."""
    d = np.asarray(d, float)
    E1 = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    delta = np.hypot(d[0], d[1])
    ok = E1 >= E1_FLOOR
    safe = np.where(ok, E1, 1.0)
    theta = np.where(ok, np.arccos(np.clip(d[2] / safe, -1.0, 1.0)), np.nan)
    phi = np.where(delta < E1_FLOOR * np.maximum(1.0, E1), 0.0, np.arctan2(d[1], d[0]))
    phi = np.where(ok, phi, np.nan)
    return theta, phi, E1


def angles(model, k):
    """Angle field at a single momentum ``k = (kx, ky)``."""
    if not isinstance(model, TwoBandModel):
        raise ValidationError("angles are defined for two-band models only")
    theta, phi, E1 = angles_from_d(model.d_vector(k[0], k[1]))
    if E1 < E1_FLOOR:
        raise DegeneratePoint(f"bands touch at k={tuple(k)} (E1={float(E1):.3e})", k=tuple(k))
    return AngleField(float(theta), float(phi), float(E1))


def angle_derivatives(model, kx, ky):
    """theta, phi, E1 and their k-derivatives on arrays of momenta.

    Returns ``(theta, phi, E1, dtheta, dphi)`` with ``dtheta[a]`` the
    derivative along axis ``a``.  Points where E1 or the in-plane
    magnitude vanish yield NaN derivatives (callers exclude them).
    """
    d = model.d_vector(kx, ky)
    p = model.d_partials(kx, ky)
    theta, phi, E1 = angles_from_d(d)
    delta2 = d[0] ** 2 + d[1] ** 2
    delta = np.sqrt(delta2)
    bad = (E1 < E1_FLOOR) | (delta < E1_FLOOR * np.maximum(1.0, E1))
    E2 = np.where(bad, 1.0, E1 ** 2)
    sd = np.where(bad, 1.0, delta)
    sd2 = np.where(bad, 1.0, delta2)
    dtheta = np.empty((2,) + theta.shape)
    dphi = np.empty((2,) + theta.shape)
    for a in (0, 1):
        ddelta = (d[0] * p[a, 0] + d[1] * p[a, 1]) / sd
        dtheta[a] = np.where(bad, np.nan, (d[2] * ddelta - delta * p[a, 2]) / E2)
        dphi[a] = np.where(bad, np.nan, (d[0] * p[a, 1] - d[1] * p[a, 0]) / sd2)
    return theta, phi, E1, dtheta, dphi


def hamiltonian_at(model, k):
    h = model.hamiltonian(np.asarray(k[0], float), np.asarray(k[1], float))
    return np.array(h, dtype=complex)


# --------------------------------------------------------------------------
# builtin models

def rashba_dresselhaus(lam, beta, h0, kmax=None, scale=None):
    """Rashba (lam) plus Dresselhaus (beta) coupling with a Zeeman term h0.

    d = (lam*ky - beta*kx, -lam*kx + beta*ky, h0).  The two couplings
    contribute windings of opposite sign, so the in-plane map degenerates
    at |beta| = |lam|.
    """
    lam, beta, h0 = float(lam), float(beta), float(h0)

    def d(kx, ky):
        return lam * ky - beta * kx, -lam * kx + beta * ky, h0 + 0 * kx

    def partials(kx, ky):
        z = np.zeros(np.shape(kx))
        return (-beta + z, -lam + z, z), (lam + z, beta + z, z)

    if scale is None:
        c = max(abs(lam), abs(beta))
        scale = abs(h0) / c if (c > 0 and h0 != 0) else 1.0
    if kmax is None:
        kmax = 50.0 * scale
    return TwoBandModel("rashba_dresselhaus", d, {"lambda": lam, "beta": beta, "h0": h0},
                        partials=partials, domain=Plane(float(kmax), float(scale)))


def bi2se3_valley(vF, delta0, B, kmax=None, scale=None):
    """Low-energy surface/thin-film model: d = (vF ky, -vF kx, delta0/2 - B k^2)."""
    vF, delta0, B = float(vF), float(delta0), float(B)

    def d(kx, ky):
        return vF * ky, -vF * kx, delta0 / 2 - B * (kx ** 2 + ky ** 2)

    def partials(kx, ky):
        z = np.zeros(np.shape(kx))
        return (z, -vF + z, -2 * B * kx), (vF + z, z, -2 * B * ky)

    if scale is None:
        cands = []
        if vF != 0 and delta0 != 0:
            cands.append(abs(delta0) / (2 * abs(vF)))
        if B != 0 and vF != 0:
            cands.append(abs(vF / B))
        if B != 0 and delta0 != 0:
            cands.append(math.sqrt(abs(delta0 / (2 * B))))
        scale = min(cands) if cands else 1.0
    if kmax is None:
        kmax = 50.0 * scale
    return TwoBandModel("bi2se3_valley", d, {"vF": vF, "delta0": delta0, "B": B},
                        partials=partials, domain=Plane(float(kmax), float(scale)))


def magnetic_lattice(ta, delta, p, q, l, m, periods=None, origin=None):
    """Effective two-band model of a square lattice in a rational flux p/q.

    d = (delta cos(l ky), delta sin(l ky), 2 ta cos(kx + 2 pi (p/q) m)).
    Hall integrals use the magnetic zone kx in [0, 2 pi/q), ky in [0, 2 pi);
    lattice invariants use the full 2 pi x 2 pi period of H.
    """
    ta, delta = float(ta), float(delta)
    for name, v in (("p", p), ("q", q), ("l", l), ("m", m)):
        if int(v) != v:
            raise ValidationError(f"{name} must be an integer, got {v}")
    p, q, l, m = int(p), int(q), int(l), int(m)
    if q == 0:
        raise ValidationError("q must be nonzero")
    shift = 2 * math.pi * p / q * m

    def d(kx, ky):
        return delta * np.cos(l * ky), delta * np.sin(l * ky), 2 * ta * np.cos(kx + shift)

    def partials(kx, ky):
        z = np.zeros(np.shape(kx))
        return ((z, z, -2 * ta * np.sin(kx + shift)),
                (-delta * l * np.sin(l * ky), delta * l * np.cos(l * ky), z))

    if periods is None:
        periods = (2 * math.pi / abs(q), 2 * math.pi)
    if origin is None:
        origin = (0.0, 0.0)
    return TwoBandModel("magnetic_lattice", d,
                        {"ta": ta, "delta": delta, "p": p, "q": q, "l": l, "m": m},
                        partials=partials, domain=Torus(tuple(periods), tuple(origin),
                                                     _open_axes(periods, (2 * math.pi, 2 * math.pi))),
                        periods=(2 * math.pi, 2 * math.pi))


def _open_axes(window, period):
    """An axis is open unless the window is a whole multiple of the period."""
    out = []
    for w, p in zip(window, period):
        r = w / p
        out.append(abs(r - round(r)) > 1e-12 or round(r) == 0)
    return tuple(out)


def qwz(mass):
    """Reference square-lattice Chern insulator, d = (sin kx, sin ky, M + cos kx + cos ky)."""
    mass = float(mass)

    def d(kx, ky):
        return np.sin(kx), np.sin(ky), mass + np.cos(kx) + np.cos(ky)

    def partials(kx, ky):
        z = np.zeros(np.shape(kx))
        return (np.cos(kx), z, -np.sin(kx)), (z, np.cos(ky), -np.sin(ky))

    return TwoBandModel("qwz", d, {"mass": mass}, partials=partials,
                        domain=Torus(), periods=(2 * math.pi, 2 * math.pi))


_S1 = 1 / math.sqrt(2) * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
_S2 = 1 / math.sqrt(2) * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
_S3 = np.diag([1.0, 0.0, -1.0]).astype(complex)


def spin1_qwz(mass):
    """Three-band reference model H = d(k) . S with spin-1 matrices and the qwz d-vector."""
    base = qwz(mass)

    def h(kx, ky):
        d = base.d_vector(kx, ky)
        return d[0][..., None, None] * _S1 + d[1][..., None, None] * _S2 + d[2][..., None, None] * _S3

    def dh(kx, ky):
        p = base.d_partials(kx, ky)
        return [p[a, 0][..., None, None] * _S1 + p[a, 1][..., None, None] * _S2
                + p[a, 2][..., None, None] * _S3 for a in (0, 1)]

    return BandModel("spin1_qwz", 3, h, {"mass": float(mass)}, dh=dh,
                     domain=Torus(), periods=(2 * math.pi, 2 * math.pi))


# --------------------------------------------------------------------------
# custom two-band models from coefficient tables

def _term_tables(block, comp):
    """Polynomial terms ``comp = [[c, px, py], ...]`` and Fourier terms
    ``comp_cos`` / ``comp_sin`` with rows ``[c, nx, ny]``."""
    out = {}
    for suffix in ("", "_cos", "_sin"):
        key = comp + suffix
        rows = block.get(key, [])
        table = []
        for i, row in enumerate(rows):
            if not isinstance(row, (list, tuple)) or len(row) != 3:
                raise ConfigError("each term must be [coefficient, a, b]", f"{key}[{i}]")
            try:
                table.append(tuple(float(x) for x in row))
            except (TypeError, ValueError):
                raise ConfigError(f"non-numeric entry {row!r}", f"{key}[{i}]") from None
        out[suffix] = table
    return out


def _eval_terms(tables, kx, ky):
    val = np.zeros(np.shape(kx))
    gx = np.zeros(np.shape(kx))
    gy = np.zeros(np.shape(kx))
    for c, a, b in tables[""]:
        val = val + c * kx ** a * ky ** b
        if a:
            gx = gx + c * a * kx ** (a - 1) * ky ** b
        if b:
            gy = gy + c * b * kx ** a * ky ** (b - 1)
    for c, a, b in tables["_cos"]:
        arg = a * kx + b * ky
        val = val + c * np.cos(arg)
        gx = gx - c * a * np.sin(arg)
        gy = gy - c * b * np.sin(arg)
    for c, a, b in tables["_sin"]:
        arg = a * kx + b * ky
        val = val + c * np.sin(arg)
        gx = gx + c * a * np.cos(arg)
        gy = gy + c * b * np.cos(arg)
    return val, gx, gy


def custom_two_band(block):
    tabs = {c: _term_tables(block, c) for c in ("dx", "dy", "dz", "eps0")}

    def d(kx, ky):
        return tuple(_eval_terms(tabs[c], kx, ky)[0] for c in ("dx", "dy", "dz"))

    def partials(kx, ky):
        ev = [_eval_terms(tabs[c], kx, ky) for c in ("dx", "dy", "dz")]
        return tuple(e[1] for e in ev), tuple(e[2] for e in ev)

    has_eps = any(tabs["eps0"][s] for s in tabs["eps0"])
    offset = (lambda kx, ky: _eval_terms(tabs["eps0"], kx, ky)[0]) if has_eps else None
    kind = block.get("domain", "plane")
    if kind == "plane":
        scale = _num(block, "scale", 1.0)
        domain = Plane(_num(block, "kmax", 50.0 * scale), scale)
        periods = None
    elif kind == "torus":
        periods = tuple(_num_list(block, "periods", (2 * math.pi, 2 * math.pi)))
        origin = tuple(_num_list(block, "origin", (-periods[0] / 2, -periods[1] / 2)))
        domain = Torus(periods, origin)
    else:
        raise ConfigError(f"unknown domain {kind!r} (expected 'plane' or 'torus')", "domain")
    return TwoBandModel("custom_two_band", d, {}, offset=offset, partials=partials,
                        domain=domain, periods=periods)


# --------------------------------------------------------------------------
# config parsing

BUILTINS = {
    "rashba_dresselhaus": (rashba_dresselhaus, ("lambda", "beta", "h0")),
    "bi2se3_valley": (bi2se3_valley, ("vF", "delta0", "B")),
    "magnetic_lattice": (magnetic_lattice, ("ta", "delta", "p", "q", "l", "m")),
    "qwz": (qwz, ("mass",)),
    "spin1_qwz": (spin1_qwz, ("mass",)),
}
INTEGER_KEYS = {"p", "q", "l", "m"}


def load_document(document):
    """Parse TOML text (or pass a mapping through)."""
    if isinstance(document, Mapping):
        return dict(document)
    try:
        import tomllib
    except ModuleNotFoundError:          # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(document)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None


def _num(block, key, default=None):
    if key not in block:
        if default is None:
            raise ConfigError("missing parameter", key)
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        if isinstance(v, str):
            try:
                return float(v)
            except ValueError:
                pass
        raise ConfigError(f"expected a number, got {v!r}", key)
    if not math.isfinite(v) and key not in ("kmax",):
        raise ConfigError(f"expected a finite number, got {v!r}", key)
    return float(v)


def _num_list(block, key, default):
    if key not in block:
        return default
    v = block[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError("expected a pair of numbers", key)
    return [_num({key: x}, key) for x in v]


def parse_model_config(document):
    """Build a model from a config document.

    The model block is either the ``[model]`` table of the document or
    the document itself.  ``model`` names a builtin (or
    ``custom_two_band``); the remaining keys are constructor parameters
    plus optional ``kmax``/``scale`` (plane) or ``periods``/``origin``
    (torus) overrides.
    """
    doc = load_document(document)
    block = doc.get("model") if isinstance(doc.get("model"), Mapping) else doc
    name = block.get("model")
    if name is None:
        raise ConfigError("missing model name", "model")
    if name == "custom_two_band":
        return custom_two_band(block)
    if name not in BUILTINS:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(BUILTINS) + ['custom_two_band']}",
                          "model")
    ctor, keys = BUILTINS[name]
    args = []
    for key in keys:
        v = _num(block, key)
        if key in INTEGER_KEYS:
            if v != int(v):
                raise ConfigError(f"expected an integer, got {block[key]!r}", key)
            v = int(v)
        args.append(v)
    extra = {}
    if name in ("rashba_dresselhaus", "bi2se3_valley"):
        for key in ("kmax", "scale"):
            if key in block:
                extra[key] = _num(block, key)
    if name == "magnetic_lattice":
        if "periods" in block:
            extra["periods"] = tuple(_num_list(block, "periods", None))
        if "origin" in block:
            extra["origin"] = tuple(_num_list(block, "origin", None))
    known = set(keys) | {"model", "kmax", "scale", "periods", "origin"}
    unknown = sorted(set(block) - known)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {unknown}", unknown[0])
    return ctor(*args, **extra)
