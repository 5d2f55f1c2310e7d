"""Deterministic k-space quadrature with the dk_x dk_y / 2pi measure.

Torus grids use the midpoint rule.  Plane grids use a polar midpoint
rule: a disk of radius ``kmax`` whose radius is stretched around the
model's momentum scale, followed by annuli [K, 2K], [2K, 4K], ... added
until the last annulus is negligible.  A smooth endpoint transform in
the radial variable keeps the radial rule high order.

Integrands take arrays ``(kx, ky)`` and return an array of the same
shape, optionally with one trailing component axis.  Non-finite values
mark excluded (degenerate) points.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConvergenceError, DegeneratePoint, ValidationError
from .model import Plane, Torus

log = logging.getLogger(__name__)

MAX_EXCLUDED_FRACTION = 0.01
MAX_DOUBLINGS = 40


@dataclass(frozen=True)
class TorusGrid:
    periods: tuple = (2 * math.pi, 2 * math.pi)
    origin: tuple = (-math.pi, -math.pi)
    resolution: tuple = (64, 64)
    open_axes: tuple = (False, False)
    kind = "torus"

    def __post_init__(self):
        res = tuple(int(n) for n in np.broadcast_to(self.resolution, (2,)))
        if min(res) < 8:
            raise ValidationError(f"grid resolution must be >= 8, got {res}")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "open_axes", tuple(bool(a) for a in self.open_axes))

    def refined(self, level=1):
        return replace(self, resolution=tuple(n * 2 ** level for n in self.resolution))

    def _axis(self, i):
        o, L, n = self.origin[i], self.periods[i], self.resolution[i]
        u = (np.arange(n) + 0.5) / n
        if self.open_axes[i]:
            v, dv = _smooth_ends(u)
            return o + v * L, dv * L / n
        return o + u * L, np.full(n, L / n)

    def axes(self):
        return tuple(self._axis(i)[0] for i in range(2))

    def nodes(self):
        """(kx, ky, weights) with weights including the 1/2pi measure."""
        (ax, wx), (ay, wy) = self._axis(0), self._axis(1)
        kx, ky = np.meshgrid(ax, ay, indexing="ij")
        return kx, ky, np.outer(wx, wy) / (2 * math.pi)

    def vertex_axes(self):
        """Lattice sites used by plaquette invariants (periodic, no endpoint)."""
        return tuple(o + np.arange(n) * L / n
                     for o, L, n in zip(self.origin, self.periods, self.resolution))


@dataclass(frozen=True)
class PlaneGrid:
    """Polar grid on the k-plane.

    Nodes are laid out in a variable q and mapped to k = S q by the
    optional 2x2 ``shear`` S (weights carry |det S|); ``kmax`` and
    ``scale`` refer to q.  A shear undoes strong anisotropy of the
    model, which would otherwise confine the integrand to thin wedges.
    """

    kmax: float
    scale: float
    resolution: tuple = (128, 128)
    shear: Optional[tuple] = None
    kind = "plane"

    def __post_init__(self):
        res = tuple(int(n) for n in np.broadcast_to(self.resolution, (2,)))
        if min(res) < 8:
            raise ValidationError(f"grid resolution must be >= 8, got {res}")
        if res[1] % 2:
            raise ValidationError("the angular resolution of a plane grid must be even")
        if not self.scale > 0 or not self.kmax > 0:
            raise ValidationError("plane grids need positive kmax and scale")
        object.__setattr__(self, "resolution", res)
        if self.shear is not None:
            S = np.asarray(self.shear, float)
            if S.shape != (2, 2) or not abs(np.linalg.det(S)) > 0:
                raise ValidationError("shear must be an invertible 2x2 matrix")
            object.__setattr__(self, "shear", tuple(map(tuple, S.tolist())))

    def refined(self, level=1):
        return replace(self, resolution=tuple(n * 2 ** level for n in self.resolution))

    def to_k(self, qx, qy):
        if self.shear is None:
            return qx, qy
        (a, b), (c, d) = self.shear
        return a * qx + b * qy, c * qx + d * qy

    @property
    def jacobian(self):
        return 1.0 if self.shear is None else abs(float(np.linalg.det(np.asarray(self.shear))))

    def _angles(self):
        n = self.resolution[1]
        return (np.arange(n) + 0.5) * 2 * math.pi / n

    def disk_nodes(self):
        nr, npsi = self.resolution
        u = (np.arange(nr) + 0.5) / nr
        v, dv = _smooth_ends(u)
        a = self.scale
        T = math.pi / 2 if math.isinf(self.kmax) else math.atan(self.kmax / a)
        r = a * np.tan(v * T)
        drdu = a * T / np.cos(v * T) ** 2 * dv
        return self._polar(r, r * drdu / nr)

    def annulus_nodes(self, k0, k1):
        nr = max(8, self.resolution[0] // 2)
        u = (np.arange(nr) + 0.5) / nr
        v, dv = _smooth_ends(u)
        ratio = math.log(k1 / k0)
        r = k0 * np.exp(v * ratio)
        drdu = r * ratio * dv
        return self._polar(r, r * drdu / nr)

    def _polar(self, r, wr):
        psi = self._angles()
        R, P = np.meshgrid(r, psi, indexing="ij")
        W = np.outer(wr, np.full(psi.size, self.jacobian / psi.size))
        kx, ky = self.to_k(R * np.cos(P), R * np.sin(P))
        return kx, ky, W

    def nodes(self):
        return self.disk_nodes()


def _smooth_ends(u):
    """sin^2 endpoint transform: v(u) = u - sin(2 pi u)/(2 pi), v'(u) = 1 - cos(2 pi u)."""
    return u - np.sin(2 * math.pi * u) / (2 * math.pi), 1 - np.cos(2 * math.pi * u)


BZGrid = (TorusGrid, PlaneGrid)

LINEARITY_RTOL = 1e-3
ANISOTROPY_TRIGGER = 1.5


def asymptotic_shear(model):
    """Shear S = M^-1 sqrt|det M| when the in-plane d-vector is asymptotically
    linear, d_xy ~ M k, and markedly anisotropic; otherwise None."""
    if not hasattr(model, "d_vector"):
        return None
    K = 1e4 * model.domain.scale
    ex = np.array([K, 0.0, K / math.sqrt(2)])
    ey = np.array([0.0, K, K / math.sqrt(2)])
    d = np.asarray(model.d_vector(ex, ey), float)[:2]
    M = d[:, :2] / K
    pred = M @ np.array([1.0, 1.0]) / math.sqrt(2)
    if np.linalg.norm(d[:, 2] / K - pred) > LINEARITY_RTOL * max(np.linalg.norm(pred), 1e-300):
        return None
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0] or sv[0] <= ANISOTROPY_TRIGGER * sv[1]:
        return None
    return np.linalg.inv(M) * math.sqrt(sv[0] * sv[1]), sv


def plane_grid(model, resolution=(128, 128), kmax=None, scale=None):
    """Plane grid for ``model``, sheared when the model is strongly anisotropic."""
    dom = model.domain
    kmax = dom.kmax if kmax is None else kmax
    scale = dom.scale if scale is None else scale
    found = asymptotic_shear(model)
    if found is None:
        return PlaneGrid(kmax, scale, resolution)
    S, sv = found
    stretch = sv[0] / math.sqrt(sv[0] * sv[1])       # q-lengths of the soft direction
    return PlaneGrid(kmax * stretch, scale * stretch, resolution, tuple(map(tuple, S.tolist())))


def default_grid(model, resolution=None, kmax=None):
    dom = model.domain
    if isinstance(dom, Torus):
        return TorusGrid(dom.periods, dom.origin, resolution or (64, 64), dom.open_axes)
    if isinstance(dom, Plane):
        return plane_grid(model, resolution or (128, 128), kmax)
    raise ValidationError(f"unknown domain {dom!r}")


def period_grid(model, resolution=(64, 64)):
    """Torus grid over one full period of H(k), origin 0 (the closed manifold)."""
    if model.periods is None:
        raise ValidationError(f"model {model.name!r} has no lattice period")
    return TorusGrid(model.periods, (0.0, 0.0), resolution)


# --------------------------------------------------------------------------
# symmetrization

@dataclass(frozen=True)
class SymmetricGrid:
    grid: object
    pairs: np.ndarray          # flat index of the partner of each node


def symmetrize(grid):
    """Attach the k -> -k partner of every node."""
    if isinstance(grid, SymmetricGrid):
        return grid
    if isinstance(grid, TorusGrid):
        for o, L in zip(grid.origin, grid.periods):
            if abs(o + L / 2) > 1e-12 * max(1.0, L):
                raise ValidationError("torus grid is not symmetric under k -> -k "
                                      f"(origin {grid.origin}, periods {grid.periods})")
        nx, ny = grid.resolution
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        pairs = ((nx - 1 - ix) * ny + (ny - 1 - iy)).ravel()
        return SymmetricGrid(grid, pairs)
    if isinstance(grid, PlaneGrid):
        nr, npsi = grid.resolution
        ir, ip = np.meshgrid(np.arange(nr), np.arange(npsi), indexing="ij")
        pairs = (ir * npsi + (ip + npsi // 2) % npsi).ravel()
        return SymmetricGrid(grid, pairs)
    raise ValidationError(f"cannot symmetrize {grid!r}")


# --------------------------------------------------------------------------
# integration

@dataclass(frozen=True)
class ConvergenceReport:
    value: object
    error: object
    levels: int
    excluded: int
    history: tuple = ()
    kmax: Optional[float] = None
    exclusions: tuple = field(default=(), repr=False)


def pointwise(func):
    """Vectorize a scalar integrand; DegeneratePoint becomes NaN (excluded)."""
    def wrapped(kx, ky):
        out = []
        for a, b in zip(np.ravel(kx), np.ravel(ky)):
            try:
                out.append(func(float(a), float(b)))
            except DegeneratePoint:
                out.append(np.nan)
        arr = np.asarray(out, dtype=float)
        return arr.reshape(np.shape(kx) + arr.shape[1:])
    return wrapped


def _evaluate(integrand, kx, ky, w, pairs=None):
    f = np.asarray(integrand(kx, ky), dtype=float)
    comp = f.ndim == kx.ndim + 1
    ff = f.reshape(kx.size, -1)
    bad = ~np.all(np.isfinite(ff), axis=1)
    wf = w.ravel()
    if pairs is not None:
        bad = bad | bad[pairs]
        good = np.where(bad[:, None], 0.0, ff)
        val = 0.5 * np.sum((good + good[pairs]) * wf[:, None], axis=0)
    else:
        good = np.where(bad[:, None], 0.0, ff)
        val = np.sum(good * wf[:, None], axis=0)
    idx = np.flatnonzero(bad)
    return (val if comp else val[0]), idx


def _level_value(integrand, grid, symmetric, tail_tol, atol):
    pairs = symmetrize(grid).pairs if symmetric else None
    kx, ky, w = grid.nodes()
    total, idx = _evaluate(integrand, kx, ky, w, pairs)
    npts = kx.size
    excluded = [(int(i), "degenerate point") for i in idx]
    kmax = None
    if isinstance(grid, PlaneGrid) and not math.isinf(grid.kmax):
        k0 = grid.kmax
        for _ in range(MAX_DOUBLINGS):
            ax, ay, aw = grid.annulus_nodes(k0, 2 * k0)
            apairs = _annulus_pairs(grid) if symmetric else None
            ann, aidx = _evaluate(integrand, ax, ay, aw, apairs)
            excluded += [(int(npts + i), "degenerate point") for i in aidx]
            npts += ax.size
            total = total + ann
            k0 *= 2
            if np.all(np.abs(ann) <= tail_tol * np.abs(total) + atol):
                break
        else:
            raise ConvergenceError(f"plane tail did not decay up to K = {k0:.3e}")
        kmax = k0
    return total, excluded, npts, kmax


def _annulus_pairs(grid):
    nr = max(8, grid.resolution[0] // 2)
    npsi = grid.resolution[1]
    ir, ip = np.meshgrid(np.arange(nr), np.arange(npsi), indexing="ij")
    return (ir * npsi + (ip + npsi // 2) % npsi).ravel()


def integrate(integrand, grid, tol=1e-5, max_levels=5, atol=1e-10, tail_tol=1e-6,
              symmetric=False):
    """Refine ``grid`` by resolution doubling until the relative change is below ``tol``.

    Returns a :class:`ConvergenceReport` whose value comes from the finest
    level and whose error is the change from the previous level.
    """
    if isinstance(grid, SymmetricGrid):
        grid, symmetric = grid.grid, True
    history = []
    prev = None
    for level in range(max_levels):
        g = grid.refined(level) if level else grid
        value, excluded, npts, kmax = _level_value(integrand, g, symmetric, tail_tol, atol)
        frac = len(excluded) / npts
        if frac > MAX_EXCLUDED_FRACTION:
            raise ConvergenceError(
                f"{len(excluded)} of {npts} points excluded ({100 * frac:.2f}% > 1%) "
                f"at resolution {g.resolution}", history)
        if excluded:
            log.info("excluded %d degenerate points at resolution %s", len(excluded), g.resolution)
        err = None if prev is None else np.abs(np.asarray(value) - np.asarray(prev))
        history.append((g.resolution, value, len(excluded), kmax))
        if prev is not None and np.all(err <= tol * np.abs(value) + atol):
            return ConvergenceReport(_plain(value), _plain(err), level + 1, len(excluded),
                                     tuple(history), kmax, tuple(excluded))
        prev = value
    raise ConvergenceError(f"no convergence to tol={tol} after {max_levels} levels", history)


def evaluate_once(integrand, grid, symmetric=False, tail_tol=1e-6, atol=1e-10):
    """Single-level evaluation (no resolution refinement) as a report with error NaN."""
    if isinstance(grid, SymmetricGrid):
        grid, symmetric = grid.grid, True
    value, excluded, npts, kmax = _level_value(integrand, grid, symmetric, tail_tol, atol)
    if len(excluded) / npts > MAX_EXCLUDED_FRACTION:
        raise ConvergenceError(f"{len(excluded)} of {npts} points excluded (> 1%)")
    nan = np.full(np.shape(value), np.nan)
    return ConvergenceReport(_plain(value), _plain(nan), 1, len(excluded),
                             ((grid.resolution, value, len(excluded), kmax),), kmax, tuple(excluded))


def _plain(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x
