"""Dense complex linear algebra: eigensystems, Liouvillians, null spaces.

Density matrices are vectorized by stacking columns, so that
``vec(A X B) = (B.T kron A) vec(X)``.  Every routine with a leading
underscore-free name works on a single matrix; the ``*_stack`` helpers
accept arrays with arbitrary leading batch axes and are what the
quadrature code calls on whole grids at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError, ValidationError

HERMITIAN_RTOL = 1e-12
NULL_RTOL = 1e-9
GAUGE_FLOOR = 1e-8


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def check_hermitian(h, name="matrix", rtol=HERMITIAN_RTOL):
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise ValidationError(f"{name} must be square, got shape {h.shape}")
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    err = float(np.max(np.abs(h - dagger(h)))) if h.size else 0.0
    if err > rtol * scale:
        raise ValidationError(f"{name} is not Hermitian (max |h - h^dag| = {err:.3e})")
    return h


def check_density_matrix(rho, tol=1e-10):
    """Raise unless ``rho`` is Hermitian, unit trace and positive semidefinite."""
    rho = check_hermitian(rho, "density matrix", rtol=tol)
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"density matrix trace {tr.real:.12g} != 1")
    w = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    if w.min() < -tol:
        raise ValidationError(f"density matrix has negative eigenvalue {w.min():.3e}")
    return rho


def fix_gauge(vecs):
    """Make the first component of modulus > 1e-8 of every column real and >= 0.

    Works on stacks of eigenvector matrices (columns are eigenvectors).
    """
    vecs = np.array(vecs, dtype=complex, copy=True)
    big = np.abs(vecs) > GAUGE_FLOOR
    first = np.argmax(big, axis=-2)                      # (..., n_vec)
    lead = np.take_along_axis(vecs, first[..., None, :], axis=-2)
    mod = np.abs(lead)
    phase = np.where(mod > 0, np.conj(lead) / np.where(mod > 0, mod, 1.0), 1.0)
    return vecs * phase


def eigh_stack(h):
    """Batched ``eigh`` with the deterministic gauge applied."""
    w, v = np.linalg.eigh(h)
    return w, fix_gauge(v)


def hermitian_eigensystem(h):
    """Eigenvalues (ascending) and gauge-fixed orthonormal eigenvectors (columns)."""
    h = check_hermitian(h, "hamiltonian")
    if h.ndim != 2:
        raise ValidationError("hermitian_eigensystem expects a single matrix")
    return eigh_stack(h)


# --------------------------------------------------------------------------
# Liouvillian

def vec(rho):
    """Column-stacking vectorization (batched over leading axes)."""
    rho = np.asarray(rho)
    n = rho.shape[-1]
    return np.swapaxes(rho, -1, -2).reshape(rho.shape[:-2] + (n * n,))


def unvec(v):
    v = np.asarray(v)
    n = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(v.shape[:-1] + (n, n)), -1, -2)


@dataclass(frozen=True)
class Superoperator:
    """Matrix of a linear map on column-stacked ``dim x dim`` matrices."""

    dim: int
    matrix: np.ndarray

    def apply(self, rho):
        return unvec(self.matrix @ vec(rho))


def liouvillian_stack(h, jumps=()):
    """Generator matrices for stacked Hamiltonians.

    ``jumps`` is a sequence of ``(F, rate)`` where ``F`` has the same
    shape as ``h`` (or broadcasts to it) and ``rate`` is a scalar or an
    array over the batch axes.
    """
    h = np.asarray(h, dtype=complex)
    n = h.shape[-1]
    eye = np.eye(n)
    hT = np.swapaxes(h, -1, -2)
    L = -1j * (_kron(eye, h) - _kron(hT, eye))
    for F, rate in jumps:
        F = np.broadcast_to(np.asarray(F, dtype=complex), h.shape)
        rate = np.asarray(rate, dtype=float)
        if np.any(rate < 0):
            raise ValidationError("jump rates must be nonnegative")
        FdF = dagger(F) @ F
        D = 2 * _kron(np.conj(F), F) - _kron(eye, FdF) - _kron(np.swapaxes(FdF, -1, -2), eye)
        L = L + rate[..., None, None] * D
    return L


def _kron(a, b):
    """Kronecker product of (batched) square matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    na, nb = a.shape[-1], b.shape[-1]
    out = a[..., :, None, :, None] * b[..., None, :, None, :]
    return np.broadcast_to(out, shape + (na, nb, na, nb)).reshape(shape + (na * nb, na * nb))


def build_liouvillian(h, jumps=()):
    """Superoperator of rho -> -i[h, rho] + sum_j g_j (2 F rho F^+ - {F^+ F, rho})."""
    h = check_hermitian(h, "hamiltonian")
    if h.ndim != 2:
        raise ValidationError("build_liouvillian expects a single Hamiltonian")
    n = h.shape[0]
    checked = []
    for i, (F, rate) in enumerate(jumps):
        F = np.asarray(F, dtype=complex)
        if F.shape != (n, n):
            raise ValidationError(f"jump operator {i} has shape {F.shape}, expected {(n, n)}")
        if not np.isfinite(rate) or rate < 0:
            raise ValidationError(f"jump operator {i} has invalid rate {rate}")
        checked.append((F, float(rate)))
    return Superoperator(n, liouvillian_stack(h, checked))


# --------------------------------------------------------------------------
# Null spaces

@dataclass(frozen=True)
class SteadyState:
    rho: np.ndarray
    multiplicity: int
    residual: float


def null_space_stack(L, rtol=NULL_RTOL):
    """Batched steady states from the SVD of generator matrices.

    Returns ``(rho, multiplicity, bad)`` where ``bad`` flags kernels whose
    representative has zero trace.  For a one-dimensional kernel the
    representative is the normalized kernel vector; for larger kernels it
    is the projection of the identity onto the kernel, which is a valid
    density matrix for Lindblad generators.
    """
    L = np.asarray(L, dtype=complex)
    n2 = L.shape[-1]
    n = int(round(np.sqrt(n2)))
    _, s, vh = np.linalg.svd(L)
    smax = s[..., :1]
    small = s < rtol * np.maximum(smax, np.finfo(float).tiny)
    mult = small.sum(axis=-1)
    kernel = np.conj(np.swapaxes(vh, -1, -2))            # columns = right singular vectors
    ident = vec(np.eye(n))
    coeff = np.einsum("...ij,i->...j", np.conj(kernel), ident)
    coeff = np.where(small, coeff, 0.0)
    r = np.einsum("...ij,...j->...i", kernel, coeff)
    # a unique kernel vector is used as is, whatever its overlap with the identity
    last = kernel[..., -1]
    use_last = (mult == 1)[..., None]
    r = np.where(use_last, last, r)
    rho = unvec(r)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    bad = np.abs(tr) < 1e-14
    rho = rho / np.where(bad, 1.0, tr)[..., None, None]
    rho = 0.5 * (rho + dagger(rho))
    return rho, mult, bad


def null_space_steady_state(L, rtol=NULL_RTOL):
    """Steady state of a Lindblad generator with its kernel multiplicity."""
    mat = L.matrix if isinstance(L, Superoperator) else np.asarray(L, dtype=complex)
    rho, mult, bad = null_space_stack(mat, rtol)
    mult = int(mult)
    if mult == 0:
        raise SolverError("generator has no null space within tolerance")
    if bool(bad):
        raise SolverError("kernel vector has zero trace; input is not a Lindblad generator")
    residual = float(np.linalg.norm(mat @ vec(rho)))
    return SteadyState(rho, mult, residual)


def kernel_projector_stack(L, m):
    """Spectral projector onto the ``m`` eigenvalues of smallest modulus.

    For a generator with an ``m``-fold zero eigenvalue this is the
    projector onto its kernel along the complementary invariant subspace;
    applied to a slightly perturbed generator it projects onto the slow
    manifold that continues the kernel.
    """
    L = np.asarray(L, dtype=complex)
    w, V = np.linalg.eig(L)
    order = np.argsort(np.abs(w), axis=-1, kind="stable")[..., :m]
    Vinv = np.linalg.inv(V)
    Vsel = np.take_along_axis(V, order[..., None, :], axis=-1)
    Wsel = np.take_along_axis(Vinv, order[..., :, None], axis=-2)
    return Vsel @ Wsel
