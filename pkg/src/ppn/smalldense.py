"""Small dense symmetric eigensolver and SPD eigenvalue filters.

Element Hessians are at most 12x12, so everything here works on batches of
matrices shaped ``(m, n, n)``; the single-matrix functions are thin wrappers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

MAX_DIM = 12
DEFAULT_FLOOR = 1e-8


class NonFiniteError(ValueError):
    """Raised when a matrix contains NaN or Inf entries."""


@dataclass(frozen=True)
class EigenPair:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return sym((q * self.eigenvalues[..., None, :]) @ np.swapaxes(q, -1, -2))


@dataclass(frozen=True)
class EigenFilter:
    """Eigenvalue filter: ``clamp`` uses max(l, floor), ``mirror`` max(|l|, floor)."""

    kind: Literal["clamp", "mirror"] = "clamp"
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.kind not in ("clamp", "mirror"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.floor > 0:
            raise ValueError("filter floor must be positive")

    def __call__(self, eigenvalues: np.ndarray) -> np.ndarray:
        if self.kind == "mirror":
            eigenvalues = np.abs(eigenvalues)
        return np.maximum(eigenvalues, self.floor)


CLAMP = EigenFilter("clamp")
MIRROR = EigenFilter("mirror")


def sym(m) -> np.ndarray:
    """Return the symmetric part of ``m`` (exactly symmetric storage)."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    if m.shape[-1] > MAX_DIM:
        raise ValueError(f"dimension {m.shape[-1]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix has non-finite entries")
    return m


def jacobi_eigh(mats: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition of a stack of symmetric matrices.

    Returns ``(w, v)`` with ascending eigenvalues ``w`` of shape ``(m, n)`` and
    orthonormal eigenvector columns ``v`` of shape ``(m, n, n)``.
    """
    mats = _check(mats)
    a = sym(mats).reshape(-1, mats.shape[-1], mats.shape[-1]).copy()
    m, n, _ = a.shape
    v = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    # normalize so the squared off-diagonal mass neither underflows nor overflows
    scale = np.max(np.abs(a), axis=(1, 2)) if a.size else np.zeros(m)
    scale = np.where(scale > 0, scale, 1.0)
    a /= scale[:, None, None]
    active = np.arange(m)
    offmask = 1.0 - np.eye(n)

    for _ in range(max_sweeps):
        if active.size == 0:
            break
        sub = a[active]
        diag = np.einsum("kii->ki", sub)
        off = np.einsum("kij,kij->k", sub * offmask, sub)
        todo = off > tol * tol * (off + np.einsum("ki,ki->k", diag, diag))
        active = active[todo]
        if active.size == 0:
            break
        A = a[active]
        V = v[active]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                nz = apq != 0.0
                if not nz.any():
                    continue
                safe = np.where(nz, apq, 1.0)
                with np.errstate(over="ignore", divide="ignore"):
                    theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                    t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_, s_ = c[:, None], s[:, None]

                cp, cq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = c_ * cp - s_ * cq
                A[:, :, q] = s_ * cp + c_ * cq
                rp, rq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = c_ * rp - s_ * rq
                A[:, q, :] = s_ * rp + c_ * rq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0

                vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
                V[:, :, p] = c_ * vp - s_ * vq
                V[:, :, q] = s_ * vp + c_ * vq
        a[active] = A
        v[active] = V

    w = np.einsum("kii->ki", a) * scale[:, None]
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w.reshape(mats.shape[:-1]), v.reshape(mats.shape)


def eig_sym(m) -> EigenPair:
    """Eigendecomposition of one symmetric matrix, eigenvalues ascending."""
    m = _check(m)
    w, v = jacobi_eigh(m[None])
    return EigenPair(w[0], v[0])


def apply_filter(p: EigenPair, f: EigenFilter = CLAMP) -> np.ndarray:
    return EigenPair(f(p.eigenvalues), p.eigenvectors).reconstruct()


def is_pd_batch(mats: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Vectorized Cholesky test: True where ``mats - shift*I`` is positive definite."""
    a = np.array(mats, dtype=float).reshape(-1, mats.shape[-1], mats.shape[-1])
    n = a.shape[-1]
    if shift:
        a[:, np.arange(n), np.arange(n)] -= shift
    ok = np.ones(a.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n):
            piv = a[:, j, j]
            ok &= piv > 0.0
            root = np.sqrt(np.where(piv > 0.0, piv, 1.0))
            col = a[:, j + 1:, j] / root[:, None]
            a[:, j + 1:, j + 1:] -= col[:, :, None] * col[:, None, :]
    return ok.reshape(mats.shape[:-2])


def project_spd_batch(mats: np.ndarray, f: EigenFilter = CLAMP):
    """Project a stack of symmetric matrices onto SPD.

    Returns ``(projected, modified, decomposed)``. Matrices that pass the
    Cholesky pre-check (min eigenvalue above the floor) are not decomposed.
    A decomposed matrix whose spectrum already clears the floor is returned
    unchanged with ``modified=False``.
    """
    mats = sym(_check(mats))
    out = mats.copy()
    m = mats.shape[0]
    modified = np.zeros(m, dtype=bool)
    decomposed = ~is_pd_batch(mats, shift=f.floor) if m else np.zeros(0, dtype=bool)
    idx = np.flatnonzero(decomposed)
    if idx.size:
        w, v = jacobi_eigh(mats[idx])
        wf = f(w)
        changed = np.any(wf != w, axis=1)
        sel = idx[changed]
        if sel.size:
            vv = v[changed]
            out[sel] = sym((vv * wf[changed][:, None, :]) @ np.swapaxes(vv, 1, 2))
        modified[sel] = True
    return out, modified, decomposed


def project_spd(m, f: EigenFilter = CLAMP) -> tuple[np.ndarray, bool]:
    out, modified, _ = project_spd_batch(np.asarray(m, dtype=float)[None], f)
    return out[0], bool(modified[0])
