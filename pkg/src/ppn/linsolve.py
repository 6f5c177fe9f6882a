"""SPD linear solvers that exit early on indefiniteness.

``llt_solve`` is an up-looking sparse Cholesky factorization (the CSparse
algorithm) that stops at the first pivot below ``1e-12 * max(diag)``. The
ordering and symbolic analysis are computed once per sparsity pattern and
cached. ``pcg_solve`` is block-Jacobi preconditioned CG that stops as soon as a
search direction has ``d^T H d <= 1e-14 |d|^2``.
"""
from __future__ import annotations

import enum
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .assembly import BlockSparseMatrix
from .smalldense import CLAMP, NonFiniteError, is_pd_batch, jacobi_eigh

PIVOT_RTOL = 1e-12
CURVATURE_RTOL = 1e-14
DEFAULT_RTOL = 1e-4


class SolveStatus(enum.Enum):
    SOLVED = "solved"
    INDEFINITE = "indefinite"


class MaxIterationsExceeded(RuntimeError):
    """PCG did not reach the requested tolerance within ``max_iter`` iterations."""

    def __init__(self, iterations, residual):
        super().__init__(f"PCG did not converge in {iterations} iterations (rel. residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class SolveOutcome:
    status: SolveStatus
    step: np.ndarray | None
    detail: int
    """LLT: failing pivot (original dof numbering); PCG: iteration count."""

    @property
    def solved(self) -> bool:
        return self.status is SolveStatus.SOLVED


# --- sparse Cholesky kernels ----------------------------------------------------------

@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w, n):
    """Pattern of row k of L in topological order, written to s[top:n]."""
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@numba.njit(cache=True)
def _column_counts(n, Cp, Ci, parent):
    counts = np.ones(n, np.int64)
    s = np.empty(n, np.int64)
    w = np.full(n, -1, np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w, n)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@numba.njit(cache=True)
def _chol_numeric(n, Cp, Ci, Cx, parent, Lp, threshold):
    """Returns (Li, Lx, failed_pivot) with failed_pivot = -1 on success."""
    nnz = Lp[n]
    Li = np.empty(nnz, np.int64)
    Lx = np.empty(nnz, np.float64)
    c = Lp[:n].copy()
    x = np.zeros(n)
    s = np.empty(n, np.int64)
    w = np.full(n, -1, np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w, n)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] += Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > threshold:
            return Li, Lx, k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return Li, Lx, -1


@numba.njit(cache=True)
def _chol_solve(n, Lp, Li, Lx, b):
    x = b.copy()
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * x[j]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[j] -= Lx[p] * x[Li[p]]
        x[j] /= Lx[Lp[j]]
    return x


class CholeskySymbolic:
    """Ordering, elimination tree and column structure for one sparsity pattern."""

    def __init__(self, H: BlockSparseMatrix):
        self.indices = H.indices
        n = H.n_dof
        ids = np.arange(H.data.size, dtype=float).reshape(H.data.shape) + 1.0
        A = sp.bsr_matrix((ids, H.indices, H.indptr), shape=(n, n)).tocsr()
        self.perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
        C = A[self.perm][:, self.perm].tocsc()
        C = sp.triu(C, format="csc")
        C.sort_indices()
        self.n = n
        self.Cp = C.indptr.astype(np.int64)
        self.Ci = C.indices.astype(np.int64)
        self.gather = C.data.astype(np.int64) - 1
        self.parent = _etree(n, self.Cp, self.Ci)
        counts = _column_counts(n, self.Cp, self.Ci, self.parent)
        self.Lp = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


_SYMBOLIC_CACHE: OrderedDict = OrderedDict()
_SYMBOLIC_LOCK = threading.Lock()


def _symbolic(H: BlockSparseMatrix) -> CholeskySymbolic:
    key = id(H.indices)
    with _SYMBOLIC_LOCK:
        hit = _SYMBOLIC_CACHE.get(key)
        if hit is not None and hit.indices is H.indices:
            _SYMBOLIC_CACHE.move_to_end(key)
            return hit
    sym_ = CholeskySymbolic(H)
    with _SYMBOLIC_LOCK:
        _SYMBOLIC_CACHE[key] = sym_
        while len(_SYMBOLIC_CACHE) > 16:
            _SYMBOLIC_CACHE.popitem(last=False)
    return sym_


def llt_solve(H: BlockSparseMatrix, b: np.ndarray) -> SolveOutcome:
    """Sparse Cholesky solve of ``H x = b``; Indefinite on the first small pivot."""
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(H.data)) and np.all(np.isfinite(b))):
        raise NonFiniteError("non-finite system")
    s = _symbolic(H)
    flat = H.data.ravel()
    Cx = flat[s.gather]
    max_diag = float(np.max(H.diagonal())) if H.n_dof else 0.0
    threshold = PIVOT_RTOL * max(max_diag, 0.0)
    Li, Lx, fail = _chol_numeric(s.n, s.Cp, s.Ci, Cx, s.parent, s.Lp, threshold)
    if fail >= 0:
        return SolveOutcome(SolveStatus.INDEFINITE, None, int(s.perm[fail]))
    z = _chol_solve(s.n, s.Lp, Li, Lx, b[s.perm])
    x = np.empty_like(z)
    x[s.perm] = z
    return SolveOutcome(SolveStatus.SOLVED, x, -1)


# --- PCG -----------------------------------------------------------------------------

class BlockJacobiPreconditioner:
    """Inverted diagonal blocks; non-SPD blocks are projected first."""

    def __init__(self, blocks: np.ndarray, f=CLAMP):
        blocks = np.array(blocks, dtype=float)
        bad = ~is_pd_batch(blocks)
        self.n_projected = int(bad.sum())
        self.d = blocks.shape[-1]
        self.inverse = np.empty_like(blocks)
        good = ~bad
        try:
            self.inverse[good] = np.linalg.inv(blocks[good])
        except np.linalg.LinAlgError:
            bad[:] = True
        if bad.any():
            # filtered eigenvalues are >= the floor, so the inverse always exists
            w, v = jacobi_eigh(blocks[bad])
            self.inverse[bad] = np.einsum("kij,kj,klj->kil", v, 1.0 / f(w), v)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.einsum("kij,kj->ki", self.inverse, r.reshape(-1, self.d)).ravel()


def build_block_jacobi(H: BlockSparseMatrix, f=CLAMP) -> BlockJacobiPreconditioner:
    return BlockJacobiPreconditioner(H.diagonal_blocks(), f)


def pcg_solve(H, b, precond=None, rtol: float = DEFAULT_RTOL, max_iter: int | None = None) -> SolveOutcome:
    """Preconditioned CG from the zero vector, aborting on non-positive curvature.

    ``H`` may be a :class:`BlockSparseMatrix`, a scipy sparse matrix or a dense
    array. ``precond`` is a callable ``r -> M^{-1} r`` (identity if None).
    """
    b = np.asarray(b, dtype=float)
    if isinstance(H, BlockSparseMatrix):
        A = H.to_scipy()
        data = H.data
    else:
        A = H
        data = H.data if sp.issparse(H) else np.asarray(H)
    if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
        raise NonFiniteError("non-finite system")
    n = b.size
    max_iter = n if max_iter is None else max_iter
    x = np.zeros(n)
    r = b.copy()
    r0 = np.linalg.norm(r)
    if r0 == 0.0:
        return SolveOutcome(SolveStatus.SOLVED, x, 0)
    z = precond(r) if precond is not None else r.copy()
    d = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ad = A @ d
        dAd = d @ Ad
        if dAd <= CURVATURE_RTOL * (d @ d):
            return SolveOutcome(SolveStatus.INDEFINITE, None, it)
        a = rz / dAd
        x += a * d
        r -= a * Ad
        if np.linalg.norm(r) <= rtol * r0:
            return SolveOutcome(SolveStatus.SOLVED, x, it)
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise MaxIterationsExceeded(max_iter, np.linalg.norm(r) / r0)
