"""Fixed-sparsity block-sparse Hessian and gradient assembly."""
from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .smalldense import NonFiniteError, project_spd_batch, sym


class StructuralMiss(KeyError):
    """A block needed by a scatter is not part of the sparsity pattern."""


@dataclass(frozen=True)
class ElementStencil:
    element_id: int
    dof_indices: tuple[int, ...]

    def __post_init__(self):
        dofs = tuple(int(i) for i in self.dof_indices)
        if list(dofs) != sorted(set(dofs)):
            raise ValueError(f"element {self.element_id}: dof indices must be sorted and unique")
        if dofs and dofs[0] < 0:
            raise IndexError(f"element {self.element_id}: negative dof index")
        object.__setattr__(self, "dof_indices", dofs)


class BlockSparseMatrix:
    """Symmetric matrix stored as block CSR with dense ``d x d`` blocks.

    The pattern (``indptr``/``indices``) is fixed at construction; only
    ``data`` changes afterwards.
    """

    def __init__(self, n_dof: int, d: int, indptr: np.ndarray, indices: np.ndarray):
        if n_dof % d:
            raise ValueError("n_dof must be a multiple of the block size")
        self.n_dof = int(n_dof)
        self.d = int(d)
        self.nb = self.n_dof // self.d
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.zeros((len(self.indices), d, d))
        rows = np.repeat(np.arange(self.nb), np.diff(self.indptr))
        self._keys = rows * self.nb + self.indices
        self.diag_index = self.block_index(np.arange(self.nb), np.arange(self.nb))

    @property
    def nnz_blocks(self) -> int:
        return len(self.indices)

    def block_index(self, rows, cols) -> np.ndarray:
        """Positions in ``data`` of blocks ``(rows, cols)``; raises StructuralMiss if absent."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        target = rows * self.nb + cols
        pos = np.searchsorted(self._keys, target)
        pos_c = np.minimum(pos, len(self._keys) - 1)
        if len(self._keys) == 0 or np.any(self._keys[pos_c] != target):
            raise StructuralMiss("block not present in sparsity pattern")
        return pos_c

    def zero(self):
        self.data[...] = 0.0

    def copy(self) -> "BlockSparseMatrix":
        out = BlockSparseMatrix.__new__(BlockSparseMatrix)
        out.__dict__.update(self.__dict__)
        out.data = self.data.copy()
        return out

    def to_scipy(self) -> sp.bsr_matrix:
        """A scipy view sharing ``data`` with this matrix."""
        return sp.bsr_matrix((self.data, self.indices, self.indptr),
                             shape=(self.n_dof, self.n_dof), copy=False)

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x

    def diagonal_blocks(self) -> np.ndarray:
        return self.data[self.diag_index]

    def diagonal(self) -> np.ndarray:
        return np.einsum("kii->ki", self.diagonal_blocks()).ravel()

    def max_asymmetry(self) -> float:
        a = self.to_scipy().tocsr()
        diff = a - a.T
        return float(abs(diff).max()) if diff.nnz else 0.0


def sparsity_from_block_pairs(rows: np.ndarray, cols: np.ndarray, n_dof: int, d: int) -> BlockSparseMatrix:
    nb = n_dof // d
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    if rows.size and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= nb):
        raise IndexError("block index out of range")
    diag = np.arange(nb)
    # symmetric closure, diagonal always present for the preconditioner
    keys = np.unique(np.concatenate([rows * nb + cols, cols * nb + rows, diag * nb + diag]))
    r, c = np.divmod(keys, nb)
    indptr = np.zeros(nb + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    return BlockSparseMatrix(n_dof, d, np.cumsum(indptr), c)


def stencil_block_pairs(blocks: np.ndarray):
    """All (row, col) block pairs of stencils given as an ``(m, k)`` array of block ids."""
    blocks = np.asarray(blocks, dtype=np.int64)
    k = blocks.shape[1]
    r = np.repeat(blocks, k, axis=1)
    c = np.tile(blocks, (1, k))
    return r.ravel(), c.ravel()


def build_sparsity(stencils: Sequence[ElementStencil], n_dof: int, d: int) -> BlockSparseMatrix:
    """Union of the stencils' block cross-products."""
    if not stencils:
        raise ValueError("no stencils")
    rows, cols = [], []
    for st in stencils:
        dofs = np.asarray(st.dof_indices, dtype=np.int64)
        if dofs.size and dofs.max() >= n_dof:
            raise IndexError(f"element {st.element_id}: dof index out of range")
        blocks = np.unique(dofs // d)
        r, c = stencil_block_pairs(blocks[None])
        rows.append(r)
        cols.append(c)
    return sparsity_from_block_pairs(np.concatenate(rows), np.concatenate(cols), n_dof, d)


def _scatter_positions(H: BlockSparseMatrix, dofs: np.ndarray):
    """Flat positions in ``H.data`` for every local entry of dof stencils ``(m, k)``."""
    d = H.d
    dofs = np.asarray(dofs, dtype=np.int64)
    b = dofs // d
    o = dofs % d
    k = dofs.shape[1]
    bi = H.block_index(np.repeat(b, k, axis=1), np.tile(b, (1, k)))
    oi = np.repeat(o, k, axis=1)
    oj = np.tile(o, (1, k))
    return (bi * d * d + oi * d + oj).reshape(-1, k, k)


def scatter_hessians(H: BlockSparseMatrix, dofs: np.ndarray, hessians: np.ndarray, positions=None):
    """``H += sum_e S_e^T H_e S_e`` in element order."""
    if positions is None:
        positions = _scatter_positions(H, dofs)
    np.add.at(H.data.reshape(-1), positions.ravel(), np.asarray(hessians).ravel())


def scatter_gradients(g: np.ndarray, dofs: np.ndarray, grads: np.ndarray):
    np.add.at(g, np.asarray(dofs).ravel(), np.asarray(grads).ravel())


def scatter_delta(H: BlockSparseMatrix, stencil: ElementStencil, delta) -> None:
    """Add one element's Hessian change in place; the pattern is unchanged."""
    delta = sym(delta)
    if not np.all(np.isfinite(delta)):
        raise NonFiniteError("non-finite delta")
    dofs = np.asarray(stencil.dof_indices, dtype=np.int64)[None]
    scatter_hessians(H, dofs, delta[None])


def element_residual_inf(g: np.ndarray, stencil) -> float:
    """``max |g_i|`` over the element's dofs."""
    dofs = stencil.dof_indices if isinstance(stencil, ElementStencil) else stencil
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size == 0:
        return 0.0
    return float(np.abs(np.asarray(g)[dofs]).max())


def residual_inf_batch(g: np.ndarray, dofs: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(g)[np.asarray(dofs)]).max(axis=1)


# Patterns shared by systems with identical stencils (e.g. successive time steps),
# which lets the direct solver reuse its symbolic analysis.
_PATTERN_CACHE: OrderedDict = OrderedDict()
_PATTERN_LOCK = threading.Lock()


class ElementSystem:
    """A fixed set of element groups over ``n_dof`` unknowns.

    Element ids run over the groups in order, so summation into ``H`` and ``g``
    always follows ascending element id. Element Hessians from the last
    :meth:`assemble` are cached for incremental projection.
    """

    def __init__(self, groups, n_dof: int, d: int, constraints=()):
        self.groups = [grp for grp in groups if len(grp)]
        self.n_dof = int(n_dof)
        self.d = int(d)
        self.constraints = list(constraints)
        sizes = [len(grp) for grp in self.groups]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_elements = int(self.offsets[-1])
        for grp in self.groups:
            if grp.dofs.size and (grp.dofs.min() < 0 or grp.dofs.max() >= self.n_dof):
                raise IndexError("element dof index out of range")
        self._pattern = None
        self._positions = None
        self._hess = None
        cand = [np.full(len(grp), not grp.exempt) for grp in self.groups]
        self.candidate = np.concatenate(cand) if cand else np.zeros(0, dtype=bool)

    @property
    def n_candidates(self) -> int:
        return int(self.candidate.sum())

    def stencils(self) -> list[ElementStencil]:
        out = []
        for off, grp in zip(self.offsets, self.groups):
            out += [ElementStencil(int(off + i), tuple(row)) for i, row in enumerate(grp.dofs)]
        return out

    def new_matrix(self) -> BlockSparseMatrix:
        if self._pattern is None:
            key = (self.n_dof, self.d) + tuple(
                (g.dofs.shape, hashlib.sha1(np.ascontiguousarray(g.dofs)).hexdigest()) for g in self.groups)
            with _PATTERN_LOCK:
                hit = _PATTERN_CACHE.get(key)
                if hit is not None:
                    _PATTERN_CACHE.move_to_end(key)
            if hit is not None:
                self._pattern, self._positions = hit
                H = self._pattern.copy()
                H.zero()
                return H
            rows, cols = [], []
            for grp in self.groups:
                blocks = grp.dofs // self.d
                r, c = stencil_block_pairs(blocks)
                rows.append(r)
                cols.append(c)
            if rows:
                rows, cols = np.concatenate(rows), np.concatenate(cols)
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
            self._pattern = sparsity_from_block_pairs(rows, cols, self.n_dof, self.d)
            self._positions = [_scatter_positions(self._pattern, grp.dofs) for grp in self.groups]
            with _PATTERN_LOCK:
                _PATTERN_CACHE[key] = (self._pattern, self._positions)
                while len(_PATTERN_CACHE) > 8:
                    _PATTERN_CACHE.popitem(last=False)
        H = self._pattern.copy()
        H.zero()
        return H

    def admissible(self, x) -> bool:
        return all(c(x) for c in self.constraints)

    def energy(self, x) -> float:
        if not self.admissible(x):
            return np.inf
        total = 0.0
        for grp in self.groups:
            e = grp.energy(x)
            total += float(np.sum(e))
            if not np.isfinite(total):
                return np.inf
        return total

    def gradient(self, x) -> np.ndarray:
        g = np.zeros(self.n_dof)
        for grp in self.groups:
            _, ge, _ = grp.evaluate(x)
            scatter_gradients(g, grp.dofs, ge)
        return g

    def assemble(self, x, H: BlockSparseMatrix, g: np.ndarray) -> float:
        """Unprojected ``H = sum H_e``, ``g = sum g_e``; returns the energy."""
        if self._positions is None:
            self.new_matrix()
        H.zero()
        g[...] = 0.0
        self._hess = []
        total = 0.0
        for grp, pos in zip(self.groups, self._positions):
            e, ge, he = grp.evaluate(x)
            if not (np.all(np.isfinite(ge)) and np.all(np.isfinite(he))):
                raise NonFiniteError(f"{type(grp).__name__} returned non-finite values")
            scatter_gradients(g, grp.dofs, ge)
            scatter_hessians(H, grp.dofs, he, pos)
            self._hess.append(he)
            total += float(np.sum(e))
        return total

    def element_hessian(self, eid: int) -> np.ndarray:
        gi = int(np.searchsorted(self.offsets, eid, side="right") - 1)
        return self._hess[gi][eid - self.offsets[gi]]

    def residual_inf(self, g: np.ndarray) -> np.ndarray:
        """``|S_e g|_inf`` for every element, indexed by element id."""
        if not self.groups:
            return np.zeros(0)
        return np.concatenate([residual_inf_batch(g, grp.dofs) for grp in self.groups])

    def project(self, ids, H: BlockSparseMatrix, f) -> tuple[int, int]:
        """Project the cached Hessians of ``ids`` and scatter the differences into ``H``.

        Returns ``(n_decomposed, n_modified)``.
        """
        ids = np.asarray(ids, dtype=np.int64)
        n_dec = n_mod = 0
        for gi, grp in enumerate(self.groups):
            lo, hi = self.offsets[gi], self.offsets[gi + 1]
            local = ids[(ids >= lo) & (ids < hi)] - lo
            if local.size == 0:
                continue
            he = self._hess[gi][local]
            proj, modified, decomposed = project_spd_batch(he, f)
            n_dec += int(decomposed.sum())
            n_mod += int(modified.sum())
            if modified.any():
                sel = local[modified]
                delta = proj[modified] - he[modified]
                scatter_hessians(H, grp.dofs[sel], delta, self._positions[gi][sel])
        return n_dec, n_mod


def assemble(system: ElementSystem, x, H: BlockSparseMatrix, g: np.ndarray) -> float:
    return system.assemble(x, H, g)
