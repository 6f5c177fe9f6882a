"""Element energies with exact gradients and Hessians.

Each ``*Group`` evaluates many elements of one kind at once and exposes the
same small protocol used by :class:`ppn.assembly.ElementSystem`:

* ``dofs``: ``(m, K)`` global dof indices, sorted per row
* ``exempt``: Hessians are SPD for every state (never projected)
* ``energy(x)``: per-element energies, ``+inf`` where inadmissible
* ``evaluate(x)``: ``(energy, grad (m, K), hess (m, K, K))``

The single-element ``*_eval`` functions wrap the groups.

Stable Neo-Hookean (3D) is used in its reduced form without the log term::

    psi(F) = mu/2 (|F|^2 - 3) + lam_hat/2 (J - 1 - mu/lam_hat)^2 - mu^2 / (2 lam_hat)

with lam_hat = lam + mu. It is zero with zero gradient at rest, rest-stable, finite for J <= 0 and consistent with linear elasticity.
The 2D model is the plane-strain compressible Neo-Hookean::

    psi(F) = mu/2 (|F|^2 - 2) - mu ln J + lam/2 ln^2 J
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InadmissibleError(ValueError):
    """State outside the energy's domain (inverted triangle, penetration...)."""


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("youngs_modulus must be positive")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2 * (1 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        nu = self.poisson_ratio
        return self.youngs_modulus * nu / ((1 + nu) * (1 - 2 * nu))


@dataclass(frozen=True)
class BarrierParams:
    dhat: float = 5e-4
    kappa: float = 1e3

    def __post_init__(self):
        if not (self.dhat > 0 and self.kappa > 0):
            raise ValueError("barrier dhat and kappa must be positive")


@dataclass(frozen=True)
class ElementEval:
    energy: float
    gradient: np.ndarray
    hessian: np.ndarray


def vertex_dofs(vertices: np.ndarray, dim: int) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=np.int64)
    if vertices.ndim == 1:
        vertices = vertices[:, None]
    return (vertices[:, :, None] * dim + np.arange(dim)).reshape(len(vertices), -1)


class _VertexGroup:
    exempt = False

    def __init__(self, vertices, dim):
        self.vertices = np.asarray(vertices, dtype=np.int64)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices[:, None]
        self.dim = dim
        self.dofs = vertex_dofs(self.vertices, dim)

    def __len__(self):
        return len(self.vertices)

    def gather(self, x):
        return np.asarray(x)[self.dofs].reshape(len(self), -1, self.dim)


# --- per-vertex quadratic terms -------------------------------------------------

class InertiaGroup(_VertexGroup):
    """``m/(2 dt^2) |x - x_tilde|^2`` per vertex."""

    exempt = True

    def __init__(self, vertices, masses, x_tilde, dt):
        super().__init__(vertices, np.asarray(x_tilde).shape[-1])
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.masses = np.asarray(masses, dtype=float)
        self.x_tilde = np.asarray(x_tilde, dtype=float).reshape(len(self), self.dim)
        self.stiff = self.masses / dt**2

    def energy(self, x):
        r = self.gather(x)[:, 0] - self.x_tilde
        return 0.5 * self.stiff * np.einsum("ij,ij->i", r, r)

    def evaluate(self, x):
        r = self.gather(x)[:, 0] - self.x_tilde
        e = 0.5 * self.stiff * np.einsum("ij,ij->i", r, r)
        h = self.stiff[:, None, None] * np.eye(self.dim)
        return e, self.stiff[:, None] * r, h


class DirichletGroup(_VertexGroup):
    """Penalty ``k/2 |x - target|^2`` pinning vertices to (moving) targets."""

    exempt = True

    def __init__(self, vertices, targets, stiffness):
        targets = np.asarray(targets, dtype=float)
        super().__init__(vertices, targets.shape[-1])
        self.targets = targets.reshape(len(self), self.dim)
        self.stiffness = np.broadcast_to(np.asarray(stiffness, dtype=float), (len(self),)).copy()
        if np.any(self.stiffness <= 0):
            raise ValueError("penalty stiffness must be positive")

    def energy(self, x):
        r = self.gather(x)[:, 0] - self.targets
        return 0.5 * self.stiffness * np.einsum("ij,ij->i", r, r)

    def evaluate(self, x):
        r = self.gather(x)[:, 0] - self.targets
        e = 0.5 * self.stiffness * np.einsum("ij,ij->i", r, r)
        h = self.stiffness[:, None, None] * np.eye(self.dim)
        return e, self.stiffness[:, None] * r, h


def barrier(dist, dhat, kappa):
    """IPC log barrier and its first two derivatives in the distance."""
    dist = np.asarray(dist, dtype=float)
    inside = (dist > 0) & (dist < dhat)
    dd = np.where(inside, dist, dhat)
    s = dd - dhat
    lg = np.log(dd / dhat)
    b = -kappa * s * s * lg
    b1 = -kappa * (2 * s * lg + s * s / dd)
    b2 = -kappa * (2 * lg + 4 * s / dd - s * s / (dd * dd))
    b = np.where(dist <= 0, np.inf, np.where(inside, b, 0.0))
    return b, np.where(inside, b1, 0.0), np.where(inside, b2, 0.0)


class HalfspaceBarrierGroup(_VertexGroup):
    """Vertex vs. half-space ``{y : n.y >= offset}`` log barrier."""

    def __init__(self, vertices, normal, offset, params: BarrierParams):
        normal = np.asarray(normal, dtype=float)
        super().__init__(vertices, normal.size)
        self.normal = normal / np.linalg.norm(normal)
        self.offset = float(offset)
        self.params = params

    def distance(self, x):
        return self.gather(x)[:, 0] @ self.normal - self.offset

    def energy(self, x):
        return barrier(self.distance(x), self.params.dhat, self.params.kappa)[0]

    def evaluate(self, x):
        d = self.distance(x)
        if np.any(d <= 0):
            raise InadmissibleError("vertex penetrates contact plane")
        b, b1, b2 = barrier(d, self.params.dhat, self.params.kappa)
        n = self.normal
        return b, b1[:, None] * n, b2[:, None, None] * np.outer(n, n)


# --- springs --------------------------------------------------------------------

class SpringGroup(_VertexGroup):
    """``k/2 (|x1 - x0| - L)^2``; indefinite when compressed."""

    def __init__(self, edges, rest_lengths, stiffness, dim):
        edges = np.sort(np.asarray(edges, dtype=np.int64), axis=1)
        super().__init__(edges, dim)
        self.rest = np.broadcast_to(np.asarray(rest_lengths, dtype=float), (len(self),)).copy()
        self.k = np.broadcast_to(np.asarray(stiffness, dtype=float), (len(self),)).copy()
        if np.any(self.k <= 0):
            raise ValueError("spring stiffness must be positive")

    def energy(self, x):
        p = self.gather(x)
        length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return 0.5 * self.k * (length - self.rest) ** 2

    def evaluate(self, x):
        p = self.gather(x)
        diff = p[:, 1] - p[:, 0]
        length = np.linalg.norm(diff, axis=1)
        if np.any(length == 0):
            raise InadmissibleError("zero-length spring")
        u = diff / length[:, None]
        stretch = length - self.rest
        e = 0.5 * self.k * stretch**2
        f = (self.k * stretch)[:, None] * u
        grad = np.concatenate([-f, f], axis=1)
        uu = u[:, :, None] * u[:, None, :]
        eye = np.eye(self.dim)
        K = self.k[:, None, None] * (uu + (stretch / length)[:, None, None] * (eye - uu))
        hess = np.concatenate(
            [np.concatenate([K, -K], axis=2), np.concatenate([-K, K], axis=2)], axis=1)
        return e, grad, hess


# --- hyperelastic simplices -------------------------------------------------------

_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_i, _k, _j] = -1.0


class _SimplexGroup(_VertexGroup):
    def __init__(self, cells, rest_positions):
        cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
        rest_positions = np.asarray(rest_positions, dtype=float)
        dim = rest_positions.shape[1]
        if cells.shape[1] != dim + 1:
            raise ValueError("simplex must have dim + 1 vertices")
        super().__init__(cells, dim)
        X = rest_positions[cells]
        Dm = np.swapaxes(X[:, 1:] - X[:, :1], 1, 2)
        det = np.linalg.det(Dm)
        if np.any(np.abs(det) < 1e-300):
            raise ValueError("degenerate rest simplex")
        Dinv = np.linalg.inv(Dm)
        self.B = np.concatenate([-Dinv.sum(axis=1, keepdims=True), Dinv], axis=1)
        self.rest_measure = np.abs(det) / (1 if dim == 1 else 2 if dim == 2 else 6)

    def deformation_gradient(self, x):
        return np.einsum("mai,maj->mij", self.gather(x), self.B)

    def _chain(self, weight, P, A):
        m, k, dim = len(self), self.dim + 1, self.dim
        grad = weight[:, None, None] * np.einsum("mij,maj->mai", P, self.B)
        hess = weight[:, None, None, None, None] * np.einsum(
            "mijkl,maj,mbl->maibk", A, self.B, self.B)
        hess = hess.reshape(m, k * dim, k * dim)
        return grad.reshape(m, k * dim), 0.5 * (hess + np.swapaxes(hess, 1, 2))


class NeoHookeanTriGroup(_SimplexGroup):
    """Plane-strain Neo-Hookean triangles (2D)."""

    def __init__(self, triangles, rest_positions, material: MaterialParams, thickness=1.0):
        super().__init__(triangles, rest_positions)
        if self.dim != 2:
            raise ValueError("triangles need 2D positions")
        self.material = material
        self.thickness = float(thickness)
        self.weight = self.rest_measure * self.thickness

    def energy(self, x):
        F = self.deformation_gradient(x)
        J = np.linalg.det(F)
        mu, lam = self.material.mu, self.material.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            lnJ = np.log(np.where(J > 0, J, 1.0))
            psi = 0.5 * mu * (np.einsum("mij,mij->m", F, F) - 2) - mu * lnJ + 0.5 * lam * lnJ**2
        return np.where(J > 0, self.weight * psi, np.inf)

    def evaluate(self, x):
        F = self.deformation_gradient(x)
        J = np.linalg.det(F)
        if np.any(J <= 0):
            raise InadmissibleError("inverted triangle")
        mu, lam = self.material.mu, self.material.lam
        lnJ = np.log(J)
        G = np.swapaxes(np.linalg.inv(F), 1, 2)
        psi = 0.5 * mu * (np.einsum("mij,mij->m", F, F) - 2) - mu * lnJ + 0.5 * lam * lnJ**2
        c = (lam * lnJ - mu)[:, None, None]
        P = mu * F + c * G
        eye = np.eye(2)
        A = (mu * np.einsum("ik,jl->ijkl", eye, eye)[None]
             + lam * np.einsum("mij,mkl->mijkl", G, G)
             - c[..., None, None] * np.einsum("mil,mkj->mijkl", G, G))
        grad, hess = self._chain(self.weight, P, A)
        return self.weight * psi, grad, hess


class StableNeoHookeanTetGroup(_SimplexGroup):
    """Stable Neo-Hookean tetrahedra (3D), see module docstring for the energy."""

    def __init__(self, tets, rest_positions, material: MaterialParams):
        super().__init__(tets, rest_positions)
        if self.dim != 3:
            raise ValueError("tetrahedra need 3D positions")
        self.material = material
        self.weight = self.rest_measure
        self.lam_hat = material.lam + material.mu
        self.alpha = 1.0 + material.mu / self.lam_hat
        self.offset = 0.5 * material.mu**2 / self.lam_hat

    def _psi(self, F):
        J = np.linalg.det(F)
        return 0.5 * self.material.mu * (np.einsum("mij,mij->m", F, F) - 3) \
            + 0.5 * self.lam_hat * (J - self.alpha) ** 2 - self.offset

    def energy(self, x):
        return self.weight * self._psi(self.deformation_gradient(x))

    def evaluate(self, x):
        F = self.deformation_gradient(x)
        if not np.all(np.isfinite(F)):
            raise ValueError("non-finite positions")
        mu, lh = self.material.mu, self.lam_hat
        J = np.linalg.det(F)
        cof = 0.5 * np.einsum("ikp,jlq,ekl,epq->eij", _LEVI, _LEVI, F, F)
        s = (J - self.alpha)
        P = mu * F + lh * s[:, None, None] * cof
        d2J = np.einsum("ikp,jlq,epq->eijkl", _LEVI, _LEVI, F)
        eye = np.eye(3)
        A = (mu * np.einsum("ik,jl->ijkl", eye, eye)[None]
             + lh * np.einsum("eij,ekl->eijkl", cof, cof)
             + lh * s[:, None, None, None, None] * d2J)
        grad, hess = self._chain(self.weight, P, A)
        return self.weight * self._psi(F), grad, hess


# --- generic constant-Hessian elements ----------------------------------------------

class QuadraticGroup:
    """``1/2 x_e^T H_e x_e + b_e^T x_e`` on arbitrary sorted dof stencils."""

    def __init__(self, dofs, hessians, linear=None, exempt=False):
        self.dofs = np.asarray(dofs, dtype=np.int64)
        if self.dofs.ndim == 1:
            self.dofs = self.dofs[None]
        if np.any(np.diff(self.dofs, axis=1) <= 0):
            raise ValueError("dof stencils must be sorted and unique")
        self.hessians = np.asarray(hessians, dtype=float).reshape(
            len(self.dofs), self.dofs.shape[1], self.dofs.shape[1])
        self.hessians = 0.5 * (self.hessians + np.swapaxes(self.hessians, 1, 2))
        self.linear = np.zeros(self.dofs.shape) if linear is None else \
            np.asarray(linear, dtype=float).reshape(self.dofs.shape)
        self.exempt = exempt

    def __len__(self):
        return len(self.dofs)

    def energy(self, x):
        xe = np.asarray(x)[self.dofs]
        return 0.5 * np.einsum("mi,mij,mj->m", xe, self.hessians, xe) + np.einsum("mi,mi->m", self.linear, xe)

    def evaluate(self, x):
        xe = np.asarray(x)[self.dofs]
        g = np.einsum("mij,mj->mi", self.hessians, xe) + self.linear
        return self.energy(x), g, self.hessians.copy()


# --- single-element convenience wrappers ------------------------------------------

def _single(group, x_local) -> ElementEval:
    """Evaluate one element; inadmissible states give ``+inf`` energy and NaN derivatives."""
    x = np.asarray(x_local, dtype=float).ravel()
    if not np.isfinite(group.energy(x)[0]):
        k = group.dofs.shape[1]
        return ElementEval(np.inf, np.full(k, np.nan), np.full((k, k), np.nan))
    e, g, h = group.evaluate(x)
    return ElementEval(float(e[0]), g[0], h[0])


def inertia_eval(x, x_tilde, mass, dt) -> ElementEval:
    x_tilde = np.asarray(x_tilde, dtype=float)
    return _single(InertiaGroup([0], [mass], x_tilde[None], dt), x)


def neohookean_tri_eval(x, rest, material: MaterialParams, thickness=1.0) -> ElementEval:
    return _single(NeoHookeanTriGroup([[0, 1, 2]], rest, material, thickness), x)


def stable_neohookean_tet_eval(x, rest, material: MaterialParams) -> ElementEval:
    return _single(StableNeoHookeanTetGroup([[0, 1, 2, 3]], rest, material), x)


def spring_eval(x, rest_length, stiffness) -> ElementEval:
    x = np.asarray(x, dtype=float)
    return _single(SpringGroup([[0, 1]], rest_length, stiffness, x.shape[-1]), x)


def dirichlet_penalty_eval(x, target, stiffness) -> ElementEval:
    target = np.asarray(target, dtype=float)
    return _single(DirichletGroup([0], target[None], stiffness), x)


def halfspace_barrier_eval(x, normal, offset, params: BarrierParams) -> ElementEval:
    return _single(HalfspaceBarrierGroup([0], normal, offset, params), x)
