"""Structured simplex meshes and a minimal vertex/element text format."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def grid_tri_mesh(nx: int, ny: int, size=(1.0, 1.0), origin=(0.0, 0.0)):
    """``(vertices, triangles)`` for an ``nx x ny`` cell grid, two triangles per cell.

    Diagonals alternate in a checkerboard so the mesh has no preferred shear.
    """
    xs = np.linspace(0.0, size[0], nx + 1) + origin[0]
    ys = np.linspace(0.0, size[1], ny + 1) + origin[1]
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            if (i + j) % 2 == 0:
                tris += [(a, b, d), (a, d, c)]
            else:
                tris += [(a, b, c), (b, d, c)]
    return verts, np.array(tris, dtype=np.int64)


_KUHN = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]


def grid_tet_mesh(nx: int, ny: int, nz: int, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """``(vertices, tets)`` with every cube split into six Kuhn tetrahedra."""
    axes = [np.linspace(0.0, s, n + 1) + o for s, n, o in zip(size, (nx, ny, nz), origin)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) for c in range(8)]
                tets += [tuple(corner[c] for c in t) for t in _KUHN]
    return verts, np.array(tets, dtype=np.int64)


def simplex_measures(verts: np.ndarray, cells: np.ndarray) -> np.ndarray:
    X = verts[cells]
    Dm = X[:, 1:] - X[:, :1]
    dim = verts.shape[1]
    return np.abs(np.linalg.det(Dm)) / (2 if dim == 2 else 6)


def lumped_masses(verts: np.ndarray, cells: np.ndarray, density: float, thickness: float = 1.0):
    """Per-vertex masses, each simplex's mass split evenly over its corners."""
    m = simplex_measures(verts, cells) * density * thickness / cells.shape[1]
    out = np.zeros(len(verts))
    np.add.at(out, cells.ravel(), np.repeat(m, cells.shape[1]))
    return out


def read_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``v x y [z]`` and ``c i j k [l]`` lines (0-based indices, ``#`` comments)."""
    verts, cells = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *vals = line.split()
        try:
            if tag == "v":
                verts.append([float(v) for v in vals])
            elif tag == "c":
                cells.append([int(v) for v in vals])
            else:
                raise ValueError(f"unknown record {tag!r}")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    verts = np.array(verts, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if verts.ndim != 2 or cells.ndim != 2 or cells.shape[1] != verts.shape[1] + 1:
        raise ValueError(f"{path}: inconsistent vertex/cell dimensions")
    if cells.min() < 0 or cells.max() >= len(verts):
        raise ValueError(f"{path}: cell references a missing vertex")
    return verts, cells


def write_mesh(path, verts: np.ndarray, cells: np.ndarray) -> None:
    lines = ["v " + " ".join(repr(float(c)) for c in v) for v in verts]
    lines += ["c " + " ".join(str(int(i)) for i in c) for c in cells]
    Path(path).write_text("\n".join(lines) + "\n")
