import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppn.assembly import (BlockSparseMatrix, ElementStencil, ElementSystem, StructuralMiss, assemble,
                          build_sparsity, element_residual_inf, scatter_delta, scatter_hessians)
from ppn.energies import QuadraticGroup, SpringGroup
from ppn.smalldense import CLAMP, DEFAULT_FLOOR, project_spd

A = np.diag([-1.0, 2.0])
B = np.diag([2.0, 2.0])
C = np.diag([-10.0, 1.0])


def didactic(*mats):
    return ElementSystem([QuadraticGroup([[0, 1]] * len(mats), np.array(mats))], 2, 1)


def assembled(system, x=None):
    H = system.new_matrix()
    g = np.zeros(system.n_dof)
    assemble(system, np.zeros(system.n_dof) if x is None else x, H, g)
    return H, g


def test_single_element_pattern_is_dense():
    H = build_sparsity([ElementStencil(0, (0, 1))], 2, 1)
    assert H.nnz_blocks == 4


def test_disjoint_elements_give_diagonal():
    H = build_sparsity([ElementStencil(0, (0,)), ElementStencil(1, (1,))], 2, 1)
    assert H.nnz_blocks == 2
    assert list(H.indices) == [0, 1]


def test_spring_chain_is_block_tridiagonal():
    stencils = [ElementStencil(i, tuple(range(3 * i, 3 * i + 6))) for i in range(3)]
    H = build_sparsity(stencils, 12, 3)
    assert H.nnz_blocks == 10
    dense = np.abs(H.to_scipy().toarray()) >= 0  # pattern only
    assert dense.shape == (12, 12)
    rows = np.repeat(np.arange(H.nb), np.diff(H.indptr))
    assert np.all(np.abs(rows - H.indices) <= 1)


def test_build_sparsity_errors():
    with pytest.raises(IndexError):
        build_sparsity([ElementStencil(0, (0, 5))], 4, 1)
    with pytest.raises(ValueError):
        ElementStencil(0, (1, 0))
    with pytest.raises(ValueError):
        build_sparsity([], 4, 1)


def test_structural_miss():
    H = build_sparsity([ElementStencil(0, (0,)), ElementStencil(1, (1,))], 2, 1)
    with pytest.raises(StructuralMiss):
        scatter_delta(H, ElementStencil(2, (0, 1)), np.ones((2, 2)))


def test_didactic_assembly():
    H, _ = assembled(didactic(A, B))
    assert np.array_equal(H.toarray(), np.diag([1.0, 4.0]))
    H, _ = assembled(didactic(A))
    assert np.array_equal(H.toarray(), A)
    H, _ = assembled(didactic(A, B, C))
    assert np.array_equal(H.toarray(), np.diag([-9.0, 5.0]))


def test_delta_of_c_makes_global_spd():
    system = didactic(A, B, C)
    H, _ = assembled(system)
    C_hat, flag = project_spd(C)
    assert flag
    scatter_delta(H, ElementStencil(2, (0, 1)), C_hat - C)
    assert np.allclose(H.toarray(), np.diag([1.0 + DEFAULT_FLOOR, 5.0]), rtol=0, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(H.toarray()) > 0)


def test_zero_delta_is_noop():
    H, _ = assembled(didactic(A, B, C))
    before = H.data.copy()
    scatter_delta(H, ElementStencil(0, (0, 1)), np.zeros((2, 2)))
    assert np.array_equal(H.data, before)


def test_project_all_equals_preprojected_assembly():
    system = didactic(A, B, C)
    H, _ = assembled(system)
    system.project(np.arange(3), H, CLAMP)
    pre = didactic(*[project_spd(m)[0] for m in (A, B, C)])
    H2, _ = assembled(pre)
    assert np.allclose(H.toarray(), H2.toarray(), rtol=0, atol=1e-12)


def test_residual_inf_examples(rng):
    g = np.array([3.0, -7.0, 0.0])
    assert element_residual_inf(g, ElementStencil(0, (0, 1))) == 7.0
    assert element_residual_inf(np.zeros(3), ElementStencil(0, (0, 2))) == 0.0
    for _ in range(20):
        g = rng.standard_normal(20)
        dofs = tuple(sorted(rng.choice(20, size=5, replace=False)))
        assert element_residual_inf(g, ElementStencil(0, dofs)) == max(abs(g[i]) for i in dofs)


@st.composite
def random_systems(draw):
    n_vert = draw(st.integers(2, 8))
    d = draw(st.sampled_from([1, 2, 3]))
    n_el = draw(st.integers(1, 10))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    k = draw(st.integers(1, min(3, n_vert)))
    verts = np.array([np.sort(r.choice(n_vert, k, replace=False)) for _ in range(n_el)])
    dofs = (verts[:, :, None] * d + np.arange(d)).reshape(n_el, -1)
    a = r.standard_normal((n_el, k * d, k * d))
    hess = a + np.swapaxes(a, 1, 2)
    return n_vert * d, d, dofs, hess, r


def dense_assembly(n, dofs, hess):
    out = np.zeros((n, n))
    for dd, h in zip(dofs, hess):
        out[np.ix_(dd, dd)] += h
    return out


@settings(max_examples=60)
@given(random_systems())
def test_assembly_matches_dense_oracle(case):
    n, d, dofs, hess, r = case
    H, _ = assembled(ElementSystem([QuadraticGroup(dofs, hess)], n, d))
    assert np.allclose(H.toarray(), dense_assembly(n, dofs, hess), atol=1e-12)
    assert H.max_asymmetry() <= 1e-12


@settings(max_examples=60)
@given(random_systems())
def test_delta_projection_matches_preprojected(case):
    n, d, dofs, hess, r = case
    system = ElementSystem([QuadraticGroup(dofs, hess)], n, d)
    H, _ = assembled(system)
    ids = np.flatnonzero(r.random(len(dofs)) < 0.5)
    system.project(ids, H, CLAMP)
    assert H.max_asymmetry() <= 1e-12
    proj = hess.copy()
    for i in ids:
        proj[i] = project_spd(hess[i])[0]
    assert np.allclose(H.toarray(), dense_assembly(n, dofs, proj), rtol=0, atol=1e-12)


@settings(max_examples=30)
@given(random_systems())
def test_assembly_order_independent(case):
    n, d, dofs, hess, r = case
    perm = r.permutation(len(dofs))
    H1, _ = assembled(ElementSystem([QuadraticGroup(dofs, hess)], n, d))
    H2, _ = assembled(ElementSystem([QuadraticGroup(dofs[perm], hess[perm])], n, d))
    assert np.allclose(H1.toarray(), H2.toarray(), rtol=0, atol=1e-12)


def test_assembly_deterministic(rng):
    x = rng.standard_normal(30)
    edges = np.array([[i, i + 1] for i in range(9)])
    system = ElementSystem([SpringGroup(edges, np.ones(9), 10.0, 3)], 30, 3)
    H1, g1 = assembled(system, x)
    H2, g2 = assembled(system, x)
    assert np.array_equal(H1.data, H2.data) and np.array_equal(g1, g2)


def test_gradient_scatter(rng):
    hess = np.array([A, B, C])
    lin = rng.standard_normal((3, 2))
    system = ElementSystem([QuadraticGroup([[0, 1]] * 3, hess, lin)], 2, 1)
    x = rng.standard_normal(2)
    _, g = assembled(system, x)
    assert np.allclose(g, (A + B + C) @ x + lin.sum(axis=0))


def test_exempt_groups_are_not_candidates():
    system = ElementSystem([QuadraticGroup([[0, 1]], [B], exempt=True),
                            QuadraticGroup([[0, 1]], [A])], 2, 1)
    assert list(system.candidate) == [False, True]
    assert system.n_candidates == 1


def test_copy_shares_pattern():
    H = build_sparsity([ElementStencil(0, (0, 1))], 2, 1)
    H2 = H.copy()
    assert H2.indices is H.indices
    H2.data[...] = 1.0
    assert not H.data.any()
    assert isinstance(H2, BlockSparseMatrix)


def test_scatter_hessians_accumulates():
    H = build_sparsity([ElementStencil(0, (0, 1))], 2, 1)
    scatter_hessians(H, np.array([[0, 1], [0, 1]]), np.array([A, B]))
    assert np.array_equal(H.toarray(), A + B)
