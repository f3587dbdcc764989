import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partialfm.bench.evaluate import geodesic_errors
from partialfm.fmap import (FunctionalMap, MaskSpec, PointMap, _nn_brute, _nn_tree, build_mask,
                            estimate_rank, fmap_energy, fmap_to_p2p, gt_fmap, load_fmap,
                            load_map, nearest_neighbors, p2p_to_fmap, save_fmap, save_map,
                            solve_fmap)
from partialfm.mesh import TriMesh
from partialfm.spectral import mesh_basis

from .oracles import brute_nn, dense_fmap_solve, rel_err


@pytest.fixture(scope="module")
def permuted_pair():
    """A mesh, a vertex-permuted copy and the permutation as a point map."""
    from partialfm.bench.shapes import normalize_area, quadruped
    mesh = normalize_area(quadruped(spacing=0.12))
    perm = np.random.default_rng(8).permutation(mesh.n_vertices)
    inv = np.argsort(perm)
    copy = TriMesh(mesh.vertices[perm], inv[mesh.faces])
    # copy vertex v sits at mesh vertex perm[v]
    return mesh, copy, PointMap(perm, mesh.n_vertices)


@pytest.fixture(scope="module")
def cut_bases(cut_pair):
    return mesh_basis(cut_pair.full, 60), mesh_basis(cut_pair.part, 60)


# masks ---------------------------------------------------------------------

def test_laplacian_mask_zero_on_equal_eigenvalues():
    M = build_mask(MaskSpec("laplacian", [0, 1, 2], [2, 1, 0]))
    assert M[0, 2] == 0 and M[1, 1] == 0 and M[2, 0] == 0
    assert M[0, 0] == 4


def test_resolvent_mask_values():
    assert build_mask(MaskSpec("resolvent", [0.0], [0.0]))[0, 0] == 0
    assert build_mask(MaskSpec("resolvent", [0.0], [1.0], gamma=0.5))[0, 0] == pytest.approx(0.5)


def test_slanted_mask_follows_line():
    M = build_mask(MaskSpec("slanted", np.arange(10.0), np.arange(10.0) * 2, rank=5))
    assert M.shape == (10, 10)
    assert M[0, 0] == 0 and M[2, 4] == pytest.approx(0, abs=1e-15)
    assert M[9, 0] > M[5, 0] > 0


def test_mask_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec("nope", [0.0], [0.0])
    with pytest.raises(ValueError):
        MaskSpec("resolvent", [0.0], [0.0], gamma=0)
    with pytest.raises(ValueError):
        MaskSpec("laplacian", [-1.0], [0.0])


@given(kind=st.sampled_from(["laplacian", "slanted", "resolvent"]),
       seed=st.integers(0, 2**31), kt=st.integers(1, 12), ks=st.integers(1, 12))
def test_masks_non_negative(kind, seed, kt, ks):
    rng = np.random.default_rng(seed)
    M = build_mask(MaskSpec(kind, np.sort(rng.uniform(0, 50, ks)), np.sort(rng.uniform(0, 50, kt))))
    assert M.shape == (kt, ks) and np.all(M >= 0)


# solver --------------------------------------------------------------------

def test_scalar_examples():
    assert solve_fmap([[1.0]], [[2.0]], [[1.0]], 0).C[0, 0] == pytest.approx(2.0)
    assert solve_fmap([[1.0]], [[2.0]], [[0.5]], 100).C[0, 0] == pytest.approx(2 / 51, rel=1e-12)


@given(seed=st.integers(0, 2**31), ks=st.integers(1, 8), kt=st.integers(1, 8),
       m=st.integers(1, 8), lam=st.sampled_from([0.0, 1.0, 100.0]))
def test_solver_matches_dense_oracle(seed, ks, kt, m, lam):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((ks, m)), rng.standard_normal((kt, m))
    M = rng.uniform(0.1, 2.0, (kt, ks))
    if lam == 0 and m < ks:
        A = rng.standard_normal((ks, ks))  # keep the oracle problem well posed
        B = rng.standard_normal((kt, ks))
    C = solve_fmap(A, B, M, lam).C
    assert rel_err(C, dense_fmap_solve(A, B, M, lam)) <= 1e-8


def test_solution_minimizes_objective(rng):
    A, B = rng.standard_normal((6, 9)), rng.standard_normal((5, 9))
    M = build_mask(MaskSpec("laplacian", np.linspace(0, 3, 6), np.linspace(0, 4, 5)))
    C = solve_fmap(A, B, M, 1.0).C
    e0 = fmap_energy(C, A, B, M, 1.0)
    for _ in range(100):
        assert fmap_energy(C + 1e-3 * rng.standard_normal(C.shape), A, B, M, 1.0) >= e0


def test_penalty_monotone_in_lambda(rng):
    A, B = rng.standard_normal((6, 9)), rng.standard_normal((6, 9))
    M = rng.uniform(0, 1, (6, 6))
    pens = [np.sum(M * solve_fmap(A, B, M, lam).C ** 2) for lam in (0, 1, 100, 1e4)]
    assert all(b <= a + 1e-12 for a, b in zip(pens, pens[1:]))


def test_singular_system_is_floored(caplog):
    A = np.zeros((3, 4))
    A[0] = 1.0
    with caplog.at_level(logging.WARNING):
        f = solve_fmap(A, np.ones((2, 4)), np.ones((2, 3)), 0.0)
    assert f.regularized and np.all(np.isfinite(f.C))
    assert "Tikhonov" in caplog.text


def test_solver_shape_errors():
    with pytest.raises(ValueError):
        solve_fmap(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 2)), 1)
    with pytest.raises(ValueError):
        solve_fmap(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)), 1)
    with pytest.raises(ValueError):
        solve_fmap(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 2)), -1)


# ground truth maps ------------------------------------------------------------

def test_identity_gt_is_identity(sphere2):
    b = mesh_basis(sphere2, 20)
    C = gt_fmap(PointMap(np.arange(b.n), b.n), b, b).C
    assert np.abs(C - np.eye(20)).max() <= 1e-6


def test_empty_gt_is_zero(sphere2):
    b = mesh_basis(sphere2, 10)
    assert not gt_fmap(PointMap(-np.ones(b.n), b.n), b, b).C.any()


def test_permutation_gt_orthogonal(permuted_pair):
    mesh, copy, gt = permuted_pair
    bs, bt = mesh_basis(mesh, 30), mesh_basis(copy, 30)
    C = gt_fmap(gt, bs, bt).C
    assert np.abs(C.T @ C - np.eye(30)).max() <= 1e-4


def test_roundtrip_through_point_map(permuted_pair):
    mesh, copy, gt = permuted_pair
    bs, bt = mesh_basis(mesh, 30), mesh_basis(copy, 30)
    C = gt_fmap(gt, bs, bt).C
    C2 = p2p_to_fmap(fmap_to_p2p(C, bs, bt), bs, bt).C
    assert rel_err(C2, C) <= 0.05


def test_gt_dimension_mismatch(cut_bases):
    bf, bp = cut_bases
    with pytest.raises(ValueError):
        gt_fmap(PointMap(np.zeros(3, int), bf.n), bf, bp)


def test_partial_gt_slanted_support(cut_pair, cut_bases):
    bf, bp = cut_bases
    C = gt_fmap(cut_pair.gt, bf, bp).C
    r = estimate_rank(bp.evals, bf.evals)
    assert 1 <= r < 60
    assert np.sum(C[r:] ** 2) <= 0.1 * np.sum(C ** 2)


def test_estimate_rank_examples():
    assert estimate_rank([0, 1, 2, 3], [0, 2.5]) == 3
    assert estimate_rank([0, 1, 2], [0, 1, 2]) == 2
    assert estimate_rank([5, 6], [0, 1]) == 1


# point maps ------------------------------------------------------------------

def test_identity_fmap_gives_identity_map(sphere2):
    # with C = I each vertex is its own nearest embedding row
    b = mesh_basis(sphere2, 40)
    p = fmap_to_p2p(np.eye(40), b, b)
    assert np.array_equal(p.target_of, np.arange(b.n))


def test_gt_fmap_recovers_cut_map(cut_pair, cut_bases):
    bf, bp = cut_bases
    C = gt_fmap(cut_pair.gt, bf, bp)
    p = fmap_to_p2p(C, bf, bp)
    err = geodesic_errors(p, cut_pair.gt, cut_pair.full)
    assert np.mean(err <= 0.05) >= 0.95


def test_overlap_false_unmatches_everything(cut_bases):
    bf, bp = cut_bases
    p = fmap_to_p2p(np.eye(60), bf, bp, overlap=np.zeros(bp.n, bool))
    assert p.n_matched == 0 and p.n_tgt == bf.n


@given(seed=st.integers(0, 2**31))
def test_nearest_neighbor_backends(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 3, (60, 2)).astype(float)  # many exact ties
    q = rng.integers(0, 3, (20, 2)).astype(float)
    np.testing.assert_array_equal(_nn_brute(q, data), brute_nn(q, data))
    np.testing.assert_array_equal(_nn_tree(q, data), _nn_brute(q, data))
    np.testing.assert_array_equal(nearest_neighbors(q, data), brute_nn(q, data))


def test_point_map_ops():
    p = PointMap([2, -1, 0], 3)
    assert p.n_matched == 2
    assert p.inverse().target_of.tolist() == [2, -1, 0]
    assert p.compose(p.inverse()).target_of.tolist() == [0, -1, 2]
    with pytest.raises(ValueError):
        PointMap([3], 3)


# files ---------------------------------------------------------------------

def test_fmap_and_map_roundtrip(tmp_path, rng):
    C = rng.standard_normal((4, 6))
    save_fmap(tmp_path / "c.fmap", FunctionalMap(C), comments=["x"])
    np.testing.assert_array_equal(load_fmap(tmp_path / "c.fmap").C, C)
    p = PointMap([3, -1, 0, 7], 9)
    save_map(tmp_path / "p.map", p)
    assert load_map(tmp_path / "p.map") == p


def test_fmap_file_errors(tmp_path):
    f = tmp_path / "bad.fmap"
    f.write_text("2 2\n1 2\n")
    with pytest.raises(ValueError):
        load_fmap(f)
    f.write_text("")
    with pytest.raises(ValueError):
        load_fmap(f)
