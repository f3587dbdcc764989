import numpy as np
import pytest
from hypothesis import given, strategies as st

from partialfm.bench.ablation import EXPECTED_WORST, loss_ablation, mask_ablation
from partialfm.bench.evaluate import (benchmark_pairs, geodesic_errors, partiality_binned_error,
                                      princeton_curve)
from partialfm.bench.shapes import normalize_area
from partialfm.bench.synth import gen_cut, gen_holes, gen_p2p, load_pair, save_pair
from partialfm.fmap import PointMap
from partialfm.learn.losses import LossConfig
from partialfm.learn.nn import ToyNetConfig
from partialfm.mesh import TriMesh

from .oracles import dijkstra_lists


def _strip(n=6, scale=1.0):
    """Flat 1 x (n-1) triangle strip, rescaled to unit area times ``scale**2``."""
    xs = np.arange(n, dtype=float)
    v = np.concatenate([np.c_[xs, np.zeros(n), np.zeros(n)], np.c_[xs, np.ones(n), np.zeros(n)]])
    f = []
    for i in range(n - 1):
        f += [[i, i + 1, n + i], [i + 1, n + i + 1, n + i]]
    mesh = normalize_area(TriMesh(v, np.array(f)))
    return TriMesh(mesh.vertices * scale, mesh.faces)


# generators -----------------------------------------------------------------

def test_cut_hits_target(sphere2):
    pair = gen_cut(sphere2, 3, 0.5)
    assert 0.45 <= pair.partiality <= 0.55
    # positions of the part equal the full-shape positions they map to
    np.testing.assert_array_equal(pair.part.vertices, pair.full.vertices[pair.gt.target_of])
    assert pair.gt.n_matched == pair.part.n_vertices


def test_cut_rejects_bad_target(sphere2):
    with pytest.raises(ValueError):
        gen_cut(sphere2, 0, 0.0)
    with pytest.raises(ValueError):
        gen_cut(sphere2, 0, 0.99)


def test_holes_hit_target_and_are_deterministic(capsule_mesh):
    a = gen_holes(capsule_mesh, 5, 3, 0.5)
    b = gen_holes(capsule_mesh, 5, 3, 0.5)
    assert abs(a.partiality - 0.5) <= 0.05
    assert a.gt == b.gt
    one = gen_holes(capsule_mesh, 5, 1, 0.3)
    assert abs(one.partiality - 0.3) <= 0.05
    with pytest.raises(ValueError):
        gen_holes(capsule_mesh, 5, 0, 0.3)


def test_p2p_overlap(capsule_mesh):
    pp = gen_p2p(capsule_mesh, 1, 0.9)
    assert 0.8 <= pp.overlap_fraction() <= 1.0
    with pytest.raises(ValueError):
        gen_p2p(capsule_mesh, 1, 0.05)
    g = pp.p2p_gt()
    back = g.compose(g.inverse())
    assert np.array_equal(back.target_of[g.matched], np.flatnonzero(g.matched))


def test_pair_save_load_roundtrip(tmp_path, capsule_mesh):
    pp = gen_p2p(capsule_mesh, 2, 0.5, base="capsule")
    save_pair(tmp_path / "d", pp)
    q = load_pair(tmp_path / "d")
    np.testing.assert_array_equal(q.part.vertices, pp.part.vertices)
    np.testing.assert_array_equal(q.part2.faces, pp.part2.faces)
    assert q.gt == pp.gt and q.gt2 == pp.gt2
    assert (q.partiality, q.kind, q.seed, q.base) == (pp.partiality, pp.kind, pp.seed, pp.base)


# evaluation ---------------------------------------------------------------------

def test_perfect_prediction_has_zero_error(cut_pair):
    c = princeton_curve(cut_pair.gt, cut_pair.gt, cut_pair.full)
    assert c.mean_error == 0.0
    assert c.fraction[0] == 1.0


def test_constant_prediction_matches_dijkstra():
    mesh = _strip()
    n = mesh.n_vertices
    gt = PointMap(np.arange(n), n)
    pred = PointMap(np.zeros(n, int), n)
    err = geodesic_errors(pred, gt, mesh)
    ref = np.asarray(dijkstra_lists(mesh.vertices, mesh.faces, 0)) / np.sqrt(mesh.area)
    np.testing.assert_allclose(err, ref, rtol=1e-12)


def test_unmatched_prediction_counts_as_infinite(cut_pair):
    t = cut_pair.gt.target_of.copy()
    t[:3] = -1
    err = geodesic_errors(PointMap(t, cut_pair.gt.n_tgt), cut_pair.gt, cut_pair.full)
    assert np.isinf(err[:3]).all() and np.isfinite(err[3:]).all()


@given(seed=st.integers(0, 2**31))
def test_curve_monotone_and_complete(cut_pair, seed):
    rng = np.random.default_rng(seed)
    pred = PointMap(rng.integers(0, cut_pair.full.n_vertices, cut_pair.part.n_vertices),
                    cut_pair.full.n_vertices)
    c = princeton_curve(pred, cut_pair.gt, cut_pair.full, thresholds=np.linspace(0, 10, 50))
    assert np.all(np.diff(c.fraction) >= 0)
    assert c.fraction[-1] == 1.0


@pytest.mark.parametrize("scale", [2.0, 0.5])
def test_errors_scale_invariant(scale):
    mesh = _strip(8)
    big = TriMesh(mesh.vertices * scale, mesh.faces)
    n = mesh.n_vertices
    rng = np.random.default_rng(4)
    pred = PointMap(rng.integers(0, n, n), n)
    gt = PointMap(np.arange(n), n)
    a = princeton_curve(pred, gt, mesh)
    b = princeton_curve(pred, gt, big)
    np.testing.assert_allclose(b.errors, a.errors, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(b.fraction, a.fraction)


def test_curve_input_errors(cut_pair):
    none = PointMap(-np.ones(cut_pair.part.n_vertices, int), cut_pair.full.n_vertices)
    with pytest.raises(ValueError, match="no ground-truth"):
        geodesic_errors(cut_pair.gt, none, cut_pair.full)
    with pytest.raises(ValueError):
        princeton_curve(cut_pair.gt, cut_pair.gt, cut_pair.full, thresholds=[0.2, 0.1])


def test_binned_error():
    rows, empty = partiality_binned_error([(0.33, 0.1)])
    assert len(rows) == 1 and rows[0].lo == pytest.approx(0.3) and rows[0].count == 1
    assert len(empty) == 9 and 3 not in empty
    rows, empty = partiality_binned_error([(0.05, 1.0), (0.07, 3.0), (0.95, 2.0), (1.0, 4.0)])
    assert [r.mean_error for r in rows] == [2.0, 3.0]
    assert empty == list(range(1, 9))
    edges = [(r.lo, r.hi) for r in partiality_binned_error([(i / 10 + 0.05, 0) for i in range(10)])[0]]
    assert all(a[1] == b[0] for a, b in zip(edges, edges[1:]))
    with pytest.raises(ValueError):
        partiality_binned_error([(1.2, 0.0)])


# ablations ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_cases():
    return benchmark_pairs(3, seed=1, k=20, bases=("icosphere", "capsule"))


def test_benchmark_pairs_are_deterministic(tiny_cases):
    again = benchmark_pairs(3, seed=1, k=20, bases=("icosphere", "capsule"))
    assert [c.name for c in again] == [c.name for c in tiny_cases]
    assert all(a.pair.gt == b.pair.gt for a, b in zip(again, tiny_cases))
    assert all(0.15 <= c.pair.partiality <= 0.65 for c in tiny_cases)


def test_mask_ablation_table(tiny_cases):
    t1 = mask_ablation(tiny_cases, m=16)
    t2 = mask_ablation(tiny_cases, m=16)
    assert [r[0] for r in t1.rows] == ["laplacian", "slanted", "resolvent"]
    assert t1.rows == t2.rows
    assert t1.error("resolvent") == pytest.approx(t1.rows[2][2] / 100)


def test_loss_ablation_flags_expected_worst(tiny_cases):
    net = ToyNetConfig(widths=(8,), out_dim=8, heads=2, head_dim=4, fps_count=16, k=10,
                       overlap_hidden=6)
    t = loss_ablation(tiny_cases[:2], tiny_cases[2:], net, LossConfig(nce_samples=16), epochs=1)
    assert [r[0] for r in t.rows] == ["full", "no_spec", "no_nce", "no_over"]
    assert EXPECTED_WORST in t.note
    assert all(np.isfinite(r[1]) for r in t.rows)
