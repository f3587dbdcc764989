import numpy as np
import pytest
from hypothesis import given, strategies as st

from partialfm.bench.evaluate import geodesic_errors
from partialfm.descriptors import perfect_features
from partialfm.fmap import FunctionalMap, PointMap, fmap_to_p2p, gt_fmap
from partialfm.refine import (OverlapRegion, estimate_overlap_axiomatic, iou, partial_zoomout,
                              rank_cap, zoomout_schedule)
from partialfm.spectral import mesh_basis


@pytest.fixture(scope="module")
def sphere_basis(sphere2):
    return mesh_basis(sphere2, 60)


@pytest.fixture(scope="module")
def cut_bases(cut_pair):
    return mesh_basis(cut_pair.full, 60), mesh_basis(cut_pair.part, 60)


def test_schedule():
    assert zoomout_schedule(20, 60, 8) == [25, 30, 35, 40, 45, 50, 55, 60]
    assert zoomout_schedule(20, 60, 0) == []
    with pytest.raises(ValueError):
        zoomout_schedule(30, 20, 2)


def test_zero_steps_returns_input(sphere_basis, rng):
    C0 = FunctionalMap(rng.standard_normal((20, 20)))
    assert partial_zoomout(C0, sphere_basis, sphere_basis, steps=0) is C0


def test_invalid_schedule(sphere_basis):
    with pytest.raises(ValueError):
        partial_zoomout(np.eye(20), sphere_basis, sphere_basis, steps=4, k_end=80)
    with pytest.raises(ValueError):
        partial_zoomout(np.eye(20), sphere_basis, sphere_basis, steps=4, k_start=10)


def test_fixed_k_steps_are_idempotent(sphere_basis):
    C = partial_zoomout(np.eye(30), sphere_basis, sphere_basis, steps=3, k_start=30, k_end=30,
                        rank_rule=False)
    assert np.abs(C.C - np.eye(30)).max() <= 1e-10
    again = partial_zoomout(C, sphere_basis, sphere_basis, steps=2, k_start=30, k_end=30,
                            rank_rule=False)
    assert np.abs(again.C - C.C).max() <= 1e-10


def test_noisy_identity_improves(capsule_mesh):
    b = mesh_basis(capsule_mesh, 60)
    rng = np.random.Generator(np.random.Philox(3))
    C0 = np.eye(20) + 0.1 * rng.standard_normal((20, 20))
    ident = PointMap(np.arange(b.n), b.n)
    e0 = geodesic_errors(fmap_to_p2p(C0, b, b), ident, capsule_mesh).mean()
    C = partial_zoomout(C0, b, b, steps=8, k_end=60)
    e1 = geodesic_errors(fmap_to_p2p(C, b, b), ident, capsule_mesh).mean()
    assert e1 <= e0


def test_rank_rule_caps_rows(cut_pair, cut_bases):
    bf, bp = cut_bases
    C0 = gt_fmap(cut_pair.gt, bf.truncate(20), bp.truncate(20))
    C = partial_zoomout(C0, bf, bp, steps=4, k_end=60)
    assert C.k_src == 60
    assert C.k_tgt == min(60, rank_cap(bf, bp, 60)) < 60
    C_free = partial_zoomout(C0, bf, bp, steps=4, k_end=60, rank_rule=False)
    assert C_free.C.shape == (60, 60)


# overlap -----------------------------------------------------------------------

def test_identical_shapes_give_half_probability(sphere2, sphere_basis, rng):
    b = sphere_basis
    F = rng.standard_normal((b.n, 8))
    ident = PointMap(np.arange(b.n), b.n)
    rs, rt = estimate_overlap_axiomatic(np.eye(60), b, b, ident, F, F, sphere2, sphere2)
    np.testing.assert_allclose(rs.prob, 0.5)
    np.testing.assert_allclose(rt.prob, 0.5)
    assert rs.mask.all() and rt.mask.all()


def test_zero_features_rejected(sphere_basis):
    b = sphere_basis
    Z = np.zeros((b.n, 4))
    with pytest.raises(ValueError, match="zero"):
        estimate_overlap_axiomatic(np.eye(60), b, b, PointMap(np.arange(b.n), b.n), Z, Z)


def test_empty_match_set_rejected(sphere_basis, rng):
    b = sphere_basis
    F = rng.standard_normal((b.n, 4))
    with pytest.raises(ValueError, match="empty"):
        estimate_overlap_axiomatic(np.eye(60), b, b, PointMap(-np.ones(b.n), b.n), F, F)


def test_cut_pair_overlap_iou(cut_pair, cut_bases):
    bf, bp = cut_bases
    fp, ff = perfect_features(cut_pair.full, cut_pair.part, cut_pair.gt, 64, seed=0, basis_full=bf)
    C = gt_fmap(cut_pair.gt, bf, bp)
    p2p = fmap_to_p2p(C, bf, bp)
    region, _ = estimate_overlap_axiomatic(C, bf, bp, p2p, ff, fp, cut_pair.full, cut_pair.part)
    assert iou(region, cut_pair.gt_overlap_on_full, cut_pair.full.vertex_mass) >= 0.8


@given(scale=st.floats(1e-6, 1e6), seed=st.integers(0, 2**31))
def test_probabilities_stay_in_unit_interval(cut_bases, cut_pair, scale, seed):
    bf, bp = cut_bases
    rng = np.random.default_rng(seed)
    Fs, Ft = scale * rng.standard_normal((bf.n, 3)), scale * rng.standard_normal((bp.n, 3))
    C = rng.standard_normal((20, 20))
    p2p = fmap_to_p2p(C, bf, bp)
    for r in estimate_overlap_axiomatic(C, bf, bp, p2p, Fs, Ft, cut_pair.full, cut_pair.part):
        assert np.all((r.prob >= 0) & (r.prob <= 1))


def test_overlap_region_validation():
    with pytest.raises(ValueError):
        OverlapRegion(np.array([1.5]))
    r = OverlapRegion(np.array([0.2, 0.6]))
    assert r.mask.tolist() == [False, True]
    assert r.with_threshold(0.1).mask.all()


# iou ---------------------------------------------------------------------------

def test_iou_identities():
    mass = np.array([1.0, 1.0, 2.0, 4.0])
    a = np.array([1, 1, 0, 0], bool)
    b = np.array([0, 0, 1, 1], bool)
    assert iou(a, a, mass) == 1.0
    assert iou(a, b, mass) == 0.0
    assert iou(a, np.zeros(4, bool), mass) == 0.0
    assert iou(np.zeros(4, bool), np.zeros(4, bool), mass) == 1.0
    gt = np.array([1, 1, 1, 0], bool)
    half = np.array([0, 0, 1, 0], bool)  # area 2 of 4
    assert iou(half, gt, mass) == 0.5
    assert iou(half, gt, mode="count") == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        iou(a, gt)


@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.floats(0.01, 10)), min_size=1,
                max_size=30))
def test_iou_symmetric_and_bounded(rows):
    a, b, m = (np.array(x) for x in zip(*rows))
    v = iou(a, b, m)
    assert v == iou(b, a, m)
    assert 0.0 <= v <= 1.0
