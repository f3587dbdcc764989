import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from partialfm.bench.shapes import icosphere
from partialfm.mesh import cotan_laplacian
from partialfm.spectral import (compute_basis, load_basis, mesh_basis, project, save_basis,
                                unproject)


@pytest.fixture(scope="module")
def sphere_basis(sphere2):
    return mesh_basis(sphere2, 30)


def _dense_oracle(mesh, k):
    L, M = cotan_laplacian(mesh)
    return scipy.linalg.eigh(L.toarray(), M.toarray(), subset_by_index=[0, k - 1])


def test_kernel_is_constant(sphere_basis, sphere2):
    assert abs(sphere_basis.evals[0]) < 1e-10
    np.testing.assert_allclose(sphere_basis.phi[:, 0], 1 / np.sqrt(sphere2.area), rtol=1e-8)


def test_mass_orthonormal(sphere_basis):
    G = sphere_basis.phi.T @ (sphere_basis.phi * sphere_basis.mass[:, None])
    assert np.abs(G - np.eye(sphere_basis.k)).max() <= 1e-6


def test_eigen_residuals_and_order(capsule_mesh):
    b = mesh_basis(capsule_mesh, 40)
    L, M = cotan_laplacian(capsule_mesh)
    R = L @ b.phi - M @ b.phi * b.evals
    assert np.all(np.linalg.norm(R, axis=0) <= 1e-6 * (1 + np.abs(b.evals)))
    assert np.all(np.diff(b.evals) >= 0)
    assert b.evals[0] <= 1e-6 * b.evals[-1]


def test_unit_sphere_multiplicities():
    m = icosphere(3)
    L, M = cotan_laplacian(m)
    b = compute_basis(L, M, 10)
    w, _ = _dense_oracle(m, 10)
    np.testing.assert_allclose(b.evals, w, rtol=1e-8, atol=1e-10)
    # groups 1, 3, 5 with the l=1 group close to l(l+1)/r^2 = 2
    assert np.ptp(b.evals[1:4]) < 1e-3 * b.evals[1]
    assert np.ptp(b.evals[4:9]) < 1e-2 * b.evals[4]
    assert b.evals[4] > 1.5 * b.evals[3]
    assert abs(b.evals[1:4].mean() - 2) <= 0.2


def test_sign_convention(sphere_basis):
    for col in sphere_basis.phi.T:
        big = np.flatnonzero(np.abs(col) > 1e-6 * np.abs(col).max())
        assert col[big[0]] > 0


def test_backends_agree(sphere2):
    # k = 25 closes the l = 4 cluster, so the spanned subspaces are comparable
    L, M = cotan_laplacian(sphere2)
    d = compute_basis(L, M, 25, backend="dense")
    s = compute_basis(L, M, 25, backend="sparse")
    np.testing.assert_allclose(s.evals, d.evals, rtol=1e-6, atol=1e-9)
    Md = d.phi * d.mass[:, None]
    for lo, hi in [(0, 1), (1, 4), (4, 9), (9, 16), (16, 25)]:
        overlap = d.phi[:, lo:hi].T @ (s.phi[:, lo:hi] * s.mass[:, None])
        sv = np.linalg.svd(overlap, compute_uv=False)
        angles = np.arccos(np.clip(sv, -1, 1))
        assert angles.max() <= 1e-4
    assert Md.shape == d.phi.shape


def test_k_too_large(sphere2):
    L, M = cotan_laplacian(sphere2)
    with pytest.raises(ValueError):
        compute_basis(L, M, sphere2.n_vertices + 1)


def test_project_examples(sphere_basis, sphere2):
    np.testing.assert_allclose(project(sphere_basis, sphere_basis.phi).coeffs,
                               np.eye(sphere_basis.k), atol=1e-10)
    c = project(sphere_basis, np.ones(sphere2.n_vertices)).coeffs[:, 0]
    assert c[0] == pytest.approx(np.sqrt(sphere2.area), rel=1e-10)
    assert np.abs(c[1:]).max() < 1e-8
    with pytest.raises(ValueError):
        project(sphere_basis, np.ones(5))


def test_unproject_examples(sphere_basis):
    np.testing.assert_allclose(unproject(sphere_basis, np.eye(sphere_basis.k)), sphere_basis.phi)
    assert not unproject(sphere_basis, np.zeros(sphere_basis.k)).any()
    with pytest.raises(ValueError):
        unproject(sphere_basis, np.ones(3))


def test_unproject_rejects_foreign_basis(sphere_basis, capsule_mesh):
    other = mesh_basis(capsule_mesh, 30)
    c = project(other, np.ones(capsule_mesh.n_vertices))
    with pytest.raises(ValueError, match="belong"):
        unproject(sphere_basis, c)


@given(seed=st.integers(0, 2**31))
def test_projection_properties(sphere_basis, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(sphere_basis.n)
    a = project(sphere_basis, f)
    again = project(sphere_basis, unproject(sphere_basis, a))
    np.testing.assert_allclose(again.coeffs, a.coeffs, atol=1e-10)
    # contraction in the mass norm
    assert np.linalg.norm(a.coeffs) <= np.sqrt(f @ (sphere_basis.mass * f)) + 1e-12
    # exact on the span
    g = sphere_basis.phi @ rng.standard_normal(sphere_basis.k)
    np.testing.assert_allclose(unproject(sphere_basis, project(sphere_basis, g)).ravel(), g,
                               atol=1e-8)


def test_truncate(sphere_basis):
    t = sphere_basis.truncate(10)
    np.testing.assert_array_equal(t.phi, sphere_basis.phi[:, :10])
    assert t.basis_id != sphere_basis.basis_id
    with pytest.raises(ValueError):
        sphere_basis.truncate(0)


def test_cache_roundtrip(tmp_path, sphere_basis, sphere2, capsule_mesh):
    p = tmp_path / "b.npz"
    save_basis(p, sphere_basis, comments=["v"])
    b = load_basis(p, mesh=sphere2)
    np.testing.assert_array_equal(b.phi, sphere_basis.phi)
    np.testing.assert_array_equal(b.evals, sphere_basis.evals)
    assert b.basis_id == sphere_basis.basis_id
    with pytest.raises(ValueError, match="different mesh"):
        load_basis(p, mesh=capsule_mesh)
