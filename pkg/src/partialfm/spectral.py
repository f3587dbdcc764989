"""Truncated Laplace-Beltrami eigenbases and spectral projection."""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .mesh import TriMesh, cotan_laplacian

logger = logging.getLogger(__name__)

DENSE_MAX_N = 3000
RESIDUAL_TOL = 1e-6


class SpectralError(RuntimeError):
    """Eigensolver failure, carrying the achieved residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """First ``k`` generalized eigenpairs of ``(L, M)``.

    Attributes
    ----------
    phi : ndarray, shape (n, k)
        Eigenfunctions as columns, orthonormal in the mass inner product.
    evals : ndarray, shape (k,)
        Ascending eigenvalues.
    mass : ndarray, shape (n,)
        Diagonal of the mass matrix.
    basis_id : str
        Identifier of the operator pair and truncation.
    mesh_hash : str or None
        Content hash of the source mesh, when known.
    """
    phi: np.ndarray
    evals: np.ndarray
    mass: np.ndarray
    basis_id: str
    mesh_hash: str = None
    residual: np.ndarray = field(default=None, repr=False)

    @property
    def k(self):
        return self.phi.shape[1]

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def pinv(self):
        """The mass-weighted pseudo-inverse ``phi.T @ diag(mass)``."""
        return self.phi.T * self.mass

    def truncate(self, k):
        """Basis restricted to its first ``k`` eigenpairs."""
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate a {self.k}-basis to {k}")
        if k == self.k:
            return self
        root = self.basis_id.rsplit("/", 1)[0]
        res = None if self.residual is None else self.residual[:k]
        return SpectralBasis(_readonly(self.phi[:, :k]), _readonly(self.evals[:k]),
                             self.mass, f"{root}/{k}", self.mesh_hash, res)


@dataclass(frozen=True, eq=False)
class CoeffMatrix:
    """Spectral coefficients (``k`` rows, one column per function)."""
    coeffs: np.ndarray
    basis_id: str

    @property
    def shape(self):
        return self.coeffs.shape


def _operator_id(L, M, k):
    h = hashlib.sha256()
    L = sparse.csr_matrix(L)
    L.sort_indices()
    for a in (L.indptr, L.indices, L.data, np.asarray(M.diagonal())):
        h.update(np.ascontiguousarray(a).tobytes())
    return f"{h.hexdigest()[:16]}/{k}"


def _fix_signs(phi):
    """Make the first clearly nonzero entry of every column positive."""
    phi = phi.copy()
    for j in range(phi.shape[1]):
        col = phi[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-6 * np.abs(col).max())
        if len(big) and col[big[0]] < 0:
            phi[:, j] = -col
    return phi


def _dense_eigs(L, mass, k):
    s = 1.0 / np.sqrt(mass)
    A = L.toarray() * s[:, None] * s[None, :]
    A = 0.5 * (A + A.T)
    w, U = scipy.linalg.eigh(A, subset_by_index=[0, k - 1])
    return w, U * s[:, None]


def _sparse_eigs(L, M, k):
    # small negative shift keeps L - sigma M factorizable despite the kernel
    sigma = -1e-8 * abs(L.diagonal()).max() / M.diagonal().max()
    w, U = splinalg.eigsh(L.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM")
    order = np.argsort(w)
    return w[order], U[:, order]


def _rayleigh_ritz(L, mass, U):
    G = U.T @ (U * mass[:, None])
    H = U.T @ (L @ U)
    G, H = 0.5 * (G + G.T), 0.5 * (H + H.T)
    w, V = scipy.linalg.eigh(H, G)
    return w, U @ V


def eigen_residuals(L, mass, phi, evals):
    """Per-pair residual ``||M^{-1/2}(L phi - lam M phi)||``."""
    R = L @ phi - (phi * mass[:, None]) * evals[None, :]
    return np.linalg.norm(R / np.sqrt(mass)[:, None], axis=0)


def compute_basis(L, M, k, backend="auto", mesh_hash=None, check=True):
    """Smallest ``k`` eigenpairs of ``L phi = lam M phi``.

    Parameters
    ----------
    L, M : sparse matrix
        Stiffness and (diagonal) mass matrix, e.g. from ``cotan_laplacian``.
    k : int
        Basis size, at most ``n``.
    backend : {"auto", "dense", "sparse"}
        ``auto`` uses the dense solver up to ``DENSE_MAX_N`` vertices and
        shift-invert Lanczos above.
    check : bool
        Raise :class:`SpectralError` when an eigenpair residual exceeds
        ``1e-6 * (1 + |lam|)``.

    Both backends finish with a Rayleigh-Ritz step, so the returned vectors
    are mass-orthonormal to rounding. Column signs are fixed so the first
    significant entry is positive.
    """
    L = sparse.csr_matrix(L)
    mass = np.asarray(M.diagonal() if sparse.issparse(M) else np.diag(M), dtype=float)
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if backend == "auto":
        backend = "dense" if n <= DENSE_MAX_N or k >= n - 1 else "sparse"
    if backend == "dense":
        w, U = _dense_eigs(L, mass, k)
    elif backend == "sparse":
        if k >= n - 1:
            raise ValueError("sparse backend needs k < n - 1")
        try:
            w, U = _sparse_eigs(L, sparse.diags(mass), k)
        except splinalg.ArpackNoConvergence as err:
            raise SpectralError(f"ARPACK did not converge: {err}") from err
    else:
        raise ValueError(f"unknown backend {backend!r}")
    w, U = _rayleigh_ritz(L, mass, U)
    U = _fix_signs(U)
    res = eigen_residuals(L, mass, U, w)
    if check:
        bad = res > RESIDUAL_TOL * (1.0 + np.abs(w))
        if bad.any():
            worst = float(res.max())
            raise SpectralError(
                f"{int(bad.sum())} eigenpair(s) above residual tolerance (worst {worst:.3e})",
                residual=worst)
    return SpectralBasis(_readonly(U), _readonly(w), _readonly(mass),
                         _operator_id(L, sparse.diags(mass), k), mesh_hash, _readonly(res))


def mesh_basis(mesh: TriMesh, k, backend="auto", clamp_negative=False):
    """Convenience wrapper: cotangent operators of ``mesh``, then ``compute_basis``."""
    L, M = cotan_laplacian(mesh, clamp_negative=clamp_negative)
    k = min(k, mesh.n_vertices)
    return compute_basis(L, M, k, backend=backend, mesh_hash=mesh.content_hash())


def project(basis, features):
    """Spectral coefficients ``phi.T @ M @ features``."""
    f = np.asarray(features, dtype=float)
    squeeze = f.ndim == 1
    if squeeze:
        f = f[:, None]
    if f.shape[0] != basis.n:
        raise ValueError(f"features have {f.shape[0]} rows, basis has {basis.n} vertices")
    return CoeffMatrix(basis.pinv @ f, basis.basis_id)


def unproject(basis, coeffs):
    """Functions ``phi @ coeffs`` from spectral coefficients."""
    if isinstance(coeffs, CoeffMatrix):
        if coeffs.basis_id != basis.basis_id:
            raise ValueError(f"coefficients belong to basis {coeffs.basis_id}, not {basis.basis_id}")
        c = coeffs.coeffs
    else:
        c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != basis.k:
        raise ValueError(f"coefficients have {c.shape[0]} rows, basis has k={basis.k}")
    return basis.phi @ c


def save_basis(path, basis, comments=()):
    """Store a basis as a ``.npz`` container; ``comments`` go in a ``header`` entry."""
    np.savez(Path(path), n=basis.n, k=basis.k, evals=basis.evals, phi=basis.phi,
             mass=basis.mass, basis_id=basis.basis_id, mesh_hash=basis.mesh_hash or "",
             header="\n".join(f"# {c}" for c in comments))


def load_basis(path, mesh=None):
    """Read a basis written by :func:`save_basis`.

    If ``mesh`` is given, its content hash must match the stored one.
    """
    with np.load(Path(path), allow_pickle=False) as z:
        phi, evals, mass = z["phi"], z["evals"], z["mass"]
        n, k = int(z["n"]), int(z["k"])
        basis_id, mesh_hash = str(z["basis_id"]), str(z["mesh_hash"]) or None
    if phi.shape != (n, k) or evals.shape != (k,) or mass.shape != (n,):
        raise ValueError(f"corrupt basis cache {path}")
    if mesh is not None and mesh_hash is not None and mesh.content_hash() != mesh_hash:
        raise ValueError(f"basis cache {path} was computed for a different mesh")
    return SpectralBasis(_readonly(phi), _readonly(evals), _readonly(mass), basis_id, mesh_hash)
