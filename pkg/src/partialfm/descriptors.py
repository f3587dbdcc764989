"""Per-vertex descriptors: HKS, WKS, the perfect-feature oracle, text I/O."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_KINDS = ("hks", "wks", "landmark", "perfect-oracle", "learned-toy", "file")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """``n x m`` per-vertex features tagged with where they came from."""
    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError(f"features must be an n x m matrix with m >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("features contain NaN or Inf")
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _mass_normalize(F, mass):
    mean = (mass @ F) / mass.sum()
    return F / np.where(mean > 0, mean, 1.0)


def default_hks_times(evals, count=16):
    """``count`` times log-spaced in ``[4 ln 10 / lam_max, 4 ln 10 / lam_1]``."""
    pos = np.asarray(evals)[1:]
    lo, hi = 4 * np.log(10) / pos.max(), 4 * np.log(10) / pos[pos > 0].min()
    return np.geomspace(lo, hi, count)


def heat_kernel_signature(basis, times=None, normalize=False):
    """``HKS(v, t) = sum_i exp(-lam_i t) phi_i(v)^2``, one column per time.

    With ``normalize`` every column is divided by its mass-weighted mean.
    """
    if times is None:
        times = default_hks_times(basis.evals)
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("at least one diffusion time is required")
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and ascending")
    lam = np.clip(basis.evals, 0.0, None)
    F = (basis.phi ** 2) @ np.exp(-np.outer(lam, times))
    if normalize:
        F = _mass_normalize(F, basis.mass)
    return FeatureMatrix(F, "hks")


def wks_energies(evals, n_energies=128, sigma_factor=7.0):
    """Log-energy grid and window width for :func:`wave_kernel_signature`.

    ``sigma = sigma_factor * (e_max - e_min) / n_energies`` with ``e`` the
    log of the nonzero eigenvalues; the energies are spread over
    ``[e_min + 2 sigma, e_max - 2 sigma]``. Pass the grid of one shape to
    both shapes of a pair so that columns compare the same energies.
    """
    lam = np.asarray(evals)
    nz = lam > 1e-8 * max(lam.max(), 1e-300)
    if nz.sum() < 2:
        raise ValueError("WKS needs at least two nonzero eigenvalues")
    loge = np.log(lam[nz])
    e_min, e_max = loge.min(), loge.max()
    sigma = sigma_factor * (e_max - e_min) / n_energies
    lo, hi = e_min + 2 * sigma, e_max - 2 * sigma
    if hi <= lo:
        lo, hi = e_min, e_max
    return np.linspace(lo, hi, n_energies), sigma


def wave_kernel_signature(basis, n_energies=128, sigma_factor=7.0, normalize=False,
                          energies=None, sigma=None):
    """Wave kernel signature on log-energy Gaussian windows.

    The energy grid defaults to :func:`wks_energies` of this basis.
    """
    if energies is None:
        energies, sigma = wks_energies(basis.evals, n_energies, sigma_factor)
    energies = np.asarray(energies, dtype=float)
    lam = np.asarray(basis.evals)
    nz = lam > 1e-8 * max(lam.max(), 1e-300)
    loge = np.log(lam[nz])
    phi2 = basis.phi[:, nz] ** 2
    w = np.exp(-(energies[None, :] - loge[:, None]) ** 2 / (2 * sigma ** 2))
    F = phi2 @ w / np.maximum(w.sum(axis=0, keepdims=True), 1e-300)
    if normalize:
        F = _mass_normalize(F, basis.mass)
    return FeatureMatrix(F, "wks")


def smooth_random_functions(basis, m, rng, bandwidth=None, decay=0.0):
    """``m`` random functions in the span of the first ``bandwidth`` eigenfunctions.

    Coefficients are standard normal, damped by ``(1 + lam_i / lam_1)^-decay``.
    """
    bw = basis.k if bandwidth is None else min(int(bandwidth), basis.k)
    c = rng.standard_normal((bw, m))
    if decay:
        lam = np.clip(basis.evals[:bw], 0.0, None)
        ref = lam[1] if bw > 1 and lam[1] > 0 else 1.0
        c *= ((1.0 + lam / ref) ** -decay)[:, None]
    return basis.phi[:, :bw] @ c


def perfect_features(full, part, gt, m, seed=0, basis_full=None, bandwidth=None, decay=0.0):
    """Descriptors of an ideal extractor: equal on corresponding points.

    Parameters
    ----------
    full, part : TriMesh
    gt : PointMap
        Part-to-full map (``gt.n_src == part.n_vertices``).
    m : int
        Number of feature functions.
    seed : int or numpy Generator
    basis_full : SpectralBasis, optional
        Basis of ``full`` used to draw band-limited functions; computed with
        ``k = 60`` when omitted.

    Returns
    -------
    (FeatureMatrix, FeatureMatrix)
        Features on ``part`` and on ``full``. Matched part rows are exact
        copies of the full rows they map to; unmatched part vertices get
        independent random rows of the same scale.
    """
    if gt.n_src != part.n_vertices or gt.n_tgt != full.n_vertices:
        raise ValueError(f"gt {gt.n_src}->{gt.n_tgt} does not map part "
                         f"({part.n_vertices}) to full ({full.n_vertices})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))
    if basis_full is None:
        from .spectral import mesh_basis
        basis_full = mesh_basis(full, 60)
    D_full = smooth_random_functions(basis_full, m, rng, bandwidth, decay)
    D_part = np.empty((part.n_vertices, m))
    ok = gt.matched
    D_part[ok] = D_full[gt.target_of[ok]]
    if (~ok).any():
        scale = np.sqrt(np.mean(D_full ** 2))
        D_part[~ok] = scale * rng.standard_normal(((~ok).sum(), m))
    return FeatureMatrix(D_part, "perfect-oracle"), FeatureMatrix(D_full, "perfect-oracle")


def save_features(path, features, comments=()):
    """Whitespace-separated text, one row per vertex, 17 significant digits."""
    F = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    head = "".join(f"# {c}\n" for c in comments)
    body = "\n".join(" ".join(f"{x:.17g}" for x in row) for row in F)
    Path(path).write_text(f"{head}{body}\n")


def load_features(path, kind="file"):
    rows = []
    for ln in Path(path).read_text().splitlines():
        s = ln.strip()
        if not s or s.startswith("#"):
            continue
        try:
            rows.append([float(x) for x in s.split()])
        except ValueError as err:
            raise ValueError(f"{path}: bad feature value ({err})") from None
    if not rows:
        raise ValueError(f"{path}: no feature rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged feature rows (lengths {sorted(widths)})")
    return FeatureMatrix(np.array(rows), kind)
