"""Numerical checks of when perfect features determine a partial functional map.

With identical descriptors at corresponding points, the map from a full
shape to a partial one is pinned down by the features alone. When the
source is itself partial, the descriptors of source points that have no
counterpart pollute the equations unless they are first projected out,
which requires knowing the overlap, i.e. information from the other shape.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .descriptors import smooth_random_functions
from .fmap import gt_fmap
from .spectral import mesh_basis

logger = logging.getLogger(__name__)

DEFAULT_K = 60
PASS_RESIDUAL = 0.05
CONTROL_RATIO = 5.0


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Diagonal 0/1 projector onto the vertices that have a match."""
    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=bool).copy()
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)

    @classmethod
    def from_pointmap(cls, p2p):
        return cls(p2p.matched)

    def apply(self, F):
        F = np.asarray(F, dtype=float)
        return np.where(self.diag[:, None] if F.ndim == 2 else self.diag, F, 0.0)

    def dense(self):
        return np.diag(self.diag.astype(float))


@dataclass(eq=False)
class ResidualReport:
    """Outcome of one check: main residual, control residual and verdict."""
    name: str
    residual: float
    control: float
    passed: bool
    degenerate: bool = False
    details: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = " (degenerate)" if self.degenerate else ""
        return f"{tag} {self.name}: residual={self.residual:.3e} control={self.control:.3e}{extra}"


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))


def _rel(x, ref):
    n = np.linalg.norm(ref)
    return float(np.linalg.norm(x) / n) if n > 0 else float(np.linalg.norm(x))


def check_partial_to_full(full, part, gt, m=32, seed=0, k=DEFAULT_K, bandwidth=None, decay=2.0,
                          basis_full=None, basis_part=None):
    """Residual of the feature equations for a part-to-full ground truth map.

    Features are ``m`` smooth random functions on ``full`` drawn from its
    first ``bandwidth`` eigenfunctions (default ``2k``) and copied to
    ``part`` through ``gt``. Both are band-limited by projecting onto the
    first ``k`` eigenfunctions of their own shape; the map ``C`` induced by
    ``gt`` then has to carry the full coefficients ``A`` onto the partial
    coefficients ``B``. The residual ``||C A - B|| / ||B||`` is nonzero
    only through truncation. The control repeats the computation with
    features on ``part`` that do not correspond.
    """
    if not gt.matched.all():
        raise ValueError("every partial vertex must be matched for the partial-to-full check")
    rng = _rng(seed)
    bw = 2 * k if bandwidth is None else bandwidth
    big = mesh_basis(full, max(bw, k)) if basis_full is None or basis_full.k < bw else basis_full
    bf = big.truncate(k)
    bp = mesh_basis(part, k) if basis_part is None else basis_part.truncate(k)
    D_full = smooth_random_functions(big, m, rng, bw, decay)
    D_part = D_full[gt.target_of]
    C = gt_fmap(gt, bf, bp).C
    A = bf.pinv @ D_full
    B = bp.pinv @ D_part
    rho = _rel(C @ A - B, B)
    D_rand = smooth_random_functions(bp, m, rng, None, decay)
    B_rand = bp.pinv @ D_rand
    control = _rel(C @ A - B_rand, B_rand)
    raw = _rel(D_part - bp.phi @ (C @ A), D_part)
    return ResidualReport("partial-to-full", rho, control,
                          rho <= PASS_RESIDUAL and control >= 10 * rho,
                          details={"raw_feature_residual": raw, "k": k, "bandwidth": bw})


def check_partial_to_partial(shape_x, shape_y, gt, m=32, seed=0, k=DEFAULT_K, decay=2.0,
                             basis_x=None, basis_y=None):
    """Feature equations between two partial shapes, with and without projection.

    ``gt`` maps vertices of ``shape_x`` to ``shape_y`` (``-1`` where there is
    no counterpart). Features are smooth random functions on ``shape_y``;
    matched rows of ``shape_x`` copy them, unmatched rows are independent
    random values. ``C`` (induced by ``gt``) transports the ``y``
    coefficients to ``x``. Two residuals are reported:

    * without projection, against the coefficients of all ``x`` features,
      as a shape-independent (Siamese) pipeline would have to do;
    * with the projection onto matched vertices applied to the ``x``
      features first.
    """
    rng = _rng(seed)
    bx = mesh_basis(shape_x, k) if basis_x is None else basis_x.truncate(k)
    by = mesh_basis(shape_y, k) if basis_y is None else basis_y.truncate(k)
    P = ProjectionMatrix.from_pointmap(gt)
    D_y = smooth_random_functions(by, m, rng, None, decay)
    ok = gt.matched
    D_x = np.empty((shape_x.n_vertices, m))
    D_x[ok] = D_y[gt.target_of[ok]]
    if (~ok).any():
        D_x[~ok] = np.sqrt(np.mean(D_y ** 2)) * rng.standard_normal(((~ok).sum(), m))
    C = gt_fmap(gt, by, bx).C
    CA = C @ (by.pinv @ D_y)
    B_all = bx.pinv @ D_x
    B_proj = bx.pinv @ P.apply(D_x)
    rho_noproj = _rel(CA - B_all, B_all)
    degenerate = not ok.any() or ok.all()
    rho_proj = _rel(CA - B_proj, B_proj)
    if not ok.any():
        logger.info("empty overlap: the induced map is zero")
    passed = rho_proj <= PASS_RESIDUAL and (ok.all() or rho_noproj >= CONTROL_RATIO * rho_proj)
    return ResidualReport("partial-to-partial", rho_proj, rho_noproj, passed, degenerate,
                          details={"matched_fraction": float(ok.mean()), "k": k})


def zero_feature_example(full, part, gt, k=DEFAULT_K, basis_full=None, basis_part=None):
    """A full-shape function that vanishes on the part but not elsewhere.

    Its partial coefficients ``b`` are exactly zero while its full
    coefficients ``a`` are not, so ``C a = b`` with ``b = 0`` says nothing
    about ``a``. Returns ``(norm of a, L2 norm of the function, norm of b)``.
    """
    bf = mesh_basis(full, k) if basis_full is None else basis_full.truncate(k)
    bp = mesh_basis(part, k) if basis_part is None else basis_part.truncate(k)
    on_part = np.zeros(full.n_vertices, dtype=bool)
    on_part[gt.target_of[gt.matched]] = True
    if on_part.all():
        raise ValueError("the part covers the whole shape")
    f = np.where(on_part, 0.0, 1.0)
    a = bf.pinv @ f
    b = bp.pinv @ f[gt.target_of]
    f_norm = float(np.sqrt(np.sum(full.vertex_mass * f ** 2)))
    return float(np.linalg.norm(a)), f_norm, float(np.linalg.norm(b))


def run_all(seed=0, k=DEFAULT_K, base="capsule"):
    """The checks of :func:`verify-theory`: identity, plane cut, 50% overlap."""
    from .bench.shapes import base_shape, normalize_area
    from .bench.synth import gen_cut, gen_p2p
    from .fmap import PointMap
    full = normalize_area(base_shape(base))
    bf = mesh_basis(full, 2 * k)
    reports = []
    ident = PointMap(np.arange(full.n_vertices), full.n_vertices)
    r = check_partial_to_full(full, full, ident, seed=seed, k=k, basis_full=bf, basis_part=bf)
    r.name = "partial-to-full identity"
    reports.append(r)
    cut = gen_cut(full, seed, 0.4, base=base)
    r = check_partial_to_full(full, cut.part, cut.gt, seed=seed, k=k, basis_full=bf)
    r.name = "partial-to-full plane cut"
    reports.append(r)
    pp = gen_p2p(full, seed, 0.5, base=base)
    r = check_partial_to_partial(pp.part, pp.part2, pp.p2p_gt(), seed=seed, k=k)
    r.name = "partial-to-partial 50% overlap"
    reports.append(r)
    a, f, b = zero_feature_example(full, cut.part, cut.gt, k=k, basis_full=bf)
    reports.append(ResidualReport("zero partial coefficients, nonzero full", b, a, b == 0 and a > 0.1 * f,
                                  details={"function_norm": f}))
    return reports
