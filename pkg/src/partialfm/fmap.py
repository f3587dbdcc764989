"""Functional maps: masks, the masked least-squares solver, conversions.

Orientation convention
----------------------
A :class:`FunctionalMap` ``C`` has shape ``(k_tgt, k_src)`` and sends
coefficient vectors of functions on the *source* shape to coefficients on
the *target* shape, ``C @ A ~= B``. Point maps go the other way: the map
that induces ``C`` assigns to every *target* vertex a *source* vertex, and
:func:`fmap_to_p2p` returns such a target-to-source :class:`PointMap`.

For partial-to-full matching the full shape is the source and the partial
shape is the target, so the induced point map sends partial vertices onto
the full shape and ``C`` carries the slanted structure in its first ``r``
rows.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 100.0
DEFAULT_GAMMA = 0.5
TIKHONOV_FLOOR = 1e-10
BRUTE_FORCE_MAX = 5000
MASK_KINDS = ("laplacian", "slanted", "resolvent")


@dataclass(frozen=True, eq=False)
class FunctionalMap:
    """A ``(k_tgt, k_src)`` matrix with the ids of the bases it connects.

    ``regularized`` is set when the solver had to add the Tikhonov floor to a
    singular system.
    """
    C: np.ndarray
    src_basis_id: str = None
    tgt_basis_id: str = None
    regularized: bool = False

    @property
    def k_src(self):
        return self.C.shape[1]

    @property
    def k_tgt(self):
        return self.C.shape[0]


class PointMap:
    """Vertex-to-vertex map with possibly unmatched vertices.

    ``target_of[i]`` is the target vertex of source vertex ``i`` or ``-1``.
    """

    def __init__(self, target_of, n_tgt):
        t = np.asarray(target_of, dtype=np.int64).copy()
        if t.ndim != 1:
            raise ValueError("target_of must be one-dimensional")
        if len(t) and (t.max() >= n_tgt or t.min() < -1):
            raise ValueError(f"point map index out of range for {n_tgt} target vertices")
        t.setflags(write=False)
        self.target_of = t
        self.n_tgt = int(n_tgt)

    @property
    def n_src(self):
        return len(self.target_of)

    @property
    def matched(self):
        return self.target_of >= 0

    @property
    def n_matched(self):
        return int(self.matched.sum())

    def inverse(self):
        """Target-to-source map; for many-to-one maps the lowest source wins."""
        inv = -np.ones(self.n_tgt, dtype=np.int64)
        src = np.flatnonzero(self.matched)[::-1]
        inv[self.target_of[src]] = src
        return PointMap(inv, self.n_src)

    def compose(self, other):
        """``other`` after ``self``: source of self -> target of other."""
        if other.n_src != self.n_tgt:
            raise ValueError("point maps do not compose")
        out = np.where(self.matched, other.target_of[np.maximum(self.target_of, 0)], -1)
        return PointMap(out, other.n_tgt)

    def restricted(self, keep):
        """Unmatch every source vertex where ``keep`` is False."""
        keep = np.asarray(keep, dtype=bool)
        return PointMap(np.where(keep, self.target_of, -1), self.n_tgt)

    def __eq__(self, other):
        return (isinstance(other, PointMap) and self.n_tgt == other.n_tgt
                and np.array_equal(self.target_of, other.target_of))

    def __repr__(self):
        return f"PointMap(n_src={self.n_src}, n_tgt={self.n_tgt}, matched={self.n_matched})"


@dataclass(frozen=True)
class MaskSpec:
    """Which penalty mask to build and from which spectra.

    ``lambda_src`` / ``lambda_tgt`` are the eigenvalues of the source and
    target bases. ``rank`` is the slope estimate used by the slanted mask; it
    is estimated from the spectra when omitted. With ``normalize`` both
    spectra are divided by their common maximum first, which makes the mask
    independent of the mesh scale.
    """
    kind: str = "resolvent"
    lambda_src: tuple = ()
    lambda_tgt: tuple = ()
    gamma: float = DEFAULT_GAMMA
    rank: int = None
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"mask kind must be one of {MASK_KINDS}, got {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        src, tgt = np.asarray(self.lambda_src, float), np.asarray(self.lambda_tgt, float)
        if src.size == 0 or tgt.size == 0:
            raise ValueError("both eigenvalue lists are required")
        # tiny negatives from the eigensolver are clamped, real ones rejected
        if min(src.min(), tgt.min()) < -1e-8 * max(1.0, src.max(), tgt.max()):
            raise ValueError("eigenvalues must be non-negative")


def _resolvent_parts(lam, gamma):
    p = np.power(lam, 2 * gamma) + 1.0
    return np.power(lam, gamma) / p, 1.0 / p


def build_mask(spec):
    """Penalty matrix ``M`` of shape ``(k_tgt, k_src)``, entrywise >= 0."""
    src = np.clip(np.asarray(spec.lambda_src, float), 0.0, None)
    tgt = np.clip(np.asarray(spec.lambda_tgt, float), 0.0, None)
    if spec.normalize:
        scale = max(src.max(), tgt.max())
        if scale > 0:
            src, tgt = src / scale, tgt / scale
    if spec.kind == "laplacian":
        return (tgt[:, None] - src[None, :]) ** 2
    if spec.kind == "resolvent":
        re_t, im_t = _resolvent_parts(tgt, spec.gamma)
        re_s, im_s = _resolvent_parts(src, spec.gamma)
        return (re_t[:, None] - re_s[None, :]) ** 2 + (im_t[:, None] - im_s[None, :]) ** 2
    # slanted: squared distance to the line through (1, 1) with slope r / k_src
    k_t, k_s = len(tgt), len(src)
    r = spec.rank if spec.rank is not None else estimate_rank(tgt, src)
    slope = r / k_s
    i = np.arange(k_t)[:, None]
    j = np.arange(k_s)[None, :]
    d = np.abs(slope * j - i) / np.sqrt(1.0 + slope ** 2)
    return (d / max(k_t, k_s)) ** 2


def estimate_rank(lambda_partial, lambda_full):
    """Number of partial-shape eigenvalues strictly below the largest full one.

    This is the slope of the slanted diagonal; at least 1.
    """
    lp = np.asarray(lambda_partial, float)
    top = np.max(lambda_full)
    return max(1, int(np.sum(lp < top)))


def _coeffs(x):
    return np.asarray(getattr(x, "coeffs", x), dtype=float)


def _factor_rows(AAt, mask, lam):
    """Cholesky factors of ``AAt + lam * diag(mask[i])`` for every row ``i``.

    Returns the factors and whether the Tikhonov floor was needed.
    """
    k = AAt.shape[0]
    floor = TIKHONOV_FLOOR * max(1.0, float(np.trace(AAt)) / k)
    factors = []
    floored = False
    for i in range(mask.shape[0]):
        S = AAt + lam * np.diag(mask[i])
        try:
            cf = scipy.linalg.cho_factor(S, lower=True)
            piv = np.abs(np.diag(cf[0]))
            ok = piv.min() ** 2 > 1e-13 * max(piv.max() ** 2, floor)
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            floored = True
            cf = scipy.linalg.cho_factor(S + floor * np.eye(k), lower=True)
        factors.append(cf)
    return factors, floored


def solve_fmap(A, B, mask, lam=DEFAULT_LAMBDA, src_basis_id=None, tgt_basis_id=None):
    """Minimize ``||C A - B||_F^2 + lam * sum_ij M_ij C_ij^2``.

    The objective decouples over the rows of ``C``: row ``i`` solves the
    symmetric positive-definite system
    ``(A A^T + lam diag(M[i])) c_i = A B[i]``.

    Parameters
    ----------
    A : array_like or CoeffMatrix, shape (k_src, m)
        Source coefficients.
    B : array_like or CoeffMatrix, shape (k_tgt, m)
        Target coefficients.
    mask : array_like, shape (k_tgt, k_src)
    lam : float
        Penalty weight, >= 0.

    When a row system is singular (``lam = 0`` with rank-deficient ``A``) a
    Tikhonov floor of ``1e-10`` is added and the result is flagged
    ``regularized``.
    """
    src_basis_id = src_basis_id or getattr(A, "basis_id", None)
    tgt_basis_id = tgt_basis_id or getattr(B, "basis_id", None)
    A, B, mask = _coeffs(A), _coeffs(B), np.asarray(mask, float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"A {A.shape} and B {B.shape} need the same number of columns")
    if mask.shape != (B.shape[0], A.shape[0]):
        raise ValueError(f"mask shape {mask.shape} != ({B.shape[0]}, {A.shape[0]})")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    AAt = A @ A.T
    rhs = B @ A.T
    factors, floored = _factor_rows(AAt, mask, lam)
    if floored:
        logger.warning("singular functional map system: applied Tikhonov floor %g", TIKHONOV_FLOOR)
    C = np.empty((B.shape[0], A.shape[0]))
    for i, cf in enumerate(factors):
        C[i] = scipy.linalg.cho_solve(cf, rhs[i])
    return FunctionalMap(C, src_basis_id, tgt_basis_id, floored)


def fmap_energy(C, A, B, mask, lam):
    """Objective value minimized by :func:`solve_fmap`."""
    C, A, B = _coeffs(C) if not isinstance(C, FunctionalMap) else C.C, _coeffs(A), _coeffs(B)
    return float(np.sum((C @ A - B) ** 2) + lam * np.sum(np.asarray(mask) * C ** 2))


def commutativity_energy(C, lambda_src, lambda_tgt):
    """``||C diag(lambda_src) - diag(lambda_tgt) C||_F^2``."""
    C = C.C if isinstance(C, FunctionalMap) else np.asarray(C)
    return float(np.sum((C * np.asarray(lambda_src)[None, :]
                         - np.asarray(lambda_tgt)[:, None] * C) ** 2))


def gt_fmap(p2p, basis_src, basis_tgt):
    """Functional map induced by a target-to-source point map.

    ``C = pinv(phi_tgt) @ Pi @ phi_src`` where ``Pi[v, p2p[v]] = 1``;
    unmatched target vertices give zero rows of ``Pi``.
    """
    if p2p.n_src != basis_tgt.n or p2p.n_tgt != basis_src.n:
        raise ValueError(
            f"point map {p2p.n_src}->{p2p.n_tgt} does not match bases "
            f"(target n={basis_tgt.n}, source n={basis_src.n})")
    m = p2p.matched
    C = basis_tgt.pinv[:, m] @ basis_src.phi[p2p.target_of[m]]
    return FunctionalMap(C, basis_src.basis_id, basis_tgt.basis_id)


p2p_to_fmap = gt_fmap


def nearest_neighbors(query, data):
    """Index of the nearest row of ``data`` for every row of ``query``.

    Exact brute force below ``BRUTE_FORCE_MAX`` data rows, a k-d tree
    above; ties go to the lowest index in both cases.
    """
    query = np.ascontiguousarray(query, dtype=float)
    data = np.ascontiguousarray(data, dtype=float)
    if len(data) <= BRUTE_FORCE_MAX:
        return _nn_brute(query, data)
    return _nn_tree(query, data)


def _nn_brute(query, data, chunk=256):
    out = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), chunk):
        q = query[s:s + chunk]
        d = np.sum((q[:, None, :] - data[None, :, :]) ** 2, axis=2)
        out[s:s + chunk] = np.argmin(d, axis=1)
    return out


def _nn_tree(query, data, k=8):
    tree = cKDTree(data)
    k = min(k, len(data))
    dist, idx = tree.query(query, k=k)
    dist, idx = np.atleast_2d(dist), np.atleast_2d(idx)
    out = idx[:, 0].copy()
    for row in np.flatnonzero(dist[:, 1] == dist[:, 0]) if k > 1 else []:
        if dist[row, -1] == dist[row, 0]:
            out[row] = _nn_brute(query[row:row + 1], data)[0]
        else:
            out[row] = idx[row][dist[row] == dist[row, 0]].min()
    return out


def spectral_embeddings(C, basis_src, basis_tgt):
    """Row embeddings compared by the nearest-neighbor conversion.

    Returns ``(phi_src @ C.T, phi_tgt)`` truncated to the size of ``C``.
    """
    C = C.C if isinstance(C, FunctionalMap) else np.asarray(C)
    k_t, k_s = C.shape
    if k_s > basis_src.k or k_t > basis_tgt.k:
        raise ValueError(f"functional map {C.shape} is larger than the bases")
    return basis_src.phi[:, :k_s] @ C.T, basis_tgt.phi[:, :k_t]


def fmap_to_p2p(C, basis_src, basis_tgt, overlap=None):
    """Nearest-neighbor point map (target to source) from a functional map.

    Every target vertex ``v`` is sent to the source vertex whose row of
    ``phi_src @ C.T`` is closest to ``phi_tgt[v]``. Target vertices where
    ``overlap`` is False are left unmatched.
    """
    emb_src, emb_tgt = spectral_embeddings(C, basis_src, basis_tgt)
    n_t = basis_tgt.n
    if overlap is None:
        keep = np.ones(n_t, dtype=bool)
    else:
        keep = np.asarray(overlap, dtype=bool)
        if keep.shape != (n_t,):
            raise ValueError("overlap must have one entry per target vertex")
    out = -np.ones(n_t, dtype=np.int64)
    if keep.any():
        out[keep] = nearest_neighbors(emb_tgt[keep], emb_src)
    return PointMap(out, basis_src.n)


# --------------------------------------------------------------------------
# text formats

def _header(comments):
    return "".join(f"# {c}\n" for c in comments)


def _strip_comments(text):
    return [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def save_fmap(path, fmap, comments=()):
    """First line ``k_tgt k_src``, then the matrix rows."""
    C = fmap.C if isinstance(fmap, FunctionalMap) else np.asarray(fmap)
    rows = "\n".join(" ".join(repr(float(x)) for x in row) for row in C)
    Path(path).write_text(f"{_header(comments)}{C.shape[0]} {C.shape[1]}\n{rows}\n")


def load_fmap(path):
    lines = _strip_comments(Path(path).read_text())
    if not lines:
        raise ValueError(f"{path}: empty functional map file")
    try:
        kt, ks = (int(x) for x in lines[0].split())
        C = np.array([[float(x) for x in ln.split()] for ln in lines[1:]])
    except ValueError as err:
        raise ValueError(f"{path}: malformed functional map ({err})") from None
    if C.shape != (kt, ks):
        raise ValueError(f"{path}: header says {kt}x{ks}, data is {C.shape}")
    return FunctionalMap(C)


def save_map(path, p2p, comments=()):
    """One line per source vertex: target index, or -1 when unmatched.

    The number of target vertices is stored in a ``# n_tgt`` comment.
    """
    body = "\n".join(str(int(t)) for t in p2p.target_of)
    comments = list(comments) + [f"n_tgt {p2p.n_tgt}"]
    Path(path).write_text(f"{_header(comments)}{body}\n")


def load_map(path, n_tgt=None):
    text = Path(path).read_text()
    for ln in text.splitlines():
        s = ln.strip()
        if s.startswith("#") and s[1:].split()[:1] == ["n_tgt"] and n_tgt is None:
            n_tgt = int(s[1:].split()[1])
    try:
        t = np.array([int(ln.split()[0]) for ln in _strip_comments(text)], dtype=np.int64)
    except ValueError as err:
        raise ValueError(f"{path}: malformed map file ({err})") from None
    if n_tgt is None:
        n_tgt = int(t.max()) + 1 if len(t) else 0
    return PointMap(t, n_tgt)
