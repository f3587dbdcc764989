"""Synthetic partial shapes with exact ground truth.

Every partial shape is a submesh of a full shape, so the ground-truth map
is index inclusion and corresponding vertices share their 3D position.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from ..fmap import PointMap, load_map, save_map
from ..mesh import TriMesh, edge_graph, load_mesh, save_mesh
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)

MIN_PARTIALITY = 0.05
MAX_PARTIALITY = 0.95
PARTIALITY_TOL = 0.05
OVERLAP_TOL = 0.10
MAX_BISECTIONS = 50


class PartialityError(RuntimeError):
    """The requested amount of partiality could not be reached."""


def make_rng(seed):
    """The package-wide counter-based generator for a 64-bit seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed) & (2 ** 64 - 1)))


@dataclass(eq=False)
class SynthPair:
    """A partial shape cut out of a full shape.

    ``gt`` maps every vertex of ``part`` to its full-shape vertex. For
    partial-to-partial pairs ``part2``/``gt2`` hold the second partial shape
    and its map onto ``full``; the map between the two partial shapes is
    :meth:`p2p_gt`.
    """
    full: TriMesh
    part: TriMesh
    gt: PointMap
    partiality: float
    kind: str
    seed: int
    part2: TriMesh = None
    gt2: PointMap = None
    base: str = None

    @property
    def gt_overlap_on_full(self):
        """Full-shape vertices that survive on the partial shape(s)."""
        mask = np.zeros(self.full.n_vertices, dtype=bool)
        mask[self.gt.target_of[self.gt.matched]] = True
        if self.gt2 is not None:
            other = np.zeros_like(mask)
            other[self.gt2.target_of[self.gt2.matched]] = True
            mask &= other
        return mask

    def p2p_gt(self):
        """Map from ``part`` to ``part2`` defined on their common region."""
        if self.part2 is None:
            raise ValueError("not a partial-to-partial pair")
        return self.gt.compose(self.gt2.inverse())

    def overlap_fraction(self):
        """Area of the common region of both partial shapes over the full area."""
        return _kept_area(self.full, self.gt_overlap_on_full) / self.full.area


def _kept_area(mesh, keep):
    return float(mesh.face_area[keep[mesh.faces].all(axis=1)].sum())


def _largest_piece(full, keep):
    """Vertices of the largest edge-connected component of the kept faces."""
    fmask = keep[full.faces].all(axis=1)
    if not fmask.any():
        return np.zeros(full.n_vertices, dtype=bool)
    faces = full.faces[fmask]
    n = full.n_vertices
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    from scipy import sparse
    adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, lab = csgraph.connected_components(adj, directed=False)
    used = np.zeros(n, dtype=bool)
    used[faces.ravel()] = True
    counts = np.bincount(lab[used], weights=None, minlength=lab.max() + 1)
    # weigh components by area rather than vertex count
    farea = np.zeros(lab.max() + 1)
    np.add.at(farea, lab[faces[:, 0]], full.face_area[fmask])
    best = int(np.argmax(farea)) if farea.any() else int(np.argmax(counts))
    return used & (lab == best)


def _check_partiality(target):
    if not MIN_PARTIALITY <= target <= MAX_PARTIALITY:
        raise ValueError(f"partiality must be in [{MIN_PARTIALITY}, {MAX_PARTIALITY}], got {target}")


def _bisect(removed_of, lo, hi, target, tol):
    """Find ``t`` in ``[lo, hi]`` with ``removed_of(t)`` close to ``target``.

    ``removed_of`` must be (roughly) decreasing in ``t``.
    """
    best, best_err = None, np.inf
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        r, keep = removed_of(mid)
        err = r - target
        if abs(err) < best_err:
            best, best_err = (mid, r, keep), abs(err)
        if abs(err) <= 0.1 * tol:
            break
        if err > 0:
            lo = mid
        else:
            hi = mid
    if best_err > tol:
        raise PartialityError(f"could not reach partiality {target:.3f} (closest {best[1]:.3f})")
    return best


def _submesh_pair(full, keep):
    part, used = full.submesh(keep)
    return part, PointMap(used, full.n_vertices)


def gen_cut(full, seed, target_partiality, base=None):
    """Cut ``full`` with a random plane so that about ``target_partiality``
    of its area is removed (within +-0.05); keep the largest piece."""
    _check_partiality(target_partiality)
    rng = make_rng(seed)
    normal = rng.standard_normal(3)
    normal /= np.linalg.norm(normal)
    s = full.vertices @ normal
    total = full.area

    def removed_of(t):
        keep = _largest_piece(full, s <= t)
        return 1.0 - _kept_area(full, keep) / total, keep

    _, removed, keep = _bisect(removed_of, s.min(), s.max(), target_partiality, PARTIALITY_TOL)
    part, gt = _submesh_pair(full, keep)
    return SynthPair(full, part, gt, 1.0 - part.area / total, "cut", int(seed), base=base)


def gen_holes(full, seed, n_seeds, target_partiality, base=None):
    """Erode ``full`` breadth-first from ``n_seeds`` random vertices.

    Each seed grows at its own random speed, giving holes of different
    sizes. Vertices are removed in order of (speed-scaled) graph distance to
    the nearest seed until the removed area reaches the target.
    """
    _check_partiality(target_partiality)
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    rng = make_rng(seed)
    seeds = rng.choice(full.n_vertices, size=n_seeds, replace=False)
    speed = rng.uniform(0.6, 1.4, size=n_seeds)
    d = csgraph.dijkstra(edge_graph(full), directed=False, indices=seeds)
    front = (d / speed[:, None]).min(axis=0)
    order = np.argsort(front, kind="stable")
    total = full.area

    def removed_of(t):
        cnt = int(round(t))
        keep = np.ones(full.n_vertices, dtype=bool)
        keep[order[:cnt]] = False
        keep = _largest_piece(full, keep)
        return 1.0 - _kept_area(full, keep) / total, keep

    # removed area grows with the count, so search on the negated count
    def removed_neg(t):
        return removed_of(-t)

    _, removed, keep = _bisect(removed_neg, -float(full.n_vertices), 0.0,
                               target_partiality, PARTIALITY_TOL)
    part, gt = _submesh_pair(full, keep)
    return SynthPair(full, part, gt, 1.0 - part.area / total, "holes", int(seed), base=base)


def gen_p2p(full, seed, overlap_fraction, base=None):
    """Two overlapping plane cuts of ``full``.

    The first shape keeps one side of a random plane, the second the other
    side of a tilted plane; the second plane is placed by bisection so that
    the common region covers ``overlap_fraction`` of the full area
    (within +-0.10).
    """
    if not 0.1 <= overlap_fraction <= 0.9:
        raise ValueError(f"overlap fraction must be in [0.1, 0.9], got {overlap_fraction}")
    rng = make_rng(seed)
    n1 = rng.standard_normal(3)
    n1 /= np.linalg.norm(n1)
    n2 = n1 + 0.3 * rng.standard_normal(3)
    n2 /= np.linalg.norm(n2)
    total = full.area
    # first shape drops part of the area not shared with the second
    drop1 = rng.uniform(0.25, 0.75) * (1.0 - overlap_fraction)
    s1 = full.vertices @ n1
    s2 = full.vertices @ n2

    def removed1(t):
        keep = _largest_piece(full, s1 <= t)
        return 1.0 - _kept_area(full, keep) / total, keep

    _, _, keep1 = _bisect(removed1, s1.min(), s1.max(), max(drop1, 0.02), OVERLAP_TOL)

    def overlap_loss(t):
        keep2 = _largest_piece(full, s2 >= t)
        common = keep1 & keep2
        ov = _kept_area(full, common) / total
        # bisection expects a quantity decreasing in t: removed = 1 - overlap
        return 1.0 - ov, keep2

    # 1 - overlap grows with t, so search on -t
    _, _, keep2 = _bisect(lambda t: overlap_loss(-t), -s2.max(), -s2.min(),
                          1.0 - overlap_fraction, OVERLAP_TOL)
    part, gt = _submesh_pair(full, keep1)
    part2, gt2 = _submesh_pair(full, keep2)
    pair = SynthPair(full, part, gt, 1.0 - part.area / total, "p2p", int(seed),
                     part2=part2, gt2=gt2, base=base)
    return pair


# --------------------------------------------------------------------------
# dataset directories

def save_pair(directory, pair, comments=()):
    """Write ``full.off``, ``part.off``, ``gt.map`` and ``meta.toml``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mesh(d / "full.off", pair.full, comments=comments)
    save_mesh(d / "part.off", pair.part, comments=comments)
    save_map(d / "gt.map", pair.gt, comments=comments)
    meta = {"kind": pair.kind, "seed": pair.seed, "partiality": pair.partiality}
    if pair.base:
        meta["base"] = pair.base
    if pair.part2 is not None:
        save_mesh(d / "part2.off", pair.part2, comments=comments)
        save_map(d / "gt2.map", pair.gt2, comments=comments)
        meta["overlap"] = pair.overlap_fraction()
    with open(d / "meta.toml", "wb") as fh:
        tomli_w.dump(meta, fh)


def load_pair(directory):
    d = Path(directory)
    with open(d / "meta.toml", "rb") as fh:
        meta = tomli.load(fh)
    full = load_mesh(d / "full.off")
    part = load_mesh(d / "part.off")
    gt = load_map(d / "gt.map", n_tgt=full.n_vertices)
    part2 = gt2 = None
    if (d / "part2.off").exists():
        part2 = load_mesh(d / "part2.off")
        gt2 = load_map(d / "gt2.map", n_tgt=full.n_vertices)
    return SynthPair(full, part, gt, float(meta["partiality"]), meta["kind"], int(meta["seed"]),
                     part2=part2, gt2=gt2, base=meta.get("base"))
