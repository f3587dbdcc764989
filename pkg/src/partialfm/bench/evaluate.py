"""Princeton-protocol error curves, partiality bins and benchmark pair sets."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..mesh import geodesic_matrix
from ..spectral import mesh_basis
from .shapes import base_shape, normalize_area
from .synth import gen_cut, gen_holes, make_rng

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = np.linspace(0.0, 0.25, 100)
PERCENT_SCALE = 100.0


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    """Cumulative fraction of matches with error at most each threshold."""
    thresholds: np.ndarray
    fraction: np.ndarray
    mean_error: float
    errors: np.ndarray = field(default=None, repr=False)

    def save_csv(self, path, comments=()):
        lines = [f"# {c}" for c in comments] + ["threshold,fraction"]
        lines += [f"{t:.10g},{f:.10g}" for t, f in zip(self.thresholds, self.fraction)]
        Path(path).write_text("\n".join(lines) + "\n")


def geodesic_errors(pred, gt, tgt_mesh, geodesics=None):
    """Per-vertex geodesic error on the target, divided by sqrt(target area).

    Only source vertices matched in ``gt`` are scored; a vertex that ``gt``
    matches but ``pred`` leaves unmatched counts as infinitely wrong.

    ``geodesics`` may hold a precomputed all-pairs distance matrix of the
    target mesh (unnormalized).
    """
    if pred.n_src != gt.n_src:
        raise ValueError(f"pred has {pred.n_src} source vertices, gt has {gt.n_src}")
    if pred.n_tgt != tgt_mesh.n_vertices or gt.n_tgt != tgt_mesh.n_vertices:
        raise ValueError("point maps do not land on the target mesh")
    ok = gt.matched
    if not ok.any():
        raise ValueError("no ground-truth matched vertices to evaluate")
    g = gt.target_of[ok]
    p = pred.target_of[ok]
    err = np.full(len(g), np.inf)
    hit = p >= 0
    if geodesics is not None:
        err[hit] = geodesics[g[hit], p[hit]]
    else:
        src, inv = np.unique(g[hit], return_inverse=True)
        if len(src):
            d = geodesic_matrix(tgt_mesh, src)
            err[hit] = d[inv, p[hit]]
    return err / np.sqrt(tgt_mesh.area)


def princeton_curve(pred, gt, tgt_mesh, thresholds=None, geodesics=None):
    """Error curve of ``pred`` against ``gt`` (both source-to-target maps)."""
    t = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be a non-empty ascending sequence")
    err = geodesic_errors(pred, gt, tgt_mesh, geodesics)
    frac = np.searchsorted(np.sort(err), t, side="right") / len(err)
    return ErrorCurve(t, frac, float(np.mean(err)), err)


@dataclass(frozen=True)
class BinnedError:
    lo: float
    hi: float
    mean_error: float
    count: int


def partiality_binned_error(results, n_bins=10):
    """Mean error per partiality decile.

    ``results`` is an iterable of ``(partiality, mean_error)``. Returns the
    non-empty bins in order plus the list of empty bin indices.
    """
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    acc = [[] for _ in range(n_bins)]
    for part, err in results:
        if not 0.0 <= part <= 1.0:
            raise ValueError(f"partiality {part} outside [0, 1]")
        b = min(int(part * n_bins), n_bins - 1)
        acc[b].append(err)
    rows = [BinnedError(edges[b], edges[b + 1], float(np.mean(v)), len(v))
            for b, v in enumerate(acc) if v]
    empty = [b for b, v in enumerate(acc) if not v]
    return rows, empty


# --------------------------------------------------------------------------
# benchmark pair sets

@dataclass(eq=False)
class PairCase:
    """A generated pair with the bases and geodesics needed to evaluate it."""
    pair: object
    basis_full: object
    basis_part: object
    geodesics: np.ndarray
    name: str = ""

    def errors(self, p2p):
        """Normalized geodesic errors of a part-to-full point map."""
        return geodesic_errors(p2p, self.pair.gt, self.pair.full, self.geodesics)


BENCH_BASES = ("icosphere", "capsule", "quadruped")


def _full_shapes(bases, k):
    out = {}
    for name in bases:
        full = normalize_area(base_shape(name))
        out[name] = (full, mesh_basis(full, k), geodesic_matrix(full))
    return out


def benchmark_pairs(n_pairs=20, kind="cut", seed=0, k=60, partiality=(0.2, 0.6),
                    bases=BENCH_BASES, n_seeds=3):
    """Deterministic set of partial-to-full pairs over the built-in shapes.

    Pairs cycle through ``bases``; partialities are spread evenly over
    ``partiality`` within each base shape. All shapes are rescaled to unit
    area.
    """
    shapes = _full_shapes(bases, k)
    rng = make_rng(seed)
    per_base = {b: [i for i in range(n_pairs) if i % len(bases) == j] for j, b in enumerate(bases)}
    targets = {}
    for b, ids in per_base.items():
        for r, i in enumerate(ids):
            targets[i] = partiality[0] + (partiality[1] - partiality[0]) * (r + 0.5) / len(ids)
    seeds = rng.integers(0, 2 ** 63, size=n_pairs)
    cases = []
    for i in range(n_pairs):
        b = bases[i % len(bases)]
        full, bf, geo = shapes[b]
        if kind == "cut":
            pair = gen_cut(full, int(seeds[i]), targets[i], base=b)
        elif kind == "holes":
            pair = gen_holes(full, int(seeds[i]), n_seeds, targets[i], base=b)
        else:
            raise ValueError(f"unsupported pair kind {kind!r}")
        cases.append(PairCase(pair, bf, mesh_basis(pair.part, k), geo, f"{kind}_{i:04d}_{b}"))
    return cases


def write_table(path, header, rows, comments=()):
    """CSV with optional ``#`` comment lines."""
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def format_table(header, rows):
    """Aligned plain-text rendering of a table."""
    cells = [[str(h) for h in header]] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r]
                                          for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)
