"""Match a plane-cut partial shape back onto its full shape.

Walks through one pair: generate the cut, compute both spectral bases,
solve for the functional map under each mask, refine the best one and
estimate which part of the full shape the partial shape covers.

Run with ``python demos/partial_to_full.py [seed]``.
"""

import sys

import numpy as np

from partialfm.bench.evaluate import PairCase, princeton_curve
from partialfm.bench.shapes import normalize_area, quadruped
from partialfm.bench.synth import gen_cut
from partialfm.fmap import MASK_KINDS, estimate_rank, fmap_to_p2p
from partialfm.mesh import geodesic_matrix
from partialfm.pipeline import descriptor_pair, match
from partialfm.refine import estimate_overlap_axiomatic, iou, partial_zoomout
from partialfm.spectral import mesh_basis

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
k = 60

full = normalize_area(quadruped(spacing=0.08))
pair = gen_cut(full, seed, 0.35, base="quadruped")
print(f"full shape: {full.n_vertices} vertices; partial shape: {pair.part.n_vertices} vertices, "
      f"{pair.partiality:.1%} of the area removed")

bf, bp = mesh_basis(full, k), mesh_basis(pair.part, k)
case = PairCase(pair, bf, bp, geodesic_matrix(full))
r = estimate_rank(bp.evals, bf.evals)
print(f"the first {r} partial eigenvalues fall below the largest full one, "
      f"so about {r} of {k} rows of the map carry information\n")

print("mean geodesic error (fraction of sqrt(area)) per mask:")
for source in ("perfect", "wks"):
    fs, ft = descriptor_pair(source, bf, bp, m=64, seed=seed, meshes=(full, pair.part), gt=pair.gt)
    row = []
    for kind in MASK_KINDS:
        _, p2p = match(bf, bp, fs, ft, kind)
        row.append(f"{kind} {case.errors(p2p).mean():.4f}")
    print(f"  {source:8s}", "  ".join(row))

# the ideal features give a map worth refining and an overlap worth estimating
fs, ft = descriptor_pair("perfect", bf, bp, m=64, seed=seed, meshes=(full, pair.part), gt=pair.gt)
C, p2p = match(bf, bp, fs, ft, "resolvent")
coarse = C.C[:20, :20]
C_ref = partial_zoomout(coarse, bf, bp, steps=8, k_start=20, k_end=k)
before = case.errors(fmap_to_p2p(coarse, bf, bp)).mean()
after = case.errors(fmap_to_p2p(C_ref, bf, bp)).mean()
print(f"\nrefinement from the 20x20 corner: {before:.4f} -> {after:.4f} "
      f"(final map {C_ref.C.shape[0]}x{C_ref.C.shape[1]})")

region, _ = estimate_overlap_axiomatic(C, bf, bp, p2p, fs, ft, full, pair.part)
print(f"estimated overlap covers {region.mask.mean():.1%} of the full vertices, "
      f"IOU with the truth {iou(region, pair.gt_overlap_on_full, full.vertex_mass):.3f}")

curve = princeton_curve(p2p, pair.gt, full, thresholds=[0.02, 0.05, 0.1])
print("fraction of matches within 0.02 / 0.05 / 0.1:",
      " / ".join(f"{f:.3f}" for f in curve.fraction))
print("worst match:", f"{np.max(curve.errors):.3f}")
