"""Features agree across a cut only after restriction to the shared region.

Perfect descriptors are identical at corresponding points. On a
partial-to-full pair this makes the spectral coefficients of the two
shapes satisfy the functional map equation up to truncation. Between two
partial shapes it does not: each shape sees parts of the descriptor
functions that the other does not have. Multiplying the features by the
indicator of the common region restores the equation. The numbers below
come from the same routines behind ``partialfm verify-theory``.
"""

from partialfm.bench.shapes import capsule, normalize_area
from partialfm.bench.synth import gen_cut, gen_p2p
from partialfm.spectral import mesh_basis
from partialfm.theory import check_partial_to_full, check_partial_to_partial, zero_feature_example

full = normalize_area(capsule())
bf = mesh_basis(full, 120)

cut = gen_cut(full, 0, 0.4)
r = check_partial_to_full(full, cut.part, cut.gt, basis_full=bf)
print(f"partial to full: residual {r.residual:.2e} with band-limited features, "
      f"{r.control:.2e} with rough features")

for overlap in (0.3, 0.5, 0.7):
    pp = gen_p2p(full, 1, overlap)
    r = check_partial_to_partial(pp.part, pp.part2, pp.p2p_gt())
    print(f"partial to partial, overlap {pp.overlap_fraction():.2f}: restricted residual "
          f"{r.residual:.2e}, unrestricted {r.control:.2e}")

a, f, b = zero_feature_example(full, cut.part, cut.gt, basis_full=bf)
print(f"\na function living only on the removed area: norm {f:.3f} on the full shape, "
      f"coefficients {a:.3f} there and {b:.1f} on the partial shape")
