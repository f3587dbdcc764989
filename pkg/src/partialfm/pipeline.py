"""Descriptor-to-correspondence pipeline shared by the benchmarks and the CLI."""

import numpy as np

from .descriptors import FeatureMatrix, heat_kernel_signature, perfect_features, \
    wave_kernel_signature, wks_energies, default_hks_times
from .fmap import DEFAULT_GAMMA, DEFAULT_LAMBDA, MaskSpec, build_mask, fmap_to_p2p, solve_fmap
from .spectral import project

FEATURE_SOURCES = ("wks", "hks", "perfect")


def descriptor_pair(source, basis_src, basis_tgt, m=64, seed=0, meshes=None, gt=None,
                    n_energies=128, normalize=True):
    """Features on the source and target shape for matching.

    ``wks`` and ``hks`` use the energy grid / diffusion times of the source
    spectrum on both shapes so that columns are comparable. ``perfect``
    needs ``meshes=(src_mesh, tgt_mesh)`` and the target-to-source ground
    truth ``gt``.
    """
    if source == "wks":
        e, s = wks_energies(basis_src.evals, n_energies)
        return (wave_kernel_signature(basis_src, energies=e, sigma=s, normalize=normalize),
                wave_kernel_signature(basis_tgt, energies=e, sigma=s, normalize=normalize))
    if source == "hks":
        t = default_hks_times(basis_src.evals)
        return (heat_kernel_signature(basis_src, t, normalize=normalize),
                heat_kernel_signature(basis_tgt, t, normalize=normalize))
    if source == "perfect":
        if meshes is None or gt is None:
            raise ValueError("perfect features need both meshes and the ground-truth map")
        f_tgt, f_src = perfect_features(meshes[0], meshes[1], gt, m, seed, basis_full=basis_src)
        return f_src, f_tgt
    raise ValueError(f"unknown feature source {source!r}; choose from {FEATURE_SOURCES}")


def match(basis_src, basis_tgt, feat_src, feat_tgt, mask="resolvent", gamma=DEFAULT_GAMMA,
          lam=DEFAULT_LAMBDA, normalize_mask=False):
    """Solve for the functional map and convert it to a target-to-source point map."""
    Fs = feat_src.values if isinstance(feat_src, FeatureMatrix) else np.asarray(feat_src)
    Ft = feat_tgt.values if isinstance(feat_tgt, FeatureMatrix) else np.asarray(feat_tgt)
    A, B = project(basis_src, Fs), project(basis_tgt, Ft)
    M = build_mask(MaskSpec(mask, basis_src.evals, basis_tgt.evals, gamma, normalize=normalize_mask))
    C = solve_fmap(A, B, M, lam)
    return C, fmap_to_p2p(C, basis_src, basis_tgt)
