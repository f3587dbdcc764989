"""Analytic base shapes so benchmarks run without external datasets."""

import numpy as np
from skimage import measure

from ..mesh import TriMesh


def icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron projected onto a sphere.

    ``subdivisions=3`` gives 642 vertices, ``4`` gives 2562.
    """
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
             [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
             [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(radius * np.array(verts), np.array(faces))


def _segment_sdf(p, a, b, r):
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - r


def _smooth_union(d1, d2, k):
    h = np.clip(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0)
    return d2 * (1 - h) + d1 * h - k * h * (1 - h)


def _relax(mesh, iterations=5, step=0.5):
    """Tangential Laplacian smoothing: evens out marching-cubes triangles."""
    v = mesh.vertices.copy()
    f = mesh.faces
    n = len(v)
    e = mesh.edges()
    deg = np.bincount(e.ravel(), minlength=n).astype(float)
    for _ in range(iterations):
        nb = np.zeros_like(v)
        np.add.at(nb, e[:, 0], v[e[:, 1]])
        np.add.at(nb, e[:, 1], v[e[:, 0]])
        delta = nb / deg[:, None] - v
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        vn = np.zeros_like(v)
        for k in range(3):
            np.add.at(vn, f[:, k], fn)
        vn /= np.linalg.norm(vn, axis=1, keepdims=True)
        delta -= np.einsum("ij,ij->i", delta, vn)[:, None] * vn
        v = v + step * delta
    return TriMesh(v, f)


def _weld(verts, faces, tol):
    """Collapse edges shorter than ``tol`` and drop the resulting slivers."""
    n = len(verts)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    short = np.linalg.norm(verts[e[:, 0]] - verts[e[:, 1]], axis=1) < tol
    for a, b in e[short]:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    root = np.array([find(i) for i in range(n)])
    faces = root[faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[ok]
    # identical triangles with opposite winding come from collapsed slivers
    key = np.sort(faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    faces = faces[np.sort(first[counts == 1])]
    used, inv = np.unique(faces, return_inverse=True)
    pos = np.zeros((len(used), 3))
    # welded vertices take the mean position of their cluster
    cnt = np.zeros(len(used))
    idx = np.searchsorted(used, root)
    valid = np.isin(root, used)
    np.add.at(pos, idx[valid], verts[valid])
    np.add.at(cnt, idx[valid], 1)
    return pos / cnt[:, None], inv.reshape(-1, 3)


def _implicit_mesh(sdf, lo, hi, spacing):
    axes = [np.arange(l, h + spacing, spacing) for l, h in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vol = sdf(grid.reshape(-1, 3)).reshape(grid.shape[:3])
    verts, faces, _, _ = measure.marching_cubes(vol, 0.0, spacing=(spacing,) * 3)
    verts = verts + np.asarray(lo)
    # marching cubes winds faces inward for a negative-inside field
    verts, faces = _weld(verts, faces[:, ::-1], 0.2 * spacing)
    mesh = TriMesh(verts, faces)
    comp = mesh.face_components()
    if comp.max() > 0:
        main = np.argmax(np.bincount(comp))
        mesh, _ = mesh.submesh(comp == main)
    return _relax(mesh)


def capsule(radius=0.5, length=1.5, spacing=0.1):
    """Capsule along the z axis (cylinder of ``length`` plus two caps)."""
    a, b = (0, 0, -length / 2), (0, 0, length / 2)
    pad = radius + 2 * spacing
    lo = (-pad, -pad, -length / 2 - pad)
    hi = (pad, pad, length / 2 + pad)
    return _implicit_mesh(lambda p: _segment_sdf(p, a, b, radius), lo, hi, spacing)


QUADRUPED_LIMBS = [
    # body, four legs, neck, head, tail: (start, end, radius)
    ((-0.7, 0.0, 0.0), (0.7, 0.0, 0.0), 0.32),
    ((0.5, 0.18, -0.1), (0.55, 0.22, -0.95), 0.11),
    ((0.5, -0.18, -0.1), (0.45, -0.22, -0.95), 0.11),
    ((-0.5, 0.18, -0.1), (-0.6, 0.2, -0.95), 0.12),
    ((-0.5, -0.18, -0.1), (-0.45, -0.24, -0.95), 0.12),
    ((0.7, 0.0, 0.1), (1.05, 0.0, 0.55), 0.14),
    ((1.05, 0.0, 0.55), (1.35, 0.0, 0.5), 0.17),
    ((-0.8, 0.0, 0.1), (-1.3, 0.0, 0.35), 0.06),
]


def quadruped(spacing=0.06, blend=0.08):
    """Four-legged animal built from smoothly fused capsules.

    Head and tail break the front/back symmetry; the body keeps its
    left/right reflection, like real animals.
    """
    def sdf(p):
        d = None
        for a, b, r in QUADRUPED_LIMBS:
            s = _segment_sdf(p, a, b, r)
            d = s if d is None else _smooth_union(d, s, blend)
        return d

    pts = np.array([q for a, b, _ in QUADRUPED_LIMBS for q in (a, b)])
    lo = pts.min(axis=0) - 0.45
    hi = pts.max(axis=0) + 0.45
    return _implicit_mesh(sdf, lo, hi, spacing)


def normalize_area(mesh, area=1.0):
    """Uniformly rescale ``mesh`` about its centroid to the given total area."""
    c = (mesh.vertices * mesh.vertex_mass[:, None]).sum(0) / mesh.area
    s = np.sqrt(area / mesh.area)
    return mesh.transformed((mesh.vertices - c) * s)


BASE_SHAPES = {
    "icosphere": lambda: icosphere(3),
    "capsule": lambda: capsule(),
    "quadruped": lambda: quadruped(),
}


def base_shape(name):
    """One of the built-in shapes, by name."""
    try:
        return BASE_SHAPES[name]()
    except KeyError:
        raise ValueError(f"unknown base shape {name!r}; choose from {sorted(BASE_SHAPES)}") from None
