"""Triangle meshes, their discrete operators, geodesics and sampling.

A :class:`TriMesh` is immutable once built. Construction validates the face
indices, drops degenerate triangles (with a warning) and computes the lumped
vertex masses, so every downstream operator can assume a clean mesh.
"""

import hashlib
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)

# faces with area below DEGENERATE_RTOL * bbox_diag**2 are dropped
DEGENERATE_RTOL = 1e-12


class MeshError(ValueError):
    """Base class for mesh related failures."""


class MeshParseError(MeshError):
    """The file could not be parsed as a mesh."""


class MeshValidationError(MeshError):
    """The mesh content is inconsistent (bad indices, isolated vertices...)."""


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def face_areas(vertices, faces):
    """Area of every triangle."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=np.int64)
    if len(f) == 0:
        return np.zeros(0)
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cross, axis=1)


class TriMesh:
    """A validated triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions.
    faces : array_like, shape (f, 3)
        Vertex index triples.
    drop_degenerate : bool
        Drop zero-area faces with a warning (default). If False, a degenerate
        face raises :class:`MeshValidationError`.

    Attributes
    ----------
    vertices, faces : ndarray
        Read-only arrays.
    vertex_mass : ndarray, shape (n,)
        One third of the area of the incident triangles; sums to the total
        surface area.
    dropped_faces : int
        Number of degenerate faces removed during validation.
    """

    def __init__(self, vertices, faces, drop_degenerate=True):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshValidationError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.size == 0:
            f = np.zeros((0, 3), dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshValidationError(f"faces must have shape (f, 3), got {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise MeshValidationError("face indices must be integers")
        f = f.astype(np.int64)
        if not np.all(np.isfinite(v)):
            raise MeshValidationError("vertex coordinates must be finite")
        n = len(v)
        if len(f) and (f.min() < 0 or f.max() >= n):
            bad = int(f.max()) if f.max() >= n else int(f.min())
            raise MeshValidationError(
                f"face references vertex {bad} but the mesh has {n} vertices")
        if len(f) == 0:
            raise MeshValidationError("mesh has no faces")

        areas = face_areas(v, f)
        diag = np.linalg.norm(v.max(axis=0) - v.min(axis=0))
        degenerate = areas < DEGENERATE_RTOL * diag ** 2
        # repeated indices are degenerate whatever the coordinates
        degenerate |= (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        n_bad = int(degenerate.sum())
        if n_bad:
            if not drop_degenerate:
                raise MeshValidationError(f"{n_bad} degenerate face(s)")
            warnings.warn(f"dropping {n_bad} degenerate face(s)", stacklevel=2)
            f = f[~degenerate]
            areas = areas[~degenerate]
            if len(f) == 0:
                raise MeshValidationError("every face is degenerate")

        mass = np.bincount(f.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
        if np.any(mass <= 0):
            iso = np.flatnonzero(mass <= 0)
            raise MeshValidationError(
                f"{len(iso)} vertex(es) not used by any face, e.g. {iso[:5].tolist()}")

        self.vertices = _readonly(v)
        self.faces = _readonly(f)
        self.vertex_mass = _readonly(mass)
        self.face_area = _readonly(areas)
        self.dropped_faces = n_bad

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def area(self):
        return float(self.face_area.sum())

    def edges(self):
        """Unique undirected edges as an (e, 2) array with ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def mean_edge_length(self):
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def content_hash(self):
        """SHA-256 of the vertex and face arrays, used to key caches."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()

    def transformed(self, vertices):
        """Same connectivity with new vertex positions."""
        return TriMesh(vertices, self.faces)

    def submesh(self, keep):
        """Mesh induced by the faces whose three vertices are all kept.

        Returns the new mesh and the original index of every new vertex.
        Vertices left without faces are discarded.
        """
        keep = np.asarray(keep, dtype=bool)
        fmask = keep[self.faces].all(axis=1)
        faces = self.faces[fmask]
        used = np.unique(faces)
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriMesh(self.vertices[used], remap[faces]), used

    def face_components(self):
        """Connected component label of every vertex (via shared edges)."""
        e = self.edges()
        n = self.n_vertices
        adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return csgraph.connected_components(adj, directed=False)[1]

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces}, area={self.area:.6g})"


# --------------------------------------------------------------------------
# I/O

def _data_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = list(_data_lines(text))
    if not lines or not lines[0].startswith("OFF"):
        raise MeshParseError("missing OFF header")
    head = lines[0][3:].split()
    body = lines[1:]
    if not head:
        if not body:
            raise MeshParseError("missing OFF counts")
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise MeshParseError(f"bad OFF counts line: {' '.join(head)!r}") from None
    if len(body) < nv + nf:
        raise MeshParseError(f"OFF declares {nv} vertices and {nf} faces, found {len(body)} data lines")
    try:
        verts = np.array([[float(x) for x in line.split()[:3]] for line in body[:nv]])
    except ValueError as err:
        raise MeshParseError(f"bad vertex line: {err}") from None
    if nv and verts.shape != (nv, 3):
        raise MeshParseError("every vertex needs three coordinates")
    faces = []
    for line in body[nv:nv + nf]:
        tok = line.split()
        try:
            k = int(tok[0])
            idx = [int(t) for t in tok[1:1 + k]]
        except ValueError:
            raise MeshParseError(f"bad face line: {line!r}") from None
        if k != 3 or len(idx) != 3:
            raise MeshParseError(f"only triangles are supported, got {line!r}")
        faces.append(idx)
    return verts.reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError("missing ply magic line")
    elements = []  # [name, count, [props]]
    i = 1
    fmt = None
    while True:
        if i >= len(lines):
            raise MeshParseError("unterminated PLY header")
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError("property before element")
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            break
    if fmt != "ascii":
        raise MeshParseError(f"only ascii PLY is supported, got format {fmt!r}")
    body = [ln for ln in lines[i:] if ln.strip()]
    verts, faces = None, None
    pos = 0
    for name, count, props in elements:
        chunk = body[pos:pos + count]
        if len(chunk) < count:
            raise MeshParseError(f"PLY element {name!r} truncated")
        pos += count
        if name == "vertex":
            try:
                cols = [props.index(c) for c in ("x", "y", "z")]
            except ValueError:
                raise MeshParseError("PLY vertex element lacks x/y/z") from None
            try:
                rows = [line.split() for line in chunk]
                verts = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(-1, 3)
            except (ValueError, IndexError) as err:
                raise MeshParseError(f"bad PLY vertex line: {err}") from None
        elif name == "face":
            out = []
            for line in chunk:
                tok = line.split()
                try:
                    k = int(tok[0])
                    idx = [int(t) for t in tok[1:1 + k]]
                except ValueError:
                    raise MeshParseError(f"bad PLY face line: {line!r}") from None
                if k != 3 or len(idx) != 3:
                    raise MeshParseError(f"only triangles are supported, got {line!r}")
                out.append(idx)
            faces = np.array(out, dtype=np.int64).reshape(-1, 3)
    if verts is None or faces is None:
        raise MeshParseError("PLY needs vertex and face elements")
    return verts, faces


def _format_of(path, format):
    if format is not None:
        fmt = format.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("off", "ply"):
        raise MeshParseError(f"unsupported mesh format {fmt!r} (OFF or ascii PLY)")
    return fmt


def load_mesh(path, format=None, drop_degenerate=True):
    """Read an ASCII OFF or ASCII PLY triangle mesh.

    Raises
    ------
    MeshParseError
        Malformed file.
    MeshValidationError
        Out-of-range indices or unused vertices.
    """
    fmt = _format_of(path, format)
    text = Path(path).read_text()
    v, f = _parse_off(text) if fmt == "off" else _parse_ply(text)
    return TriMesh(v, f, drop_degenerate=drop_degenerate)


def save_mesh(path, mesh, format=None, comments=()):
    """Write ``mesh`` as ASCII OFF or PLY, with optional header comments."""
    fmt = _format_of(path, format)
    v, f = mesh.vertices, mesh.faces
    out = []
    if fmt == "off":
        out.append("OFF")
        out += [f"# {c}" for c in comments]
        out.append(f"{len(v)} {len(f)} 0")
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in f.tolist()]
    else:
        out += ["ply", "format ascii 1.0"]
        out += [f"comment {c}" for c in comments]
        out += [f"element vertex {len(v)}", "property double x", "property double y",
                "property double z", f"element face {len(f)}",
                "property list uchar int vertex_indices", "end_header"]
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in f.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# operators

def cotan_laplacian(mesh, clamp_negative=False):
    """Cotangent stiffness matrix and lumped mass matrix.

    Returns ``(L, M)`` with ``L`` symmetric positive semi-definite in CSR
    form (off-diagonal ``-(cot a + cot b) / 2``, zero row sums) and ``M`` the
    diagonal matrix of vertex masses. Negative cotangent weights are kept
    unless ``clamp_negative`` is set.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = f[:, (k + 1) % 3], f[:, (k + 2) % 3], f[:, k]
        u, w = v[i] - v[o], v[j] - v[o]
        cot = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
        rows += [i, j]
        cols += [j, i]
        vals += [-0.5 * cot, -0.5 * cot]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    W = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    if clamp_negative:
        W.data = np.minimum(W.data, 0.0)
    W.sum_duplicates()
    diag = -np.asarray(W.sum(axis=1)).ravel()
    L = (W + sparse.diags(diag)).tocsr()
    # exact symmetry regardless of summation order
    L = ((L + L.T) * 0.5).tocsr()
    M = sparse.diags(np.asarray(mesh.vertex_mass, dtype=float)).tocsr()
    return L, M


def edge_graph(mesh):
    """Sparse symmetric adjacency weighted by Euclidean edge length."""
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    return (g + g.T).tocsr()


def geodesic_matrix_from(mesh, source):
    """Edge-graph (Dijkstra) distance from ``source`` to every vertex.

    Graph distances upper-bound the smooth surface geodesic. Vertices not
    reachable from ``source`` get ``inf`` and trigger a warning.
    """
    d = geodesic_matrix(mesh, [source])[0]
    return d


def geodesic_matrix(mesh, sources=None, graph=None):
    """Edge-graph distances from each of ``sources`` (all vertices if None).

    Returns an array of shape ``(len(sources), n)``.
    """
    n = mesh.n_vertices
    if sources is None:
        sources = np.arange(n)
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if len(sources) and (sources.min() < 0 or sources.max() >= n):
        raise IndexError(f"source vertex out of range for {n} vertices")
    g = edge_graph(mesh) if graph is None else graph
    d = csgraph.dijkstra(g, directed=False, indices=sources)
    d = np.atleast_2d(d)
    if np.isinf(d).any():
        warnings.warn(
            f"mesh graph is disconnected: {int(np.isinf(d).sum())} unreachable "
            "vertex distance(s) set to inf", stacklevel=2)
    return d


# --------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class SampleSet:
    """Farthest point samples and the nearest sample of every point.

    ``assignment[v]`` is the vertex index (a member of ``indices``) of the
    sample closest to ``v``.
    """
    indices: np.ndarray
    assignment: np.ndarray

    def __len__(self):
        return len(self.indices)


def farthest_point_sample(points, count, seed_vertex=0):
    """Greedy farthest point sampling under Euclidean distance.

    Parameters
    ----------
    points : TriMesh or array_like, shape (n, 3)
    count : int
        Number of samples, ``1 <= count <= n``.
    seed_vertex : int
        First sample.

    Ties in the max-min distance go to the lowest vertex index, which makes
    the result a deterministic function of the seed.
    """
    x = points.vertices if isinstance(points, TriMesh) else np.asarray(points, dtype=float)
    n = len(x)
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    if not 0 <= seed_vertex < n:
        raise IndexError(f"seed_vertex {seed_vertex} out of range")
    idx = np.empty(count, dtype=np.int64)
    idx[0] = seed_vertex
    mind = np.linalg.norm(x - x[seed_vertex], axis=1)
    nearest = np.zeros(n, dtype=np.int64)
    for s in range(1, count):
        nxt = int(np.argmax(mind))
        idx[s] = nxt
        d = np.linalg.norm(x - x[nxt], axis=1)
        closer = d < mind
        nearest[closer] = s
        mind = np.where(closer, d, mind)
    assignment = idx[nearest]
    idx.setflags(write=False)
    assignment.setflags(write=False)
    return SampleSet(idx, assignment)
