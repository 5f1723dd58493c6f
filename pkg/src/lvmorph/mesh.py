"""Indexed triangle meshes: validation, reports, ASCII I/O and transforms."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

AREA_TOL = 1e-12
ROTATION_TOL = 1e-9


class MeshError(ValueError):
    """Raised when mesh data violates the TriangleMesh contract."""


class MeshParseError(MeshError):
    """Raised when a mesh file cannot be parsed."""


def _face_cross(vertices, faces):
    v0 = vertices[faces[:, 0]]
    return np.cross(vertices[faces[:, 1]] - v0, vertices[faces[:, 2]] - v0)


def _unit_rows(a, fallback=(0.0, 0.0, 1.0)):
    norms = np.linalg.norm(a, axis=1)
    out = np.empty_like(a)
    good = norms > 0
    out[good] = a[good] / norms[good, None]
    out[~good] = fallback
    return out


class TriangleMesh:
    """Immutable triangle surface with outward per-vertex normals.

    Faces are re-wound on construction (``orient=True``) so that closed
    meshes enclose a positive signed volume; open meshes are flipped when
    most face normals point toward the vertex centroid. Vertices that belong
    to no face get the normal ``(0, 0, 1)``.
    """

    def __init__(self, vertices, faces, orient=True):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        n = len(vertices)
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                bad = int(faces.max()) if faces.max() >= n else int(faces.min())
                raise MeshError(
                    f"face index {bad} out of range for {n} vertices")
            if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                      | (faces[:, 0] == faces[:, 2])):
                raise MeshError("degenerate face with repeated vertex index")
            area = 0.5 * np.linalg.norm(_face_cross(vertices, faces), axis=1)
            if np.any(area <= AREA_TOL):
                i = int(np.argmin(area))
                raise MeshError(f"face {i} has area {area[i]:.3g} <= {AREA_TOL}")
        if orient and faces.size and self._needs_flip(vertices, faces):
            faces = faces[:, ::-1].copy()
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self._vertices = vertices
        self._faces = faces
        self._normals = None
        self._edges = None

    @staticmethod
    def _needs_flip(vertices, faces):
        edges = np.sort(np.concatenate(
            [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        cross = _face_cross(vertices, faces)
        if np.all(counts == 2):
            volume = np.einsum("ij,ij->", vertices[faces[:, 0]], cross) / 6.0
            return volume < 0
        centroid = vertices.mean(axis=0)
        centers = vertices[faces].mean(axis=1)
        outward = np.einsum("ij,ij->i", cross, centers - centroid) > 0
        return outward.sum() < len(faces) / 2.0

    @property
    def vertices(self):
        return self._vertices

    @property
    def faces(self):
        return self._faces

    @property
    def n_vertices(self):
        return len(self._vertices)

    @property
    def n_faces(self):
        return len(self._faces)

    @property
    def face_normals(self):
        return _unit_rows(_face_cross(self._vertices, self._faces))

    @property
    def face_areas(self):
        return 0.5 * np.linalg.norm(_face_cross(self._vertices, self._faces), axis=1)

    @property
    def normals(self):
        """Area-weighted unit vertex normals."""
        if self._normals is None:
            acc = np.zeros_like(self._vertices)
            if self.n_faces:
                cross = _face_cross(self._vertices, self._faces)
                for k in range(3):
                    np.add.at(acc, self._faces[:, k], cross)
            normals = _unit_rows(acc)
            normals.setflags(write=False)
            self._normals = normals
        return self._normals

    @property
    def edges(self):
        """Unique undirected edges as sorted index pairs, shape (E, 2)."""
        if self._edges is None:
            self._edges = unique_edges(self._faces)[0]
        return self._edges

    def with_vertices(self, vertices):
        """Same connectivity, new positions (faces are not re-oriented)."""
        return TriangleMesh(vertices, self._faces, orient=False)

    def __repr__(self):
        return f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def unique_edges(faces):
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.sort(np.concatenate(
        [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def vertex_adjacency(mesh):
    """Sparse symmetric vertex adjacency (CSR) weighted by edge length."""
    from scipy import sparse

    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    a = sparse.coo_matrix((np.concatenate([w, w]),
                           (np.concatenate([e[:, 0], e[:, 1]]),
                            np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return a.tocsr()


@dataclass(frozen=True)
class MeshReport:
    n_vertices: int
    n_faces: int
    n_edges: int
    euler_characteristic: int
    boundary_edges: int
    nonmanifold_edges: int
    bbox_min: tuple
    bbox_max: tuple

    @property
    def is_closed(self):
        return self.boundary_edges == 0 and self.nonmanifold_edges == 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["bbox_min"] = list(self.bbox_min)
        d["bbox_max"] = list(self.bbox_max)
        return d


def mesh_report(mesh):
    edges, counts = unique_edges(mesh.faces)
    V, E, F = mesh.n_vertices, len(edges), mesh.n_faces
    if V:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    else:
        lo = hi = np.zeros(3)
    return MeshReport(
        n_vertices=V, n_faces=F, n_edges=E, euler_characteristic=V - E + F,
        boundary_edges=int(np.sum(counts == 1)),
        nonmanifold_edges=int(np.sum(counts > 2)),
        bbox_min=tuple(float(x) for x in lo), bbox_max=tuple(float(x) for x in hi))


def is_edge_manifold(mesh):
    return mesh_report(mesh).nonmanifold_edges == 0


# --------------------------------------------------------------------- I/O

_FORMATS = ("off", "ply", "obj")


def _resolve_format(path, fmt):
    if fmt is None:
        fmt = os.path.splitext(str(path))[1].lstrip(".")
    fmt = fmt.lower()
    if fmt not in _FORMATS:
        raise MeshParseError(f"unsupported mesh format {fmt!r}; use OFF, PLY or OBJ")
    return fmt


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = list(_tokens(text))
    if not lines or not lines[0].startswith("OFF"):
        raise MeshParseError("missing OFF header")
    rest = lines[0][3:].split()
    lines = lines[1:]
    if not rest:
        if not lines:
            raise MeshParseError("missing OFF counts line")
        rest, lines = lines[0].split(), lines[1:]
    nv, nf = int(rest[0]), int(rest[1])
    if len(lines) < nv + nf:
        raise MeshParseError(f"expected {nv} vertices and {nf} faces, file is short")
    verts = [[float(x) for x in lines[i].split()[:3]] for i in range(nv)]
    faces = []
    for line in lines[nv:nv + nf]:
        parts = line.split()
        if int(parts[0]) != 3:
            raise MeshParseError("only triangular faces are supported")
        faces.append([int(x) for x in parts[1:4]])
    return verts, faces


def _parse_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError("missing ply magic")
    nv = nf = None
    vprops = []
    current = None
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshParseError(f"binary PLY ({parts[1]}) is not supported; convert to ascii")
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                nv = int(parts[2])
            elif current == "face":
                nf = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vprops.append(parts[-1])
        elif parts[0] == "end_header":
            break
    else:
        raise MeshParseError("missing end_header")
    if nv is None or nf is None:
        raise MeshParseError("PLY needs vertex and face elements")
    try:
        xi, yi, zi = (vprops.index(c) for c in "xyz")
    except ValueError:
        raise MeshParseError("PLY vertex element lacks x/y/z") from None
    body = [ln for ln in lines[i:] if ln.strip()]
    if len(body) < nv + nf:
        raise MeshParseError("PLY body shorter than declared element counts")
    verts = []
    for ln in body[:nv]:
        p = ln.split()
        verts.append([float(p[xi]), float(p[yi]), float(p[zi])])
    faces = []
    for ln in body[nv:nv + nf]:
        p = ln.split()
        if int(p[0]) != 3:
            raise MeshParseError("only triangular faces are supported")
        faces.append([int(x) for x in p[1:4]])
    return verts, faces


def _parse_obj(text):
    verts, faces = [], []
    for line in _tokens(text):
        parts = line.split()
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise MeshParseError("only triangular faces are supported")
            faces.append([k - 1 if k > 0 else len(verts) + k for k in idx])
    return verts, faces


def load_mesh(path, fmt=None):
    """Read an ASCII OFF/PLY/OBJ file into a validated TriangleMesh."""
    fmt = _resolve_format(path, fmt)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise MeshParseError(f"{path}: not an ASCII {fmt.upper()} file") from None
    parser = {"off": _parse_off, "ply": _parse_ply, "obj": _parse_obj}[fmt]
    try:
        verts, faces = parser(text)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshParseError):
            raise
        raise MeshParseError(f"{path}: malformed {fmt.upper()}: {exc}") from exc
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3), orient=False)


def save_mesh(mesh, path, fmt=None):
    fmt = _resolve_format(path, fmt)
    v, f = mesh.vertices, mesh.faces
    out = []
    if fmt == "off":
        out.append("OFF")
        out.append(f"{len(v)} {len(f)} 0")
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in f.tolist()]
    elif fmt == "ply":
        out += ["ply", "format ascii 1.0", f"element vertex {len(v)}",
                "property double x", "property double y", "property double z",
                f"element face {len(f)}", "property list uchar int vertex_indices",
                "end_header"]
        out += [f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
        out += [f"3 {a} {b} {c}" for a, b, c in f.tolist()]
    else:
        out += [f"v {x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f.tolist()]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


# --------------------------------------------------------------- transforms

def rotation_matrix(axis, angle):
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def check_rotation(rotation):
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise MeshError("rotation must be a 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL or np.linalg.det(r) <= 0:
        raise MeshError("rotation must be orthonormal with determinant +1")
    return r


def rigid_transform(mesh, rotation=None, translation=None, scale=1.0):
    """Map vertices by ``scale * R @ v + t``; faces are kept as-is."""
    r = np.eye(3) if rotation is None else check_rotation(rotation)
    t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
    if not scale > 0:
        raise MeshError("scale must be positive")
    if rotation is None and translation is None and scale == 1.0:
        return mesh
    return mesh.with_vertices(scale * mesh.vertices @ r.T + t)


# ----------------------------------------------------------- test surfaces

def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron; ``10 * 4**s + 2`` vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(v, np.array(faces))


def grid_patch(nx=10, ny=10, spacing=1.0, height=None):
    """Triangulated planar (or height-field) patch in the XY plane."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    zs = np.zeros_like(xs) if height is None else height(xs, ys)
    v = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
    idx = np.arange(nx * ny).reshape(nx, ny)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(v, faces, orient=False)


def torus(major=3.0, minor=1.0, n_major=96, n_minor=48):
    """Closed torus around the z axis."""
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    ring = major + minor * np.cos(ww)
    v = np.column_stack([(ring * np.cos(uu)).ravel(), (ring * np.sin(uu)).ravel(),
                         (minor * np.sin(ww)).ravel()])
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    nxt_i = np.roll(idx, -1, axis=0)
    a, b = idx.ravel(), nxt_i.ravel()
    c, d = np.roll(nxt_i, -1, axis=1).ravel(), np.roll(idx, -1, axis=1).ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(v, faces)
