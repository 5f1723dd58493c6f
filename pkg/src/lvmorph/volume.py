"""Scalar volumes and the volume -> smooth surface mesh pipeline."""
from __future__ import annotations

import json
import os

import numpy as np
from scipy import ndimage, sparse
from skimage.measure import marching_cubes

from .mesh import AREA_TOL, TriangleMesh, _face_cross, _unit_rows, unique_edges

_DTYPES = {"float32": "<f4", "uint16": "<u2"}


class VolumeError(ValueError):
    pass


class ScalarVolume:
    """Regular grid of intensities; ``values`` are stored x-fastest.

    ``array`` exposes the samples as a read-only (nz, ny, nx) view, so
    ``array[k, j, i]`` sits at ``origin + spacing * (i, j, k)`` mm.
    """

    def __init__(self, dims, spacing, origin, values):
        dims = tuple(int(d) for d in dims)
        spacing = tuple(float(s) for s in np.broadcast_to(spacing, (3,)))
        origin = tuple(float(o) for o in np.broadcast_to(origin, (3,)))
        if len(dims) != 3 or min(dims) < 2:
            raise VolumeError(f"dims must be three sizes >= 2, got {dims}")
        if min(spacing) <= 0:
            raise VolumeError("spacing must be positive")
        values = np.array(values, dtype=np.float64).ravel()
        nx, ny, nz = dims
        if values.size != nx * ny * nz:
            raise VolumeError(
                f"expected {nx * ny * nz} values for dims {dims}, got {values.size}")
        values.setflags(write=False)
        self.dims, self.spacing, self.origin = dims, spacing, origin
        self.values = values

    @property
    def array(self):
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx)

    @classmethod
    def from_array(cls, array_zyx, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        a = np.asarray(array_zyx)
        nz, ny, nx = a.shape
        return cls((nx, ny, nz), spacing, origin, a.ravel())

    def with_array(self, array_zyx):
        return ScalarVolume(self.dims, self.spacing, self.origin, np.asarray(array_zyx).ravel())

    def grid_points(self):
        nx, ny, nz = self.dims
        axes = [self.origin[i] + self.spacing[i] * np.arange(n)
                for i, n in enumerate((nx, ny, nz))]
        zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def read_volume(raw_path, sidecar_path=None):
    """Read a little-endian raw volume plus its JSON sidecar."""
    if sidecar_path is None:
        sidecar_path = os.path.splitext(str(raw_path))[0] + ".json"
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    missing = {"dims", "spacing", "origin", "dtype"} - set(meta)
    if missing:
        raise VolumeError(f"{sidecar_path}: sidecar lacks {sorted(missing)}")
    if meta["dtype"] not in _DTYPES:
        raise VolumeError(f"dtype must be one of {sorted(_DTYPES)}, got {meta['dtype']!r}")
    data = np.fromfile(raw_path, dtype=_DTYPES[meta["dtype"]])
    return ScalarVolume(meta["dims"], meta["spacing"], meta["origin"], data)


def write_volume(volume, raw_path, dtype="float32", sidecar_path=None):
    if dtype not in _DTYPES:
        raise VolumeError(f"dtype must be one of {sorted(_DTYPES)}")
    if sidecar_path is None:
        sidecar_path = os.path.splitext(str(raw_path))[0] + ".json"
    values = volume.values
    if dtype == "uint16":
        values = np.clip(np.rint(values), 0, 65535)
    values.astype(_DTYPES[dtype]).tofile(raw_path)
    meta = {"dims": list(volume.dims), "spacing": list(volume.spacing),
            "origin": list(volume.origin), "dtype": dtype}
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2)


def median_filter(volume, kernel=(7, 7, 1)):
    """Windowed median with clamped borders; ``kernel`` is (kx, ky, kz).

    The default is a 7x7 in-plane window applied slice by slice.
    """
    kernel = tuple(int(k) for k in np.broadcast_to(kernel, (3,)))
    if any(k < 1 or k % 2 == 0 for k in kernel):
        raise VolumeError(f"kernel sizes must be odd and >= 1, got {kernel}")
    kx, ky, kz = kernel
    out = ndimage.median_filter(volume.array, size=(kz, ky, kx), mode="nearest")
    return volume.with_array(out)


def _weld(verts, faces, tol=1e-7):
    key = np.round(verts / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = verts[first[order]]
    faces = rank[inverse[faces]]
    return verts, faces


def _drop_bad_faces(verts, faces):
    ok = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
          & (faces[:, 0] != faces[:, 2]))
    faces = faces[ok]
    if len(faces):
        area = 0.5 * np.linalg.norm(_face_cross(verts, faces), axis=1)
        faces = faces[area > AREA_TOL]
    used = np.unique(faces)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[faces]


def extract_isosurface(volume, iso_value):
    """Marching-cubes surface at ``iso_value`` in physical (mm) coordinates.

    Returns an empty mesh when the level does not cross the data range.
    """

    a = volume.array
    if not (a.min() < iso_value < a.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # skimage indexes (x, y, z) when given the transposed array
    verts, faces, _, _ = marching_cubes(
        np.ascontiguousarray(a.transpose(2, 1, 0)), level=float(iso_value),
        spacing=volume.spacing, method="lewiner", allow_degenerate=False)
    verts = verts.astype(np.float64) + np.asarray(volume.origin)
    verts, faces = _weld(verts, faces.astype(np.int64))
    verts, faces = _drop_bad_faces(verts, faces)
    return TriangleMesh(verts, faces)


def _face_adjacency(faces):
    """Sparse F x F matrix linking faces that share an edge."""
    f = len(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    owner = np.tile(np.arange(f), 3)
    _, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    inv_s, own_s = inv[order], owner[order]
    same = inv_s[1:] == inv_s[:-1]
    a, b = own_s[:-1][same], own_s[1:][same]
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(f, f))


def smooth_mesh(mesh, normal_iterations=10, vertex_iterations=10):
    """Mean face-normal filtering followed by vertex position updates.

    Stage one replaces each face normal by the area-weighted mean of its own
    and its edge-adjacent faces' normals. Stage two moves vertices so faces
    turn toward the filtered normals, with step ``1 / (3 * max degree)``.
    """
    if normal_iterations < 0 or vertex_iterations < 0:
        raise ValueError("iteration counts must be >= 0")
    if (normal_iterations == 0 and vertex_iterations == 0) or mesh.n_faces == 0:
        return mesh
    faces = mesh.faces
    v = mesh.vertices.copy()
    cross = _face_cross(v, faces)
    area = 0.5 * np.linalg.norm(cross, axis=1)
    normals = _unit_rows(cross)
    w = _face_adjacency(faces) + sparse.identity(len(faces), format="csr")
    w = w @ sparse.diags(area)
    for _ in range(normal_iterations):
        normals = _unit_rows(w @ normals)

    edges, _ = unique_edges(faces)
    degree = np.bincount(edges.ravel(), minlength=len(v))
    step = 1.0 / (3.0 * degree.max())
    heads = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2],
                            faces[:, 0], faces[:, 1], faces[:, 2]])
    tails = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0],
                            faces[:, 2], faces[:, 0], faces[:, 1]])
    n6 = np.tile(normals, (6, 1))
    for _ in range(vertex_iterations):
        proj = np.einsum("ij,ij->i", n6, v[tails] - v[heads])
        delta = np.zeros_like(v)
        np.add.at(delta, heads, n6 * proj[:, None])
        v += step * delta
    return mesh.with_vertices(v)


def volume_to_mesh(volume, iso_value, kernel=(7, 7, 1), normal_iterations=10,
                   vertex_iterations=10):
    """Median filter, isosurface, then smoothing."""
    filtered = median_filter(volume, kernel)
    surface = extract_isosurface(filtered, iso_value)
    return smooth_mesh(surface, normal_iterations, vertex_iterations)
