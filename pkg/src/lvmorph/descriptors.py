"""Per-point surface descriptors and global shape signatures.

Local: principal curvatures (quadric fit), shape index, curvedness and
normal orientation. Contextual: a histogram of normalized geodesic
distances to the other sampled points of a segment. Together they form the
23-component point feature ``(I, C, theta, gcd_0..gcd_19)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .aha import N_SEGMENTS
from .mesh import TriangleMesh, vertex_adjacency

GCD_BINS = 20
N_SAMPLES = 500
MIN_NEIGHBORS = 5
FEATURE_NAMES = ["I", "C", "theta"] + [f"gcd_{i}" for i in range(GCD_BINS)]


class DescriptorError(ValueError):
    pass


# ---------------------------------------------------------------- curvature

@dataclass(frozen=True)
class CurvatureField:
    k1: np.ndarray
    k2: np.ndarray
    valid: np.ndarray


def ring_neighborhoods(mesh, depth):
    """CSR matrix whose row i holds the vertices within ``depth`` edges of i."""
    a = vertex_adjacency(mesh)
    a.data[:] = 1.0
    reach = sparse.identity(mesh.n_vertices, format="csr")
    step = a + sparse.identity(mesh.n_vertices, format="csr")
    for _ in range(depth):
        reach = reach @ step
        reach.data[:] = 1.0
    reach = reach - sparse.identity(mesh.n_vertices, format="csr")
    reach.eliminate_zeros()
    return reach.tocsr()


def _tangent_frames(normals):
    helper = np.where(np.abs(normals[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(normals, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)
    return e1, e2


def estimate_curvatures(mesh, ring_depth=2):
    """Principal curvatures from a least-squares height quadric per vertex.

    Neighbours within ``ring_depth`` rings are expressed in the tangent frame
    of the vertex normal and fitted with ``h = a u^2 + b uv + c v^2``, where
    ``h`` is measured against the outward normal so that a sphere of radius
    r yields ``+1/r``. Vertices with fewer than five neighbours, or a
    singular fit, are marked invalid and get zero curvature.
    """
    if ring_depth < 1:
        raise DescriptorError("ring_depth must be >= 1")
    n = mesh.n_vertices
    nb = ring_neighborhoods(mesh, ring_depth)
    rows = np.repeat(np.arange(n), np.diff(nb.indptr))
    cols = nb.indices
    normals = mesh.normals
    e1, e2 = _tangent_frames(normals)
    d = mesh.vertices[cols] - mesh.vertices[rows]
    u = np.einsum("ij,ij->i", d, e1[rows])
    v = np.einsum("ij,ij->i", d, e2[rows])
    h = -np.einsum("ij,ij->i", d, normals[rows])
    basis = np.column_stack([u * u, u * v, v * v])

    gram = np.zeros((n, 3, 3))
    rhs = np.zeros((n, 3))
    np.add.at(gram, rows, basis[:, :, None] * basis[:, None, :])
    np.add.at(rhs, rows, basis * h[:, None])

    counts = np.diff(nb.indptr)
    scale = np.maximum(np.trace(gram, axis1=1, axis2=2), 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.linalg.cond(gram / scale[:, None, None])
    valid = (counts >= MIN_NEIGHBORS) & np.isfinite(cond) & (cond < 1e12)
    coef = np.zeros((n, 3))
    if valid.any():
        coef[valid] = np.linalg.solve(gram[valid], rhs[valid][:, :, None])[:, :, 0]
    a, b, c = coef.T
    mean = a + c
    root = np.sqrt((a - c) ** 2 + b ** 2)
    k1 = np.where(valid, mean + root, 0.0)
    k2 = np.where(valid, mean - root, 0.0)
    return CurvatureField(k1, k2, valid)


def shape_index(k1, k2, flat_tol=0.0):
    """Shape index in [0, 1]; 0 for convex caps, 1 for cups, 0.5 for saddles.

    Umbilic points take the limit value (0 when curving toward the outward
    normal, 1 otherwise) and flat points (curvedness <= ``flat_tol``) get 0.5.
    """
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    if np.any(k1 < k2):
        raise DescriptorError("shape_index requires k1 >= k2")
    num = k1 + k2
    den = k1 - k2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 - np.arctan(num / den) / np.pi
    umbilic = den == 0
    out = np.where(umbilic & (num > 0), 0.0, out)
    out = np.where(umbilic & (num < 0), 1.0, out)
    flat = (umbilic & (num == 0)) | (curvedness(k1, k2) <= flat_tol)
    out = np.where(flat, 0.5, out)
    return out[()] if out.ndim == 0 else out


def curvedness(k1, k2):
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    out = np.sqrt((k1 * k1 + k2 * k2) / 2.0)
    return out[()] if out.ndim == 0 else out


def normal_orientation(normals):
    """Unsigned angle (rad) between unit normals and the XZ plane."""
    n = np.asarray(normals, dtype=float)
    single = n.ndim == 1
    n = n.reshape(-1, 3)
    if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
        raise DescriptorError("normal_orientation needs unit-length normals")
    theta = np.arcsin(np.clip(np.abs(n[:, 1]), 0.0, 1.0))
    return theta[0] if single else theta


# ---------------------------------------------------------------- geodesics

def geodesic_distances(mesh, source, targets=None, graph=None, limit=np.inf):
    """Shortest edge-path lengths from ``source`` (Dijkstra on edge lengths).

    ``source`` may be a single vertex or a sequence; the result is then
    1-D or (n_sources, n_targets). Unreachable targets raise. ``limit``
    prunes the search; it must bound every requested distance.
    """
    if graph is None:
        graph = vertex_adjacency(mesh)
    scalar = np.ndim(source) == 0
    sources = np.atleast_1d(np.asarray(source, dtype=np.int64))
    dist = dijkstra(graph, directed=False, indices=sources, limit=limit)
    if targets is not None:
        targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
        dist = dist[:, targets]
    else:
        targets = np.arange(mesh.n_vertices)
    bad = np.argwhere(~np.isfinite(dist))
    if len(bad):
        i, j = bad[0]
        raise DescriptorError(
            f"vertex {int(targets[j])} is unreachable from vertex {int(sources[i])}")
    return dist[0] if scalar else dist


def gcd_histogram(distances, bins=GCD_BINS, max_distance=None):
    """Histogram of distances scaled to [0, 1] by ``max_distance``.

    Uniform bins, last bin closed on the right, frequencies sum to one.
    """
    d = np.asarray(distances, dtype=float).ravel()
    if d.size == 0 or not np.all(np.isfinite(d)):
        raise DescriptorError("gcd_histogram needs at least one finite distance")
    top = d.max() if max_distance is None else float(max_distance)
    if not top > 0:
        raise DescriptorError("gcd_histogram: all distances are zero")
    counts, _ = np.histogram(np.clip(d / top, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


# ----------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SampleSet:
    segment_id: int
    vertex_ids: np.ndarray
    seed: int


def segment_seed(seed, segment_id):
    return int(np.random.SeedSequence([int(seed), int(segment_id)]).generate_state(1)[0])


def sample_points(labeling, segment_id, n=N_SAMPLES, seed=0):
    """Draw up to ``n`` distinct vertices of a segment uniformly at random."""
    members = labeling.vertices_of(segment_id)
    if len(members) == 0:
        raise DescriptorError(f"segment {segment_id} has no vertices")
    if len(members) <= n:
        ids = members.copy()
    else:
        rng = np.random.default_rng(seed)
        ids = np.sort(rng.choice(members, size=n, replace=False))
    return SampleSet(int(segment_id), ids, int(seed))


# ----------------------------------------------------------- point features

@dataclass
class FeatureSet:
    """23-component features for the sampled points of one segment."""

    segment_id: int
    vertex_ids: np.ndarray
    features: np.ndarray
    n_skipped: int = 0
    max_geodesic: float = 0.0

    def __len__(self):
        return len(self.vertex_ids)


@dataclass(frozen=True)
class FeatureParams:
    n_samples: int = N_SAMPLES
    gcd_bins: int = GCD_BINS
    ring_depth: int = 2
    seed: int = 0
    normalize_curvedness: bool = False


def _segment_distance_bound(graph, labeling, segment_id, ids):
    """Upper bound on surface distances between samples of one segment.

    Paths inside the segment are also surface paths, so the largest
    within-segment sample distance bounds the true ones. Returns ``inf`` if
    the segment is not connected through its own edges.
    """
    members = labeling.vertices_of(segment_id)
    local = np.searchsorted(members, ids)
    sub = graph[members][:, members]
    d = dijkstra(sub, directed=False, indices=local)[:, local]
    if not np.all(np.isfinite(d)):
        return np.inf
    return float(d.max()) * (1.0 + 1e-9) + 1e-12


def feature_vectors(mesh, labeling, segment_id, params=FeatureParams(), curvature=None,
                    graph=None):
    """Point features for one segment.

    Geodesics run over the whole surface, but each point's histogram only
    counts the other sampled points of the segment and is normalized by the
    largest geodesic distance among those samples. Points whose curvature
    fit is invalid still serve as geodesic targets but get no feature row.
    """
    if curvature is None:
        curvature = estimate_curvatures(mesh, params.ring_depth)
    if graph is None:
        graph = vertex_adjacency(mesh)
    samples = sample_points(labeling, segment_id, params.n_samples,
                            segment_seed(params.seed, segment_id))
    ids = samples.vertex_ids
    dist = geodesic_distances(mesh, ids, ids, graph=graph,
                              limit=_segment_distance_bound(graph, labeling, segment_id, ids))
    top = dist.max()
    keep = curvature.valid[ids]
    rows = []
    for i in np.flatnonzero(keep):
        others = np.delete(dist[i], i)
        if others.size == 0:
            others = dist[i]
        if top > 0:
            gcd = gcd_histogram(others, params.gcd_bins, top)
        else:
            gcd = np.zeros(params.gcd_bins)
            gcd[0] = 1.0
        rows.append(gcd)
    kept = ids[keep]
    k1, k2 = curvature.k1[kept], curvature.k2[kept]
    c = curvedness(k1, k2)
    if params.normalize_curvedness and c.size and c.max() > c.min():
        c = (c - c.min()) / (c.max() - c.min())
    local = np.column_stack([shape_index(k1, k2), c, normal_orientation(mesh.normals[kept])])
    gcd = np.array(rows).reshape(len(kept), params.gcd_bins)
    return FeatureSet(int(segment_id), kept, np.hstack([local, gcd]),
                      int((~keep).sum()), float(top))


def surface_features(mesh, labeling, params=FeatureParams(), segments=None):
    """Feature sets for every (non-empty) segment, keyed by segment id."""
    curvature = estimate_curvatures(mesh, params.ring_depth)
    graph = vertex_adjacency(mesh)
    if segments is None:
        segments = labeling.present
    return {s: feature_vectors(mesh, labeling, s, params, curvature, graph)
            for s in segments}


def write_features_csv(feature_sets, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "vertex_id"] + FEATURE_NAMES)
        for fs in feature_sets:
            for vid, row in zip(fs.vertex_ids.tolist(), fs.features.tolist()):
                w.writerow([fs.segment_id, vid] + [repr(x) for x in row])


def read_features_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["segment_id", "vertex_id"] or len(header) != 2 + len(FEATURE_NAMES):
            raise DescriptorError(f"{path}: not a feature CSV")
        rows = [r for r in reader if r]
    segs = np.array([int(r[0]) for r in rows], dtype=np.int64)
    vids = np.array([int(r[1]) for r in rows], dtype=np.int64)
    feats = np.array([[float(x) for x in r[2:]] for r in rows]).reshape(-1, len(FEATURE_NAMES))
    out = {}
    for s in sorted(set(segs.tolist())):
        m = segs == s
        out[s] = FeatureSet(s, vids[m], feats[m])
    return out


def features_to_json(feature_sets):
    return {"columns": ["segment_id", "vertex_id"] + FEATURE_NAMES,
            "segments": [{"segment_id": fs.segment_id, "vertex_ids": fs.vertex_ids.tolist(),
                          "features": fs.features.tolist(), "skipped": fs.n_skipped}
                         for fs in feature_sets]}


def write_features_json(feature_sets, path):
    with open(path, "w") as fh:
        json.dump(features_to_json(feature_sets), fh)


# --------------------------------------------------------- global signatures

@dataclass(frozen=True)
class D2Histogram:
    frequencies: np.ndarray
    mean_distance: float
    support: float = 3.0

    @property
    def bins(self):
        return len(self.frequencies)

    @property
    def edges(self):
        return np.linspace(0.0, self.support, self.bins + 1)


def d2_descriptor(mesh, n_pairs=10000, bins=64, seed=0):
    """Histogram of random vertex-pair distances over their mean.

    Support is [0, 3] mean distances; longer pairs fall in the last bin.
    """
    pts = mesh.vertices if isinstance(mesh, TriangleMesh) else np.asarray(mesh, dtype=float)
    n = len(pts)
    if n < 2:
        raise DescriptorError("d2_descriptor needs at least two vertices")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = j + (j >= i)
    dist = np.linalg.norm(pts[i] - pts[j], axis=1)
    mean = dist.mean()
    if not mean > 0:
        raise DescriptorError("d2_descriptor: all sampled pairs coincide")
    counts, _ = np.histogram(np.clip(dist / mean, 0.0, 3.0), bins=bins, range=(0.0, 3.0))
    return D2Histogram(counts / counts.sum(), float(mean))


def shape_index_histogram(mesh, labeling, bins=20, curvature=None, ring_depth=2):
    """Per-segment shape-index histograms, shape (17, bins), rows sum to one."""
    if curvature is None:
        curvature = estimate_curvatures(mesh, ring_depth)
    si = shape_index(curvature.k1, curvature.k2)
    out = np.zeros((N_SEGMENTS, bins))
    for s in range(1, N_SEGMENTS + 1):
        m = (labeling.labels == s) & curvature.valid
        if not m.any():
            raise DescriptorError(f"segment {s} has no vertex with a valid curvature")
        counts, _ = np.histogram(si[m], bins=bins, range=(0.0, 1.0))
        out[s - 1] = counts / counts.sum()
    return out
