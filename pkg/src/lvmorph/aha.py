"""17-segment AHA partition of a ventricle-like mesh."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

N_SEGMENTS = 17
APEX_CAP_FRACTION = 0.15
EIGEN_RATIO_MIN = 1.05

TERRITORIES = {
    "LAD": (1, 2, 7, 8, 13, 14, 17),
    "RCA": (3, 4, 9, 10, 15),
    "LCX": (5, 6, 11, 12, 16),
}
_ARTERY_OF = {s: a for a, segs in TERRITORIES.items() for s in segs}


class PartitionError(ValueError):
    pass


def territory_of(segment_id):
    """Coronary artery supplying an AHA segment (1..17)."""
    try:
        return _ARTERY_OF[int(segment_id)]
    except (KeyError, ValueError, TypeError):
        raise PartitionError(f"segment id must be in 1..17, got {segment_id!r}") from None


@dataclass(frozen=True)
class Landmarks:
    apex: np.ndarray
    base: np.ndarray
    septal: np.ndarray

    def __post_init__(self):
        apex = np.asarray(self.apex, dtype=float).reshape(3)
        base = np.asarray(self.base, dtype=float).reshape(3)
        septal = np.asarray(self.septal, dtype=float).reshape(3, 3)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "septal", septal)
        length = np.linalg.norm(apex - base)
        if not length > 1e-12:
            raise PartitionError("apex and base centroid coincide")
        axis = (apex - base) / length
        for p in septal:
            r = p - base
            if np.linalg.norm(r - (r @ axis) * axis) <= 1e-9 * length:
                raise PartitionError("septal landmark lies on the long axis")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["apex"], d["base"], d["septal"])
        except KeyError as exc:
            raise PartitionError(f"landmarks lack field {exc}") from None

    def to_dict(self):
        return {"apex": self.apex.tolist(), "base": self.base.tolist(),
                "septal": self.septal.tolist()}

    def transformed(self, rotation=None, translation=None, scale=1.0):
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        f = lambda p: scale * p @ r.T + t  # noqa: E731
        return Landmarks(f(self.apex), f(self.base), f(self.septal))


def load_landmarks(path):
    with open(path) as fh:
        return Landmarks.from_dict(json.load(fh))


def compute_long_axis(mesh, landmarks=None):
    """Unit long axis and the (min, max) vertex extent along it.

    With landmarks the axis points from base centroid to apex. Otherwise it
    is the leading covariance eigenvector, signed so the extreme farther from
    the centroid (the apex side) is positive.
    """
    v = mesh.vertices
    if landmarks is not None:
        axis = landmarks.apex - landmarks.base
        axis = axis / np.linalg.norm(axis)
    else:
        centered = v - v.mean(axis=0)
        evals, evecs = np.linalg.eigh(centered.T @ centered / len(v))
        if evals[-2] <= 0 or evals[-1] / evals[-2] < EIGEN_RATIO_MIN:
            raise PartitionError(
                "long axis is ambiguous: leading covariance eigenvalues are nearly equal")
        axis = evecs[:, -1]
        t = centered @ axis
        if abs(t.min()) > abs(t.max()):
            axis = -axis
    t = v @ axis
    return axis, (float(t.min()), float(t.max()))


@dataclass(frozen=True)
class SegmentLabeling:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.size and (labels.min() < 1 or labels.max() > N_SEGMENTS):
            raise PartitionError("segment ids must lie in 1..17")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def vertices_of(self, segment_id):
        return np.flatnonzero(self.labels == segment_id)

    @property
    def segments(self):
        return {s: self.vertices_of(s) for s in range(1, N_SEGMENTS + 1)}

    @property
    def present(self):
        return sorted(int(s) for s in np.unique(self.labels))

    def artery(self, vertex_id):
        return territory_of(self.labels[vertex_id])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex_id", "segment_id", "artery"])
            for i, s in enumerate(self.labels.tolist()):
                w.writerow([i, s, _ARTERY_OF[s]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.zeros(len(rows), dtype=np.int64)
        for row in rows:
            labels[int(row["vertex_id"])] = int(row["segment_id"])
        return cls(labels)


def axial_position(points, landmarks):
    """Fractional position along base (0) -> apex (1)."""
    axis = landmarks.apex - landmarks.base
    length = np.linalg.norm(axis)
    return (np.asarray(points) - landmarks.base) @ (axis / length) / length


def _bin(value, width, tol=1e-9):
    """floor(value / width), with values within ``tol`` bins of a boundary
    snapped onto it so round-off never decides between neighbours."""
    k = value / width
    r = np.round(k)
    return np.floor(np.where(np.abs(k - r) <= tol, r, k))


def partition_17(mesh, landmarks):
    """Label every vertex with its AHA segment.

    The distal 15% of the base-to-apex span is the apex cap (17); the rest
    is split into equal basal/mid/apical thirds. Vertices beyond the base
    plane join the basal band, beyond the apex the cap. Angles run
    counter-clockwise about the base->apex axis starting at the first
    septal landmark: 60 degree sectors for basal (1-6) and mid (7-12),
    90 degree sectors for apical (13-16).
    """
    v = mesh.vertices
    axis = landmarks.apex - landmarks.base
    axis = axis / np.linalg.norm(axis)
    t = axial_position(v, landmarks)

    ref = landmarks.septal[0] - landmarks.base
    ref = ref - (ref @ axis) * axis
    ref /= np.linalg.norm(ref)
    ortho = np.cross(axis, ref)
    rel = v - landmarks.base
    phi = np.arctan2(rel @ ortho, rel @ ref)

    third = (1.0 - APEX_CAP_FRACTION) / 3.0
    band = np.clip(_bin(t, third), 0, 2).astype(np.int64)
    cap = _bin(t, 1.0 - APEX_CAP_FRACTION) >= 1

    six = np.mod(_bin(phi, np.pi / 3), 6).astype(np.int64)
    four = np.mod(_bin(phi, np.pi / 2), 4).astype(np.int64)
    labels = np.where(band == 0, 1 + six, np.where(band == 1, 7 + six, 13 + four))
    labels = np.where(cap, 17, labels)
    return SegmentLabeling(labels)
