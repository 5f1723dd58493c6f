"""Synthetic ventricle-like phantoms with a Gaussian bump field.

The bump field stands in for trabeculation: ``count`` Gaussian bumps of
height ``amplitude`` and footprint ``wavelength`` (mm), centred at seeded
random points of the base surface and displacing it along its normal.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .mesh import TriangleMesh, icosphere

BASES = ("sphere", "ellipsoid", "half_ellipsoid")


@dataclass(frozen=True)
class PhantomSpec:
    base: str = "ellipsoid"
    radii: tuple = (1.0, 1.0, 1.0)
    bump_count: int = 0
    bump_amplitude: float = 0.0
    bump_wavelength: float = 1.0
    bump_direction: str = "outward"
    seed: int = 0
    subdivisions: int = 4

    def __post_init__(self):
        radii = self.radii
        if np.isscalar(radii):
            radii = (radii,) * 3
        object.__setattr__(self, "radii", tuple(float(r) for r in radii))
        if self.base not in BASES:
            raise ValueError(f"base must be one of {BASES}, got {self.base!r}")
        if len(self.radii) != 3 or min(self.radii) <= 0:
            raise ValueError("radii must be three positive lengths")
        if self.base == "sphere" and len(set(self.radii)) != 1:
            raise ValueError("sphere base needs equal radii")
        if self.bump_amplitude < 0:
            raise ValueError("bump_amplitude must be >= 0")
        if self.bump_count < 0:
            raise ValueError("bump_count must be >= 0")
        if self.bump_count and self.bump_wavelength <= 0:
            raise ValueError("bump_wavelength must be > 0")
        if self.bump_direction not in ("outward", "inward"):
            raise ValueError("bump_direction must be 'outward' or 'inward'")
        if self.subdivisions < 0:
            raise ValueError("subdivisions must be >= 0")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "radius" in d:
            d["radii"] = d.pop("radius")
        bump = d.pop("bumps", None)
        if bump is not None:
            d.setdefault("bump_count", bump.get("count", 0))
            d.setdefault("bump_amplitude", bump.get("amplitude", 0.0))
            d.setdefault("bump_wavelength", bump.get("wavelength", 1.0))
            d.setdefault("bump_direction", bump.get("direction", "outward"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown phantom spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["radii"] = list(self.radii)
        return d


def load_phantom_spec(path):
    with open(path) as fh:
        return PhantomSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class BumpField:
    centers: np.ndarray
    amplitude: float
    sigma: float
    sign: float = 1.0

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        if len(self.centers) == 0 or self.amplitude == 0:
            return np.zeros(len(points))
        out = np.zeros(len(points))
        for c in self.centers:
            d2 = np.sum((points - c) ** 2, axis=1)
            out += np.exp(-d2 / (2 * self.sigma ** 2))
        return self.sign * self.amplitude * out


def bump_field(spec):
    rng = np.random.default_rng(spec.seed)
    u = rng.normal(size=(spec.bump_count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    if spec.base == "half_ellipsoid":
        u[:, 2] = -np.abs(u[:, 2])
    centers = u * np.asarray(spec.radii)
    sign = 1.0 if spec.bump_direction == "outward" else -1.0
    return BumpField(centers, spec.bump_amplitude, spec.bump_wavelength / 4.0, sign)


def _ellipsoid_normals(points, radii):
    g = points / np.asarray(radii) ** 2
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_phantom(spec):
    """Mesh phantom: icosphere mapped onto the base shape, then bumped."""
    sphere = icosphere(spec.subdivisions)
    v, f = sphere.vertices, sphere.faces
    if spec.base == "half_ellipsoid":
        keep = v[f].mean(axis=1)[:, 2] < 0
        f = f[keep]
        used = np.unique(f)
        remap = -np.ones(len(v), dtype=np.int64)
        remap[used] = np.arange(len(used))
        v, f = v[used], remap[f]
    base = v * np.asarray(spec.radii)
    normals = _ellipsoid_normals(base, spec.radii)
    disp = bump_field(spec)(base)
    return TriangleMesh(base + disp[:, None] * normals, f)


def phantom_field(spec, points):
    """Approximate signed distance (negative inside) of the bumped phantom.

    The half-ellipsoid base is closed with a flat lid in the z=0 plane.
    """
    points = np.asarray(points, dtype=float)
    radii = np.asarray(spec.radii)
    q = points / radii
    rho = np.linalg.norm(q, axis=1)
    rho = np.where(rho == 0, 1e-12, rho)
    grad = np.linalg.norm(points / (radii ** 2 * rho[:, None]), axis=1)
    grad = np.where(grad == 0, 1.0, grad)
    sdf = (rho - 1.0) / grad
    foot = points / rho[:, None]
    sdf = sdf - bump_field(spec)(foot)
    if spec.base == "half_ellipsoid":
        sdf = np.maximum(sdf, points[:, 2])
    return sdf


def phantom_volume(spec, spacing=1.0, margin=4.0, noise=0.0, noise_seed=None):
    """Render the phantom as a bright cavity in a dark volume (iso level 0.5).

    Intensity is a logistic of the signed distance with a width of half a
    voxel, plus optional Gaussian noise.
    """
    from .volume import ScalarVolume

    radii = np.asarray(spec.radii)
    reach = radii + spec.bump_amplitude + margin
    lo = -reach.copy()
    hi = reach.copy()
    if spec.base == "half_ellipsoid":
        hi[2] = margin
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    dims = np.maximum(np.ceil((hi - lo) / spacing).astype(int) + 1, 2)
    axes = [lo[i] + spacing[i] * np.arange(dims[i]) for i in range(3)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    d = phantom_field(spec, pts)
    tau = 0.5 * float(spacing.min())
    values = 1.0 / (1.0 + np.exp(np.clip(d / tau, -60, 60)))
    if noise > 0:
        rng = np.random.default_rng(spec.seed if noise_seed is None else noise_seed)
        values = values + rng.normal(0.0, noise, size=values.shape)
    return ScalarVolume(tuple(int(x) for x in dims), tuple(spacing.tolist()),
                        tuple(lo.tolist()), values)
