import numpy as np
import pytest

from lvmorph.mesh import TriangleMesh, grid_patch, icosphere, mesh_report
from lvmorph.volume import (ScalarVolume, VolumeError, extract_isosurface, median_filter,
                            read_volume, smooth_mesh, write_volume)


def _brute_median(a, kx, ky, kz):
    nz, ny, nx = a.shape
    out = np.empty_like(a)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                window = [a[min(max(kk, 0), nz - 1), min(max(jj, 0), ny - 1),
                            min(max(ii, 0), nx - 1)]
                          for kk in range(k - kz // 2, k + kz // 2 + 1)
                          for jj in range(j - ky // 2, j + ky // 2 + 1)
                          for ii in range(i - kx // 2, i + kx // 2 + 1)]
                out[k, j, i] = np.median(window)
    return out


def sphere_sdf_volume(radius=10.0, n=64, spacing=0.5):
    origin = -spacing * n / 2
    vol = ScalarVolume((n, n, n), spacing, origin, np.zeros(n ** 3))
    return vol.with_array(
        (np.linalg.norm(vol.grid_points(), axis=1) - radius).reshape(n, n, n))


def test_volume_validation():
    with pytest.raises(VolumeError):
        ScalarVolume((1, 2, 2), 1.0, 0.0, np.zeros(4))
    with pytest.raises(VolumeError):
        ScalarVolume((2, 2, 2), 1.0, 0.0, np.zeros(7))
    with pytest.raises(VolumeError):
        ScalarVolume((2, 2, 2), 0.0, 0.0, np.zeros(8))


def test_x_fastest_layout():
    vol = ScalarVolume((3, 2, 2), (1.0, 2.0, 3.0), (10.0, 0.0, 0.0), np.arange(12))
    assert vol.array[1, 0, 2] == 8
    assert np.allclose(vol.grid_points()[8], [12.0, 0.0, 3.0])


@pytest.mark.parametrize("dtype", ["float32", "uint16"])
def test_raw_round_trip(tmp_path, dtype):
    vol = ScalarVolume((4, 3, 2), (0.5, 0.5, 1.0), (1, 2, 3), np.arange(24) * 7)
    write_volume(vol, tmp_path / "v.raw", dtype)
    back = read_volume(tmp_path / "v.raw")
    assert back.dims == vol.dims and back.spacing == vol.spacing and back.origin == vol.origin
    assert np.array_equal(back.values, vol.values)


def test_median_constant_volume():
    vol = ScalarVolume((5, 6, 7), 1.0, 0.0, np.full(210, 3.25))
    for k in [(1, 1, 1), (3, 3, 1), (7, 7, 1), (3, 5, 3)]:
        assert np.array_equal(median_filter(vol, k).values, vol.values)


def test_median_removes_impulse():
    a = np.zeros((3, 5, 5))
    a[1, 2, 2] = 100.0
    out = median_filter(ScalarVolume.from_array(a), (3, 3, 1))
    assert out.array[1, 2, 2] == 0.0
    assert out.dims == (5, 5, 3)


def test_median_ramp_matches_bruteforce():
    a = (np.arange(5)[None, :] * 2.0 + np.arange(5)[:, None] * 3.0)[None]
    a = np.repeat(a, 2, axis=0)  # two identical z slices
    out = median_filter(ScalarVolume.from_array(a), (3, 3, 1)).array
    expected = _brute_median(a, 3, 3, 1)
    assert np.array_equal(out, expected)
    assert np.array_equal(out[:, 1:-1, 1:-1], a[:, 1:-1, 1:-1])


def test_median_random_matches_bruteforce(rng):
    a = rng.normal(size=(4, 5, 6))
    out = median_filter(ScalarVolume.from_array(a), (3, 3, 3)).array
    assert np.allclose(out, _brute_median(a, 3, 3, 3))
    assert out.min() >= a.min() and out.max() <= a.max()


def test_median_even_kernel_rejected():
    vol = ScalarVolume((3, 3, 3), 1.0, 0.0, np.zeros(27))
    with pytest.raises(VolumeError):
        median_filter(vol, (4, 3, 1))


def test_isosurface_sphere_radii_and_topology():
    mesh = extract_isosurface(sphere_sdf_volume(), 0.0)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.max(np.abs(r - 10.0)) <= 0.5 * np.sqrt(3) / 2
    report = mesh_report(mesh)
    assert report.euler_characteristic == 2
    assert report.boundary_edges == 0 and report.nonmanifold_edges == 0
    # outward orientation
    assert np.mean(np.einsum("ij,ij->i", mesh.normals, mesh.vertices) > 0) == 1.0


def test_isosurface_without_crossing_is_empty():
    vol = ScalarVolume((4, 4, 4), 1.0, 0.0, np.ones(64))
    mesh = extract_isosurface(vol, 0.0)
    assert mesh.n_vertices == 0 and mesh.n_faces == 0


def test_isosurface_respects_spacing_and_origin():
    vol = sphere_sdf_volume(radius=5.0, n=32, spacing=0.5)
    shifted = ScalarVolume(vol.dims, vol.spacing, np.add(vol.origin, [100, 0, -50]), vol.values)
    a = extract_isosurface(vol, 0.0)
    b = extract_isosurface(shifted, 0.0)
    assert np.allclose(b.vertices - a.vertices, [100, 0, -50])


def test_smooth_zero_iterations_identity(sphere4):
    assert smooth_mesh(sphere4, 0, 0) is sphere4


def test_smooth_plane_is_fixed_point():
    g = grid_patch(8, 7, 0.5)
    out = smooth_mesh(g, 10, 10)
    assert np.max(np.abs(out.vertices - g.vertices)) < 1e-9


def _normal_deviation(mesh):
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    exact = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    cos = np.clip(np.einsum("ij,ij->i", mesh.face_normals, exact), -1, 1)
    return np.mean(np.arccos(cos))


def test_smoothing_reduces_normal_noise(rng):
    sphere = icosphere(4, 5.0)
    noise = 1.0 + 0.02 * rng.standard_normal(sphere.n_vertices)
    noisy = TriangleMesh(sphere.vertices * noise[:, None], sphere.faces)
    out = smooth_mesh(noisy, 10, 10)
    assert _normal_deviation(out) < _normal_deviation(noisy)
    assert np.array_equal(out.faces, noisy.faces)
    assert out.n_vertices == noisy.n_vertices


def test_smoothing_preserves_topology():
    mesh = extract_isosurface(sphere_sdf_volume(radius=6.0, n=32, spacing=0.5), 0.0)
    out = smooth_mesh(mesh, 5, 5)
    assert mesh_report(out).euler_characteristic == mesh_report(mesh).euler_characteristic
    assert np.array_equal(out.faces, mesh.faces)
