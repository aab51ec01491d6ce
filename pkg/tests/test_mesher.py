import numpy as np
import pytest
import torch

from rgbdsurf.geometry import CameraIntrinsics, look_at
from rgbdsurf.mesher import TriangleMesh, cull_to_frustums, evaluate_lattice, extract_mesh, marching_cubes

from conftest import AnalyticField, sphere_sdf


def _radii(mesh):
    return np.linalg.norm(mesh.vertices, axis=1)


def test_sphere_64_within_voxel_diagonal(sphere_field):
    m = extract_mesh(sphere_field, 64)
    diag = np.sqrt(3) * 2 / 63
    assert diag < 0.056
    assert np.all(np.abs(_radii(m) - 0.5) <= diag)
    assert m.is_watertight()
    np.testing.assert_allclose(np.linalg.norm(m.normals, axis=1), 1, atol=1e-6)
    # normals point outward
    assert np.all((m.normals * m.vertices).sum(1) > 0)


def test_sphere_rms_convergence(sphere_field):
    e64 = np.sqrt(np.mean((_radii(extract_mesh(sphere_field, 64, normals=False)) - 0.5) ** 2))
    e128 = np.sqrt(np.mean((_radii(extract_mesh(sphere_field, 128, normals=False)) - 0.5) ** 2))
    assert e64 / e128 >= 1.8


def test_plane_face_normals(plane_field):
    m = extract_mesh(plane_field, 16)
    _, n = m.face_areas_normals()
    assert np.all(np.abs(np.abs(n[:, 0]) - 1) < 1e-3)
    np.testing.assert_allclose(m.vertices[:, 0], 0, atol=1e-12)


def test_all_positive_is_empty():
    f = AnalyticField(lambda x: torch.ones(x.shape[0], dtype=x.dtype))
    m = extract_mesh(f, 12)
    assert m.empty and not m.is_watertight()


def test_resolution_floor(sphere_field):
    with pytest.raises(ValueError):
        extract_mesh(sphere_field, 4)


def test_traversal_order_invariance():
    # transposing the lattice axes relabels the traversal; the surface is the same point set
    rng = np.random.default_rng(0)
    sdf = sphere_sdf(0.4, (0.05, -0.02, 0.03))
    vals, sp = evaluate_lattice(lambda p: sdf(torch.as_tensor(p)).numpy(), [-1] * 3, [1] * 3, 24)
    a = marching_cubes(vals, [-1] * 3, sp)
    perm = rng.permutation(3)
    b = marching_cubes(vals.transpose(perm), [-1] * 3, sp)
    va = np.unique(np.round(a.vertices, 12), axis=0)
    vb = np.unique(np.round(b.vertices[:, np.argsort(perm)], 12), axis=0)
    np.testing.assert_array_equal(va, vb)
    assert len(a.faces) == len(b.faces)


def test_marching_cubes_deterministic():
    vals = np.random.default_rng(1).normal(size=(10, 11, 12))
    a = marching_cubes(vals, [0, 0, 0], 0.1)
    b = marching_cubes(vals.copy(), [0, 0, 0], 0.1)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.faces, b.faces)
    area, _ = a.face_areas_normals()
    assert np.all(area > 1e-12)


def test_face_index_validation():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_cull_to_frustums():
    intr = CameraIntrinsics(20, 20, 15.5, 11.5, 32, 24, 1000.0)
    pose = look_at([0, 0, -2.0], [0, 0, 0], up=(0, 1, 0))
    m = TriangleMesh([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [5, 0, 0], [5.1, 0, 0], [5, 0.1, 0]],
                     [[0, 1, 2], [3, 4, 5]])
    kept = cull_to_frustums(m, intr, [pose])
    assert len(kept.faces) == 1 and kept.vertices[:, 0].max() < 1
    # a depth map observing a wall at 1 m hides the triangle 2 m away
    depth = np.full((24, 32), 1.0)
    assert cull_to_frustums(m, intr, [pose], [depth], margin=0.05).empty
    assert len(cull_to_frustums(m, intr, [pose], [depth + 1.0], margin=0.05).faces) == 1
