import unittest

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from ove6d.core.errors import InvalidArgumentError
from ove6d.models.geometry import TriangleMesh
from ove6d.services.datagen_service import build_box_mesh
from ove6d.utils.geometry_utils import (
    EXACT_DIAMETER_MAX_VERTICES,
    average_adjacent_viewpoint_distance,
    decompose_rotation,
    fibonacci_directions,
    geodesic_angle,
    inplane_angle,
    inplane_matrix,
    inplane_vector,
    is_degenerate_cloud,
    kabsch,
    mesh_diameter,
    model_points,
    random_rotation,
    ray_alignment_rotation,
    rot_x,
    rot_z,
    sample_surface_points,
    sample_viewpoints,
    spherical_cap_discrepancy,
    view_axis_angle,
    viewpoint_rotation,
)
from ove6d.utils.seed_utils import derive_seed, make_rng

"""
本测试文件用于测试几何工具：视点采样密度、旋转分解、测地角、刚体对齐与网格采样。
"""


class TestViewpointSampling(unittest.TestCase):
    def test_aavd_matches_reference_density(self):
        """N=4000 时 AAVD 在 3.1±0.6 度，N=1000 时在 6.1±1.2 度（暴力最近邻）"""
        self.assertAlmostEqual(average_adjacent_viewpoint_distance(sample_viewpoints(4000), "brute"), 3.1, delta=0.6)
        self.assertAlmostEqual(average_adjacent_viewpoint_distance(sample_viewpoints(1000), "brute"), 6.1, delta=1.2)

    def test_kdtree_equals_brute(self):
        views = sample_viewpoints(300)
        self.assertAlmostEqual(
            average_adjacent_viewpoint_distance(views, "kdtree"),
            average_adjacent_viewpoint_distance(views, "brute"),
            places=6,
        )

    def test_views_are_canonical(self):
        """每个视点都是合法旋转且平面内分量为零"""
        for r in sample_viewpoints(50):
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
            self.assertAlmostEqual(np.linalg.det(r), 1.0, places=9)
            r_theta, _ = decompose_rotation(r)
            np.testing.assert_allclose(r_theta, np.eye(3), atol=1e-9)

    def test_too_few_views(self):
        with self.assertRaises(InvalidArgumentError):
            sample_viewpoints(1)

    def test_discrepancy_decreases_with_n(self):
        d_small = spherical_cap_discrepancy(fibonacci_directions(100), seed=3)
        d_large = spherical_cap_discrepancy(fibonacci_directions(4000), seed=3)
        self.assertLess(d_large, d_small)

    def test_polar_view_axis(self):
        """视轴平行于 Z 时退化分支仍得到合法旋转"""
        for axis in ([0, 0, 1], [0, 0, -1]):
            r = viewpoint_rotation(axis)
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            np.testing.assert_allclose(r[2], axis, atol=1e-12)


class TestRotationAlgebra(unittest.TestCase):
    def test_decompose_roundtrip(self):
        """R = R_θ · R_γ，R_θ 是绕光轴的旋转，R_γ 与 R 同视轴"""
        rng = make_rng(0, "test")
        for _ in range(20):
            r = random_rotation(rng)
            r_theta, r_gamma = decompose_rotation(r)
            np.testing.assert_allclose(r_theta @ r_gamma, r, atol=1e-9)
            np.testing.assert_allclose(r_theta[2], [0, 0, 1], atol=1e-9)
            self.assertLess(view_axis_angle(r, r_gamma), 1e-6)

    def test_inplane_matrix_and_vector(self):
        r = rot_z(37.0)
        vec = inplane_vector(r)
        np.testing.assert_allclose(inplane_matrix(vec), r, atol=1e-12)
        self.assertAlmostEqual(inplane_angle(r), 37.0, places=9)
        self.assertAlmostEqual(inplane_angle(rot_z(-10.0)), 350.0, places=9)

    def test_inplane_matrix_rejects_non_unit(self):
        with self.assertRaises(InvalidArgumentError):
            inplane_matrix([0.0, 0.0])
        with self.assertRaises(InvalidArgumentError):
            inplane_matrix([0.5, 0.5])

    def test_geodesic_angle(self):
        self.assertAlmostEqual(geodesic_angle(np.eye(3), rot_x(30.0)), 30.0, places=6)
        self.assertAlmostEqual(geodesic_angle(np.eye(3), rot_z(180.0)), 180.0, places=6)
        self.assertAlmostEqual(geodesic_angle(rot_x(5.0), rot_x(5.0)), 0.0, places=6)

    def test_geodesic_triangle_inequality(self):
        rng = make_rng(5, "test")
        for _ in range(200):
            a, b, c = (random_rotation(rng) for _ in range(3))
            self.assertLessEqual(geodesic_angle(a, c), geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-6)

    def test_geodesic_matches_quaternion(self):
        """与四元数点积 2·arccos|q1·q2| 对照"""
        rng = make_rng(6, "test")
        for _ in range(50):
            a, b = random_rotation(rng), random_rotation(rng)
            qa, qb = ScipyRotation.from_matrix(a).as_quat(), ScipyRotation.from_matrix(b).as_quat()
            expected = np.degrees(2.0 * np.arccos(min(1.0, abs(float(qa @ qb)))))
            self.assertAlmostEqual(geodesic_angle(a, b), expected, places=6)

    def test_view_axis_ignores_inplane(self):
        r = random_rotation(make_rng(1, "test"))
        self.assertAlmostEqual(view_axis_angle(r, rot_z(70.0) @ r), 0.0, places=6)

    def test_ray_alignment(self):
        """光轴 +z 被转到 t 的方向；光轴上的点得到单位阵"""
        t = np.array([120.0, -80.0, 700.0])
        r = ray_alignment_rotation(t)
        np.testing.assert_allclose(r @ [0, 0, 1], t / np.linalg.norm(t), atol=1e-12)
        np.testing.assert_allclose(ray_alignment_rotation([0, 0, 500.0]), np.eye(3))


class TestPointClouds(unittest.TestCase):
    def test_kabsch_recovers_transform(self):
        rng = make_rng(2, "test")
        src = rng.standard_normal((50, 3)) * 40.0
        r_true = random_rotation(rng)
        t_true = np.array([10.0, -5.0, 600.0])
        r, t = kabsch(src, src @ r_true.T + t_true)
        np.testing.assert_allclose(r, r_true, atol=1e-9)
        np.testing.assert_allclose(t, t_true, atol=1e-7)

    def test_kabsch_shape_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            kabsch(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_degenerate_cloud(self):
        self.assertTrue(is_degenerate_cloud(np.zeros((2, 3))))
        line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
        self.assertTrue(is_degenerate_cloud(line))
        self.assertFalse(is_degenerate_cloud(np.eye(3) * 10.0))

    def test_diameter_regular_tetrahedron(self):
        """正四面体的直径等于棱长"""
        verts = 10.0 * np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
        mesh = TriangleMesh(vertices=verts, faces=[[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
        self.assertAlmostEqual(mesh_diameter(mesh), 20.0 * np.sqrt(2.0), places=9)

    def test_diameter_rigid_invariance(self):
        box = build_box_mesh((100.0, 60.0, 40.0), subdivisions=2)
        rng = make_rng(7, "test")
        r = random_rotation(rng)
        moved = TriangleMesh(vertices=box.vertices @ r.T + [30.0, -20.0, 500.0], faces=box.faces)
        self.assertAlmostEqual(mesh_diameter(moved), mesh_diameter(box), places=9)
        self.assertAlmostEqual(mesh_diameter(box), np.sqrt(100.0 ** 2 + 60.0 ** 2 + 40.0 ** 2), places=9)

    def test_diameter_convex_hull_branch(self):
        """顶点数超过阈值时走凸包过滤：球内随机点加一对相距 200 的对跖点"""
        rng = make_rng(8, "test")
        n = EXACT_DIAMETER_MAX_VERTICES + 500
        inner = rng.standard_normal((n, 3))
        inner *= (rng.uniform(0.0, 90.0, n) / np.linalg.norm(inner, axis=1))[:, None]
        verts = np.vstack([inner, [[100.0, 0.0, 0.0], [-100.0, 0.0, 0.0]]])
        mesh = TriangleMesh(vertices=verts, faces=[[0, 1, 2]])
        self.assertGreater(len(mesh.vertices), EXACT_DIAMETER_MAX_VERTICES)
        self.assertAlmostEqual(mesh_diameter(mesh), 200.0, places=9)

    def test_surface_points_on_box(self):
        """表面采样点都在长方体表面上，同一种子结果相同"""
        mesh = build_box_mesh((100.0, 60.0, 40.0))
        pts = sample_surface_points(mesh, 500, seed=4)
        half = np.array([50.0, 30.0, 20.0])
        on_face = np.isclose(np.abs(pts - mesh.center), half, atol=1e-6).any(axis=1)
        self.assertTrue(on_face.all())
        np.testing.assert_array_equal(pts, sample_surface_points(mesh, 500, seed=4))

    def test_model_points_count(self):
        mesh = build_box_mesh((100.0, 60.0, 40.0), subdivisions=2)
        self.assertEqual(len(model_points(mesh, max_points=5000)), 1000)
        self.assertEqual(len(model_points(mesh, max_points=300, min_points=100)), 100)
        self.assertEqual(len(model_points(mesh, max_points=20, min_points=10)), 20)


class TestSeedUtils(unittest.TestCase):
    def test_streams_are_reproducible_and_independent(self):
        a = make_rng(5, "train", 1, 2).random(4)
        np.testing.assert_array_equal(a, make_rng(5, "train", 1, 2).random(4))
        self.assertFalse(np.allclose(a, make_rng(5, "train", 1, 3).random(4)))
        self.assertFalse(np.allclose(a, make_rng(5, "codebook", 1, 2).random(4)))
        self.assertEqual(derive_seed(5, "init"), derive_seed(5, "init"))
        self.assertNotEqual(derive_seed(5, "init"), derive_seed(6, "init"))


if __name__ == '__main__':
    unittest.main()
