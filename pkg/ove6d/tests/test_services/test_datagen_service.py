import math
import os
import tempfile
import unittest

import numpy as np

from ove6d.core.errors import InvalidArgumentError
from ove6d.core.run_config import RunConfig
from ove6d.cruds.mesh_crud import load_mesh
from ove6d.cruds.record_crud import read_manifest
from ove6d.models.frames import DepthFrame
from ove6d.models.geometry import CameraIntrinsics
from ove6d.models.training import MAX_DIAMETER_MM, MIN_DIAMETER_MM, SHAPE_FAMILIES, AugmentConfig
from ove6d.services.datagen_service import (
    GAMMA_RANGE_DEG,
    SCENE_ATTEMPTS,
    _write_scene,
    augment,
    build_box_mesh,
    build_cylinder_mesh,
    build_dataset,
    draw_triplet_geometry,
    generate_shapes,
    masked_resample,
    sample_triplets,
)
from ove6d.utils.geometry_utils import decompose_rotation, inplane_angle, view_axis_angle

"""
本测试文件用于测试程序化物体、训练三元组、深度增强与数据集生成。
测试流程如下：
1. 网格闭合且朝外（有符号体积等于解析体积）。
2. 同一种子的生成结果完全相同。
3. 三元组几何：V_θ 只差平面内旋转，V_γ 的视轴偏离在 [10°, 90°]。
4. 小规模数据集写出网格、场景与清单；场景掩码过小时给出警告。
"""


def signed_volume(mesh) -> float:
    tri = mesh.vertices[mesh.faces]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


class TestShapes(unittest.TestCase):
    def test_box_volume_and_diameter(self):
        box = build_box_mesh((100.0, 60.0, 40.0), subdivisions=2)
        self.assertAlmostEqual(signed_volume(box), 100.0 * 60.0 * 40.0, places=3)
        self.assertAlmostEqual(box.diameter, math.sqrt(100 ** 2 + 60 ** 2 + 40 ** 2), places=6)

    def test_cylinder_volume(self):
        cyl = build_cylinder_mesh(30.0, 50.0, segments=64)
        polygon = 0.5 * 64 * 30.0 ** 2 * math.sin(2 * math.pi / 64)
        self.assertAlmostEqual(signed_volume(cyl), polygon * 50.0, places=3)

    def test_generate_shapes_deterministic(self):
        a = generate_shapes(len(SHAPE_FAMILIES), seed=11)
        b = generate_shapes(len(SHAPE_FAMILIES), seed=11)
        for ma, mb in zip(a, b):
            self.assertEqual(ma.object_id, mb.object_id)
            np.testing.assert_array_equal(ma.vertices, mb.vertices)
            np.testing.assert_array_equal(ma.faces, mb.faces)
            self.assertTrue(MIN_DIAMETER_MM <= ma.diameter <= MAX_DIAMETER_MM)
            self.assertGreater(signed_volume(ma), 0.0)
        self.assertEqual([m.object_id.rsplit("_", 1)[0] for m in a], list(SHAPE_FAMILIES))
        with self.assertRaises(InvalidArgumentError):
            generate_shapes(0, seed=0)


class TestTriplets(unittest.TestCase):
    def test_geometry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            geom = draw_triplet_geometry(rng)
            _, r_gamma = decompose_rotation(geom.anchor)
            np.testing.assert_allclose(r_gamma, geom.anchor, atol=1e-9)
            angle = view_axis_angle(geom.anchor, geom.gamma_rotation)
            self.assertAlmostEqual(angle, geom.gamma_deg, places=6)
            self.assertTrue(GAMMA_RANGE_DEG[0] <= geom.gamma_deg <= GAMMA_RANGE_DEG[1])

    def test_sample_triplets(self):
        mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=2, object_id="box_t")
        first = sample_triplets(mesh, anchors=2, seed=3, size=32)
        again = sample_triplets(mesh, anchors=2, seed=3, size=32)
        self.assertEqual(len(first), 2)
        for t, u in zip(first, again):
            self.assertEqual(t.v.shape, (32, 32))
            np.testing.assert_array_equal(t.v, u.v)
            np.testing.assert_array_equal(t.v_gamma, u.v_gamma)
            self.assertAlmostEqual(inplane_angle(t.theta_gt), t.theta_deg, places=6)
            self.assertTrue(np.any(t.v != 0) and np.any(t.v_theta != 0))
        other = sample_triplets(mesh, anchors=2, seed=3, size=32, counter=1)
        self.assertFalse(np.array_equal(other[0].v, first[0].v))


class TestAugment(unittest.TestCase):
    def setUp(self):
        self.intr = CameraIntrinsics(fx=300.0, fy=300.0, px=31.5, py=31.5, width=64, height=64)
        yy, xx = np.mgrid[0:64, 0:64]
        depth = np.where((yy - 31.5) ** 2 + (xx - 31.5) ** 2 < 400, 700.0 + 0.5 * xx, 0.0)
        self.frame = DepthFrame(depth=depth, intrinsics=self.intr)

    def test_masked_resample_keeps_constant(self):
        depth = np.zeros((40, 40))
        depth[10:30, 10:30] = 900.0
        out = masked_resample(depth, (20, 20))
        self.assertTrue(np.allclose(out[out > 0], 900.0))

    def test_augment_deterministic_and_support(self):
        cfg = AugmentConfig()
        a = augment(self.frame, cfg, 7, scale_mm=100.0)
        b = augment(self.frame, cfg, 7, scale_mm=100.0)
        np.testing.assert_array_equal(a.depth, b.depth)
        # 背景像素保持为 0
        self.assertTrue(np.all(a.depth[self.frame.depth == 0] == 0))

    def test_resample_only(self):
        out = augment(self.frame, AugmentConfig.resample_only((0.8, 0.8)), 1, scale_mm=100.0)
        both = (out.depth > 0) & (self.frame.depth > 0)
        self.assertGreater(both.sum(), 0.8 * (self.frame.depth > 0).sum())
        self.assertLess(np.abs(out.depth[both] - self.frame.depth[both]).max(), 5.0)


class TestBuildDataset(unittest.TestCase):
    def test_small_dataset(self):
        cfg = RunConfig.model_validate({
            "seed": 4,
            "data": {"shape_count": 3, "held_out_fraction": 0.34, "scene_count": 2,
                     "scene_width": 160, "scene_height": 120, "scene_focal": 150.0},
        })
        with tempfile.TemporaryDirectory() as tmp:
            manifest = build_dataset(cfg, tmp, max_workers=2)
            self.assertEqual(read_manifest(tmp), manifest)
            self.assertEqual(len(manifest.split("held-out")), 1)
            self.assertEqual(len(manifest.scenes), 2)
            train_ids = {e.object_id for e in manifest.split("train")}
            for scene in manifest.scenes:
                self.assertIn(scene.object_id, train_ids)
                self.assertTrue(os.path.exists(os.path.join(tmp, scene.depth_path)))
            entry = manifest.objects[0]
            mesh = load_mesh(os.path.join(tmp, entry.mesh_path))
            self.assertAlmostEqual(mesh.diameter, entry.diameter, places=3)
            self.assertIn("laplace_dev", manifest.interpretations)

    def test_small_scene_warns(self):
        """物体太小，所有重采样都达不到掩码像素下限：记录警告并保留最后一次"""
        cfg = RunConfig.model_validate({"data": {"scene_distance_range": (1000.0, 1200.0)}})
        intr = CameraIntrinsics(fx=150.0, fy=150.0, px=79.5, py=59.5, width=160, height=120)
        tiny = build_box_mesh((20.0, 20.0, 20.0), object_id="tiny")
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertLogs("ove6d", level="WARNING") as logs:
                entry = _write_scene(0, [tiny], cfg, intr, tmp)
            self.assertTrue(any(str(SCENE_ATTEMPTS) in line for line in logs.output))
            self.assertEqual(entry.object_id, "tiny")
            self.assertTrue(os.path.exists(os.path.join(tmp, entry.mask_path)))


if __name__ == '__main__':
    unittest.main()
