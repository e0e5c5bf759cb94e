import unittest
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ove6d.core.errors import CodebookNotFoundError, EstimationFailureError, InvalidArgumentError, NoObjectError
from ove6d.models.frames import DepthFrame, MaskFrame
from ove6d.models.geometry import CameraIntrinsics, Pose
from ove6d.models.pose import EstimateConfig, PoseHypothesis
from ove6d.services.codebook_service import CodebookRegistry, build_codebook
from ove6d.services.datagen_service import build_box_mesh
from ove6d.services.network_service import Ove6dNetwork
from ove6d.services.pipeline_service import (
    PoseEstimator,
    corrected_location,
    hypothesis_quality,
    icp_refine,
    occlude_mask,
    refine_location,
    select_hypothesis,
    subsample_points,
)
from ove6d.services.preprocess_service import localize
from ove6d.services.render_service import render_depth, render_mask
from ove6d.services.selftest_service import micro_network_config
from ove6d.utils.geometry_utils import geodesic_angle, rot_x, rot_y, rot_z, sample_surface_points

"""
本测试文件用于测试推理级联的各个环节。
测试流程如下：
1. 位置修正：t_est = 2·t_init - t_syn，对真值旋转能减小平移误差。
2. 质量评分：真值位姿 q = 0，错位 q = 1，未观测像素按开关计数。
3. 选择顺序、ICP 收敛与退化跳过、遮挡掩码。
4. 微型网络上的端到端级联：结构、错误与并发调用。
"""

INTR = CameraIntrinsics(fx=200.0, fy=200.0, px=79.5, py=59.5, width=160, height=120)


def _hyp(q: float, score: float, rank: int) -> PoseHypothesis:
    return PoseHypothesis(rotation=np.eye(3), translation=[0.0, 0.0, 500.0], verify_score=score,
                          quality_q=q, source_rank=rank)


class TestLocationAndQuality(unittest.TestCase):
    def setUp(self):
        self.mesh = build_box_mesh((100.0, 60.0, 40.0), subdivisions=2)
        self.pose = Pose(rotation=rot_x(30.0) @ rot_y(20.0), translation=[10.0, -5.0, 600.0])
        self.depth = render_depth(self.mesh, self.pose, INTR)
        self.mask = MaskFrame(bits=self.depth.depth > 0)

    def test_corrected_location(self):
        np.testing.assert_allclose(corrected_location([1.0, 2.0, 10.0], [0.0, 1.0, 12.0]), [2.0, 3.0, 8.0])

    def test_refine_location_improves(self):
        t_init = localize(self.depth, self.mask).t_init
        r = self.pose.rotation
        naive = t_init - r @ self.mesh.center
        refined = refine_location(self.mesh, r, t_init, INTR)
        true_t = np.asarray(self.pose.translation)
        self.assertLess(np.linalg.norm(refined - true_t), np.linalg.norm(naive - true_t))

    def test_quality(self):
        observed = self.depth.masked(self.mask)
        d = self.mesh.diameter
        self.assertEqual(hypothesis_quality(self.mesh, self.pose, observed, d), (0.0, False))
        far = Pose(rotation=self.pose.rotation, translation=np.asarray(self.pose.translation) + [0.0, 0.0, 0.5 * d])
        q, degenerate = hypothesis_quality(self.mesh, far, observed, d)
        self.assertGreater(q, 0.95)
        self.assertFalse(degenerate)
        behind = Pose(rotation=np.eye(3), translation=[0.0, 0.0, -1000.0])
        self.assertEqual(hypothesis_quality(self.mesh, behind, observed, d), (1.0, True))

    def test_quality_unobserved_pixels(self):
        """观测深度只保留左半部分：计为离群点时 q 约等于被去掉的比例，否则为 0"""
        bits = self.mask.bits.copy()
        cols = np.nonzero(bits.any(axis=0))[0]
        bits[:, cols[len(cols) // 2]:] = False
        observed = self.depth.masked(MaskFrame(bits=bits))
        d = self.mesh.diameter
        removed = 1.0 - bits.sum() / self.mask.count
        q_out, _ = hypothesis_quality(self.mesh, self.pose, observed, d, unobserved_as_outlier=True)
        q_in, _ = hypothesis_quality(self.mesh, self.pose, observed, d, unobserved_as_outlier=False)
        self.assertAlmostEqual(q_out, removed, places=9)
        self.assertEqual(q_in, 0.0)

    def test_quality_monotone_along_ray(self):
        """沿平移射线远离真值的 5 个扰动点上 q 单调不减"""
        observed = self.depth.masked(self.mask)
        d = self.mesh.diameter
        t = np.asarray(self.pose.translation)
        ray = t / np.linalg.norm(t)
        qs = []
        for frac in np.linspace(0.0, 0.5, 5):
            pose = Pose(rotation=self.pose.rotation, translation=t + frac * d * ray)
            qs.append(hypothesis_quality(self.mesh, pose, observed, d)[0])
        self.assertEqual(qs[0], 0.0)
        self.assertGreater(qs[-1], 0.95)
        for near, far in zip(qs, qs[1:]):
            self.assertLessEqual(near, far)

    def test_select_hypothesis(self):
        hyps = [_hyp(0.2, 0.5, 0), _hyp(0.1, 0.3, 3), _hyp(0.1, 0.9, 4), _hyp(0.1, 0.9, 2)]
        self.assertEqual(select_hypothesis(hyps).source_rank, 2)
        with self.assertRaises(EstimationFailureError):
            select_hypothesis([])


class TestIcpAndMask(unittest.TestCase):
    def test_icp_converges(self):
        mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=2)
        model = sample_surface_points(mesh, 1000, seed=1)
        truth = Pose(rotation=rot_z(20.0) @ rot_x(10.0), translation=[5.0, 3.0, 700.0])
        scene = truth.transform(model)
        init = Pose(rotation=rot_y(3.0) @ truth.rotation, translation=np.asarray(truth.translation) + [4.0, -2.0, 3.0])
        res = icp_refine(model, scene, init, max_iters=60, tol=1e-6)
        self.assertFalse(res.skipped)
        self.assertLess(geodesic_angle(res.pose.rotation, truth.rotation), 1.0)
        self.assertLess(np.linalg.norm(res.pose.translation - truth.translation), 2.0)
        self.assertLessEqual(res.rms_history[-1], res.rms_history[0])

    def test_icp_pure_translation_one_iteration(self):
        """场景 = 模型平移 (10, -5, 3) mm，从单位位姿出发一次迭代即精确恢复平移"""
        model = np.array([[x, y, z] for x in (-100.0, 100.0) for y in (-60.0, 60.0) for z in (-40.0, 40.0)])
        offset = np.array([10.0, -5.0, 3.0])
        res = icp_refine(model, model + offset, Pose.identity(), max_iters=1)
        self.assertEqual(res.iterations, 1)
        np.testing.assert_allclose(res.pose.translation, offset, atol=1e-9)
        np.testing.assert_allclose(res.pose.rotation, np.eye(3), atol=1e-12)
        self.assertLess(res.rms, 1e-9)

    def test_icp_degenerate(self):
        line = np.stack([np.linspace(0, 10, 20), np.zeros(20), np.zeros(20)], axis=1)
        init = Pose.identity()
        res = icp_refine(line, line, init)
        self.assertTrue(res.skipped)
        self.assertIsNone(res.rms)
        self.assertIs(res.pose, init)

    def test_subsample(self):
        pts = np.arange(30, dtype=np.float64).reshape(10, 3)
        self.assertIs(subsample_points(pts, 20), pts)
        out = subsample_points(pts, 4)
        np.testing.assert_array_equal(out[[0, -1]], pts[[0, -1]])

    def test_occlude_mask(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[5:25, 5:25] = True
        mask = MaskFrame(bits=bits)
        occluded = occlude_mask(mask, 0.25, seed=3)
        self.assertEqual(occluded.count, 300)
        self.assertFalse(np.any(occluded.bits & ~bits))
        np.testing.assert_array_equal(occlude_mask(mask, 0.25, seed=3).bits, occluded.bits)
        self.assertEqual(occlude_mask(mask, 0.0).count, 400)
        with self.assertRaises(InvalidArgumentError):
            occlude_mask(mask, 1.0)


class TestPoseEstimator(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        net = Ove6dNetwork.init(micro_network_config(), seed=0)
        cls.mesh = build_box_mesh((100.0, 60.0, 40.0), subdivisions=2, object_id="box_e")
        cb = build_codebook(net, cls.mesh, n=8, max_workers=1)
        cls.config = EstimateConfig(n_views=8, k_retrieval=4, p_proposals=2, icp="after-selection",
                                    min_mask_pixels=20)
        cls.estimator = PoseEstimator(net, CodebookRegistry([cb]), {"box_e": cls.mesh}, cls.config, max_workers=2)
        pose = Pose(rotation=rot_x(25.0) @ rot_z(40.0), translation=[0.0, 10.0, 600.0])
        cls.depth = render_depth(cls.mesh, pose, INTR)
        cls.mask = render_mask(cls.mesh, pose, INTR)

    def test_estimate_structure(self):
        result = self.estimator.estimate(self.depth, self.mask, "box_e")
        self.assertEqual(result.object_id, "box_e")
        self.assertEqual(len(result.hypotheses), 2)
        self.assertTrue(0.0 <= result.final.quality_q <= 1.0)
        self.assertIsNotNone(result.final.translation_refined)
        self.assertIsNotNone(result.final.rotation_knn)
        for key in ("preprocess", "encode", "retrieve", "candidates", "regress", "verify", "refine", "select",
                    "icp", "total"):
            self.assertIn(key, result.timings_ms)
        # 假设按验证分数降序
        scores = [h.verify_score for h in result.hypotheses]
        self.assertEqual(scores, sorted(scores, reverse=True))

    def test_icp_modes(self):
        off = PoseEstimator(self.estimator.network, self.estimator.registry, self.estimator.meshes,
                            self.config.model_copy(update={"icp": "off"}))
        result = off.estimate(self.depth, self.mask, "box_e")
        self.assertIsNone(result.final.icp_rms)
        self.assertNotIn("icp", result.timings_ms)
        np.testing.assert_array_equal(result.final.translation, result.final.translation_refined)

    def test_icp_order_irrelevant_for_single_proposal(self):
        """P = 1 时选择前后做 ICP 得到同一个最终位姿"""
        single = self.config.model_copy(update={"p_proposals": 1})
        finals = {}
        for mode in ("before-selection", "after-selection"):
            est = PoseEstimator(self.estimator.network, self.estimator.registry, self.estimator.meshes,
                                single.model_copy(update={"icp": mode}))
            result = est.estimate(self.depth, self.mask, "box_e")
            self.assertEqual(len(result.hypotheses), 1)
            finals[mode] = result.final
        before, after = finals["before-selection"], finals["after-selection"]
        np.testing.assert_array_equal(before.rotation, after.rotation)
        np.testing.assert_array_equal(before.translation, after.translation)
        self.assertEqual(before.quality_q, after.quality_q)
        self.assertEqual(before.icp_rms, after.icp_rms)

    def test_errors(self):
        with self.assertRaises(CodebookNotFoundError):
            self.estimator.estimate(self.depth, self.mask, "unknown")
        tiny = np.zeros_like(self.mask.bits)
        tiny[60, 80] = True
        with self.assertRaises(NoObjectError):
            self.estimator.estimate(self.depth, MaskFrame(bits=tiny), "box_e")

    def test_concurrent_calls(self):
        """同一个估计器被多个线程同时调用，结果与串行一致"""
        serial = self.estimator.estimate(self.depth, self.mask, "box_e").final
        with ThreadPoolExecutor(max_workers=3) as executor:
            results = list(executor.map(lambda _: self.estimator.estimate(self.depth, self.mask, "box_e"), range(3)))
        for r in results:
            np.testing.assert_allclose(r.final.rotation, serial.rotation, atol=1e-9)
            np.testing.assert_allclose(r.final.translation, serial.translation, atol=1e-6)
        self.assertIs(self.estimator.model_points("box_e"), self.estimator.model_points("box_e"))


if __name__ == '__main__':
    unittest.main()
