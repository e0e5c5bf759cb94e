import os
import tempfile
import time
import unittest

import numpy as np

from ove6d.core.run_config import DataConfig, RunConfig, TrainConfig
from ove6d.cruds.checkpoint_crud import checkpoint_to_bytes
from ove6d.models.pose import EstimateConfig
from ove6d.services.codebook_service import CodebookRegistry, build_codebook
from ove6d.services.datagen_service import build_dataset
from ove6d.services.metrics_service import (
    ablation_harness,
    evaluate_scenes,
    meshes_from_manifest,
    occlusion_sweep,
    recall_for,
    scenes_from_manifest,
)
from ove6d.services.network_service import NetworkConfig, Ove6dNetwork
from ove6d.services.pipeline_service import PoseEstimator
from ove6d.services.train_service import evaluate_held_out, train
from ove6d.utils.seed_utils import derive_seed

"""
验收测试（依赖训练）：
1. 24 个程序化物体（20 个训练，4 个留出），默认配置训练。
2. 留出物体上的三元组排序准确率与平面内回归误差。
3. 100 个无噪声场景上的完整级联召回率（有/无 ICP），N/K/P 消融趋势，遮挡下的检索准确率。
4. 固定种子的训练与估计结果逐位相同，单个物体 N=4000 的码本构建耗时。
台式机 CPU 上需要数小时，只在设置 OVE6D_RUN_ACCEPTANCE=1 时运行。
"""

RUN_ACCEPTANCE = os.environ.get("OVE6D_RUN_ACCEPTANCE") == "1"
SEED = 0


@unittest.skipUnless(RUN_ACCEPTANCE, "设置 OVE6D_RUN_ACCEPTANCE=1 运行验收测试")
class TestTrainedPipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cfg = RunConfig(seed=SEED, data=DataConfig(shape_count=24, held_out_fraction=4 / 24, scene_count=100))
        manifest = build_dataset(cfg, cls.tmp.name)
        cls.train_meshes = meshes_from_manifest(manifest, cls.tmp.name, "train")
        cls.held_meshes = meshes_from_manifest(manifest, cls.tmp.name, "held-out")
        cls.scenes = scenes_from_manifest(manifest, cls.tmp.name)

        net = Ove6dNetwork.init(NetworkConfig.from_train(cfg.train), seed=derive_seed(SEED, "init"))
        cls.network = train(net, list(cls.train_meshes.values()), cfg.train, seed=SEED).network

        cls.codebook_seconds = []
        codebooks = []
        for mesh in cls.train_meshes.values():
            start = time.perf_counter()
            codebooks.append(build_codebook(cls.network, mesh, n=4000))
            cls.codebook_seconds.append(time.perf_counter() - start)
        cls.registry = CodebookRegistry(codebooks)
        cls.estimator = PoseEstimator(cls.network, cls.registry, cls.train_meshes, EstimateConfig())
        cls.points = {oid: cls.estimator.model_points(oid) for oid in cls.train_meshes}

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def _recall(self, estimator: PoseEstimator) -> float:
        # 程序化形状多数带对称性，统一按 ADD-S 计
        records, _ = evaluate_scenes(estimator, self.scenes)
        return recall_for(records, self.points, len(self.scenes), 0.1, True)

    def test_held_out_objectives(self):
        report = evaluate_held_out(self.network, list(self.held_meshes.values()), seed=SEED, min_gamma=15.0)
        self.assertGreaterEqual(report.triplet_accuracy, 0.90)
        self.assertLess(report.inplane_median_error_deg, 10.0)

    def test_closed_loop_recall(self):
        start = time.perf_counter()
        self.assertGreaterEqual(self._recall(self.estimator), 0.80)
        no_icp = PoseEstimator(self.network, self.registry, self.train_meshes, EstimateConfig(icp="off"))
        self.assertGreaterEqual(self._recall(no_icp), 0.60)
        self.assertLess(time.perf_counter() - start, 1200.0)

    def test_ablation_trends(self):
        rows = ablation_harness(self.estimator, self.scenes, {"n": [1000, 4000], "k": [1, 50], "p": [1, 5]}, symmetric=True)
        recall = {(r.parameter, r.value): r.recall for r in rows}
        self.assertGreaterEqual(recall[("n", 4000)], recall[("n", 1000)])
        self.assertGreaterEqual(recall[("k", 50)], recall[("k", 1)])
        self.assertGreaterEqual(recall[("p", 5)], recall[("p", 1)])

    def test_occlusion_robustness(self):
        accuracy = occlusion_sweep(self.estimator, self.scenes, [0.0, 0.3], threshold_deg=15.0, seed=SEED)
        self.assertLess(accuracy["0.00"] - accuracy["0.30"], 0.10)

    def test_codebook_build_time(self):
        self.assertLessEqual(min(self.codebook_seconds), 60.0)

    def test_estimate_deterministic(self):
        scene = self.scenes[0]
        first = self.estimator.estimate(scene.depth, scene.mask, scene.object_id).final
        second = self.estimator.estimate(scene.depth, scene.mask, scene.object_id).final
        self.assertEqual(first.rotation.tobytes(), second.rotation.tobytes())
        self.assertEqual(first.translation.tobytes(), second.translation.tobytes())


@unittest.skipUnless(RUN_ACCEPTANCE, "设置 OVE6D_RUN_ACCEPTANCE=1 运行验收测试")
class TestTrainingDeterminism(unittest.TestCase):
    def test_fixed_seed_training(self):
        cfg = RunConfig(seed=SEED, data=DataConfig(shape_count=4, held_out_fraction=0.0, scene_count=0))
        train_cfg = TrainConfig(epochs=1, steps_per_epoch=3, anchors_per_object=4, objects_per_batch=2,
                                input_size=32, backbone_channels=[8, 16], backbone_strides=[2, 2], shards=2)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = build_dataset(cfg, tmp)
            meshes = list(meshes_from_manifest(manifest, tmp).values())
        outputs = []
        for max_workers in (1, 4):
            net = Ove6dNetwork.init(NetworkConfig.from_train(train_cfg), seed=derive_seed(SEED, "init"))
            result = train(net, meshes, train_cfg, seed=SEED, max_workers=max_workers)
            outputs.append(checkpoint_to_bytes(result.network.to_records()))
        self.assertEqual(outputs[0], outputs[1])


if __name__ == '__main__':
    unittest.main()
