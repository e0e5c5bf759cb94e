import math
import os
import tempfile
import unittest

import numpy as np

from ove6d.core.errors import CheckpointFormatError, InvalidArgumentError
from ove6d.models.codebook import EMBEDDING_DIM
from ove6d.services.network_service import (
    CONFIG_RECORD,
    NetworkConfig,
    Ove6dNetwork,
    combined_loss,
    inplane_loss,
    parameter_shapes,
    stat_names,
    verification_loss,
    viewpoint_loss,
)
from ove6d.services.selftest_service import GRAD_TOL, micro_batch, micro_network_config, network_gradient_check
from ove6d.utils.geometry_utils import rot_z

"""
本测试文件用于测试网络结构、持久化、三个头的输出约定以及损失函数。
使用微型网络（16x16 输入）保证速度。
"""


class TestNetwork(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = micro_network_config()
        cls.net = Ove6dNetwork.init(cls.config, seed=1)
        cls.crops = np.random.default_rng(2).uniform(-0.5, 0.5, (3, 16, 16)).astype(np.float32)

    def test_init_deterministic(self):
        other = Ove6dNetwork.init(self.config, seed=1)
        for name in self.net.parameter_names:
            np.testing.assert_array_equal(self.net.params[name], other.params[name])
        self.assertEqual(self.net.parameter_count, sum(int(np.prod(s)) for s in parameter_shapes(self.config).values()))
        for name, c in stat_names(self.config).items():
            expected = 1.0 if name.endswith("running_var") else 0.0
            np.testing.assert_array_equal(self.net.stats[name], np.full(c, expected, dtype=np.float32))

    def test_encode(self):
        emb, feats = self.net.encode(self.crops)
        self.assertEqual(emb.shape, (3, EMBEDDING_DIM))
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)
        fs = self.config.feature_size
        self.assertEqual(feats.shape, (3, self.config.feature_channels, fs, fs))
        # 单张输入与批输入一致
        single, _ = self.net.encode(self.crops[1])
        np.testing.assert_allclose(single[0], emb[1], atol=1e-5)
        with self.assertRaises(InvalidArgumentError):
            self.net.encode(np.zeros((2, 20, 20)))

    def test_heads(self):
        _, feats = self.net.encode(self.crops)
        vec = self.net.regress_inplane(feats, feats[::-1])
        self.assertEqual(vec.shape, (3, 2))
        np.testing.assert_allclose(np.linalg.norm(vec, axis=1), 1.0, atol=1e-5)
        scores = self.net.verify_score(feats, feats[::-1], rot_z(30.0))
        self.assertEqual(scores.shape, (3,))
        with self.assertRaises(InvalidArgumentError):
            self.net.regress_inplane(feats, feats[:, :1])

    def test_save_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            loaded = Ove6dNetwork.load(self.net.save(os.path.join(tmp, "net.ovck")))
        self.assertEqual(loaded.config, self.config)
        a, _ = self.net.encode(self.crops)
        b, _ = loaded.encode(self.crops)
        np.testing.assert_array_equal(a, b)

    def test_missing_records(self):
        records = self.net.to_records()
        records.pop(CONFIG_RECORD)
        with self.assertRaises(CheckpointFormatError):
            Ove6dNetwork.from_records(records)
        records = self.net.to_records()
        records.pop(self.net.parameter_names[0])
        with self.assertRaises(CheckpointFormatError):
            Ove6dNetwork.from_records(records)

    def test_forward_triplets_stats(self):
        losses = self.net.forward_triplets(micro_batch(self.config, size=2, seed=3), train=True)
        self.assertTrue(np.isfinite(float(losses.total.data)))
        self.assertEqual(set(losses.new_stats), set(stat_names(self.config)))
        self.assertEqual(losses.viewpoint.shape, (2,))

    def test_network_gradients(self):
        errors = network_gradient_check(seed=0, max_entries=2)
        self.assertTrue(all(e < GRAD_TOL for e in errors.values()))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            NetworkConfig(backbone_channels=(4, 4), backbone_strides=(2,))
        with self.assertRaises(ValueError):
            NetworkConfig(backbone_channels=(4,), backbone_strides=(3,))
        self.assertEqual(NetworkConfig().feature_size, 8)


class TestLosses(unittest.TestCase):
    def test_viewpoint_loss(self):
        v = np.array([1.0, 0.0])
        self.assertEqual(viewpoint_loss(v, [1.0, 0.0], [0.0, 1.0]), 0.0)
        self.assertAlmostEqual(viewpoint_loss(v, [0.0, 1.0], [1.0, 0.0]), 1.1)
        self.assertAlmostEqual(verification_loss(0.2, 0.25), 0.15)

    def test_inplane_loss(self):
        depth = np.zeros((16, 16))
        depth[3:8, 4:12] = 2.0
        depth[8:13, 4:7] = 1.5
        self.assertAlmostEqual(inplane_loss(depth, rot_z(40.0), rot_z(40.0)), 0.0, places=9)
        self.assertGreater(inplane_loss(depth, rot_z(180.0), rot_z(0.0)), 0.05)
        with self.assertRaises(InvalidArgumentError):
            inplane_loss(np.zeros((16, 16)), np.eye(3), np.eye(3))
        # 旋转后与原图无重叠，余弦为 0
        quadrant = np.pad(np.ones((4, 4)), ((0, 4), (0, 4)))
        self.assertAlmostEqual(inplane_loss(quadrant, rot_z(180.0), rot_z(0.0)), -math.log(0.5), places=6)

    def test_combined_loss(self):
        self.assertAlmostEqual(combined_loss([1.0, 0.0], [0.0, 1.0], [0.0, 2.0]), (100.0 + 12.0) / 2.0)
        with self.assertRaises(InvalidArgumentError):
            combined_loss([1.0], [1.0, 2.0], [0.0])


if __name__ == '__main__':
    unittest.main()
