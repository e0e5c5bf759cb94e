import os
import tempfile
import unittest

import numpy as np

from ove6d.core.errors import CodebookNotFoundError, InvalidArgumentError
from ove6d.cruds.codebook_crud import codebook_from_bytes, codebook_to_bytes
from ove6d.models.codebook import EMBEDDING_DIM, ViewpointCodebook
from ove6d.services.codebook_service import (
    CodebookRegistry,
    build_codebook,
    build_codebooks,
    codebook_payload_bytes,
    rebuild_codebook,
    render_view_crop,
    retrieve,
)
from ove6d.services.datagen_service import build_box_mesh
from ove6d.services.network_service import Ove6dNetwork
from ove6d.services.selftest_service import micro_network_config
from ove6d.utils.geometry_utils import sample_viewpoints

"""
本测试文件用于测试码本构建、检索与注册表。
测试流程如下：
1. 同一网络与物体构建两次，码本逐位相同，且与线程数无关。
2. 检索：降序、相同相似度按序号、k 与查询向量校验。
3. 注册表的重复注册与缺失查询。
"""


def _codebook(embeddings: np.ndarray, object_id: str = "obj") -> ViewpointCodebook:
    return ViewpointCodebook(
        object_id=object_id, diameter=100.0, f_base=5.0,
        embeddings=embeddings, rotations=sample_viewpoints(len(embeddings)),
    )


class TestBuildCodebook(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.net = Ove6dNetwork.init(micro_network_config(), seed=0)
        cls.mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=2, object_id="box_cb")

    def test_deterministic_and_thread_independent(self):
        a = build_codebook(self.net, self.mesh, n=12, batch_size=5, max_workers=1)
        b = build_codebook(self.net, self.mesh, n=12, batch_size=5, max_workers=3)
        self.assertEqual(codebook_to_bytes(a), codebook_to_bytes(b))
        self.assertEqual(a.size, 12)
        np.testing.assert_allclose(np.linalg.norm(a.embeddings, axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(a.rotations, sample_viewpoints(12), atol=1e-6)
        self.assertEqual(codebook_payload_bytes(a), 12 * (EMBEDDING_DIM + 9) * 4)

    def test_render_view_crop(self):
        crop = render_view_crop(self.mesh, sample_viewpoints(12)[4], 5.0, 16)
        self.assertEqual(crop.shape, (16, 16))
        self.assertTrue(np.any(crop != 0))

    def test_scalars_survive_file_round_trip(self):
        """直径与基准焦距在构建时取 f32，保存再读取后完全相等"""
        mesh = build_box_mesh((81.3, 47.9, 30.7), subdivisions=2, object_id="box_f32")
        self.assertNotEqual(mesh.diameter, float(np.float32(mesh.diameter)))
        cb = build_codebook(self.net, mesh, n=4, f_base=5.3, max_workers=1)
        self.assertEqual(cb.diameter, float(np.float32(mesh.diameter)))
        loaded = codebook_from_bytes(codebook_to_bytes(cb))
        self.assertEqual(loaded.diameter, cb.diameter)
        self.assertEqual(loaded.f_base, cb.f_base)
        self.assertEqual(codebook_to_bytes(loaded), codebook_to_bytes(cb))

    def test_rebuild_and_save(self):
        cb = build_codebook(self.net, self.mesh, n=6, max_workers=1)
        self.assertIs(rebuild_codebook(cb, self.net, self.mesh, 6), cb)
        self.assertEqual(rebuild_codebook(cb, self.net, self.mesh, 8).size, 8)
        with tempfile.TemporaryDirectory() as tmp:
            paths = build_codebooks(self.net, [self.mesh], tmp, n=6, mesh_refs={"box_cb": "meshes/box_cb.obj"})
            self.assertEqual([os.path.basename(p) for p in paths], ["box_cb.ovcb"])
            registry = CodebookRegistry.from_dir(tmp)
        self.assertEqual(registry.get("box_cb").mesh_ref, "meshes/box_cb.obj")


class TestRetrieve(unittest.TestCase):
    def setUp(self):
        e = np.zeros((5, EMBEDDING_DIM))
        e[0, 0] = 1.0
        e[1, 1] = 1.0
        e[2, 0] = 1.0
        e[3, :2] = [np.sqrt(0.5), np.sqrt(0.5)]
        e[4, 2] = 1.0
        self.cb = _codebook(e)

    def test_order_and_ties(self):
        q = np.zeros(EMBEDDING_DIM)
        q[0] = 1.0
        hits = retrieve(self.cb, q, 5)
        self.assertEqual([h.index for h in hits], [0, 2, 3, 1, 4])
        self.assertAlmostEqual(hits[2].similarity, np.sqrt(0.5))
        np.testing.assert_array_equal(hits[1].rotation, self.cb.rotation(2))
        self.assertEqual(len(retrieve(self.cb, q, 1)), 1)

    def test_invalid(self):
        q = np.zeros(EMBEDDING_DIM)
        q[0] = 1.0
        for k in (0, 6):
            with self.assertRaises(InvalidArgumentError):
                retrieve(self.cb, q, k)
        with self.assertRaises(InvalidArgumentError):
            retrieve(self.cb, q * 2.0, 1)
        with self.assertRaises(InvalidArgumentError):
            retrieve(self.cb, q[:10], 1)


class TestRegistry(unittest.TestCase):
    def test_register(self):
        e = np.eye(4, EMBEDDING_DIM)
        registry = CodebookRegistry([_codebook(e, "b"), _codebook(e, "a")])
        self.assertEqual(registry.object_ids, ["a", "b"])
        self.assertIn("a", registry)
        self.assertEqual(len(registry), 2)
        with self.assertRaises(InvalidArgumentError):
            registry.register(_codebook(e, "a"))
        registry.register(_codebook(e * -1.0, "a"), replace=True)
        self.assertEqual(float(registry.get("a").embeddings[0, 0]), -1.0)
        with self.assertRaises(CodebookNotFoundError):
            registry.get("missing")


if __name__ == '__main__':
    unittest.main()
