import os
import tempfile
import unittest

import numpy as np

from ove6d.core.errors import DataError, MeshParseError
from ove6d.cruds.mesh_crud import load_mesh, read_mesh_arrays, save_mesh
from ove6d.services.datagen_service import build_box_mesh

"""
本测试文件用于测试网格文件的读写。
测试流程如下：
1. 手写 OBJ（含四边形、负索引、注释）解析。
2. OBJ/PLY 写出再读回。
3. 错误输入带行号或偏移。
"""


class TestMeshCrud(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_three_vertex_obj_parses(self):
        """三个顶点一个面的 OBJ 可以解析，但不满足 TriangleMesh 的顶点数要求"""
        path = self._write_text("tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        vertices, faces = read_mesh_arrays(path)
        self.assertEqual(vertices.shape, (3, 3))
        np.testing.assert_array_equal(faces, [[0, 1, 2]])
        with self.assertRaises(DataError):
            load_mesh(path)

    def test_quad_and_negative_indices(self):
        text = (
            "# 注释\n"
            "v 0 0 0\nv 10 0 0\nv 10 10 0\nv 0 10 0\nv 5 5 10 # 顶点\n"
            "f 1/1 2/2 3/3 4/4\n"
            "f -5 -4 -1\n"
        )
        mesh = load_mesh(self._write_text("quad.obj", text), "quad")
        self.assertEqual(mesh.object_id, "quad")
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3], [0, 1, 4]])

    def test_obj_errors_carry_line(self):
        path = self._write_text("bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with self.assertRaises(MeshParseError) as ctx:
            read_mesh_arrays(path)
        self.assertEqual(ctx.exception.line, 4)
        path = self._write_text("zero.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with self.assertRaises(MeshParseError):
            read_mesh_arrays(path)

    def test_obj_ply_roundtrip(self):
        """写出再读回，面片不变，顶点在 f32/9 位有效数字内不变"""
        mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=2, object_id="box_rt")
        for ext in (".obj", ".ply"):
            path = save_mesh(mesh, os.path.join(self.tmp.name, f"box{ext}"))
            loaded = load_mesh(path)
            self.assertEqual(loaded.object_id, "box")
            np.testing.assert_array_equal(loaded.faces, mesh.faces)
            np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-4)

    def test_truncated_ply(self):
        mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=1)
        path = save_mesh(mesh, os.path.join(self.tmp.name, "box.ply"))
        with open(path, "rb") as f:
            data = f.read()
        with open(path, "wb") as f:
            f.write(data[:-7])
        with self.assertRaises(MeshParseError):
            read_mesh_arrays(path)

    def test_unsupported_and_missing(self):
        with self.assertRaises(DataError):
            read_mesh_arrays(self._write_text("a.stl", "solid"))
        with self.assertRaises(DataError):
            read_mesh_arrays(os.path.join(self.tmp.name, "missing.obj"))


if __name__ == '__main__':
    unittest.main()
