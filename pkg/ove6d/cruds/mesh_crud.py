import os
import struct

import numpy as np
from pydantic import ValidationError

from ove6d.core.errors import DataError, MeshParseError
from ove6d.models.geometry import TriangleMesh

"""
网格文件的读写：OBJ（只解析 v/f 行）和小端二进制 PLY（只含顶点坐标与面片）
"""

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# =============================================================================
# OBJ
# =============================================================================
def _parse_obj_index(token: str, n_vertices: int, line_no: int) -> int:
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshParseError(f"无法解析面片索引 '{token}'", line=line_no) from None
    if idx == 0:
        raise MeshParseError("OBJ 索引从 1 开始，不能为 0", line=line_no)
    # 负索引相对于当前已读顶点
    idx = idx - 1 if idx > 0 else n_vertices + idx
    if not 0 <= idx < n_vertices:
        raise MeshParseError(f"面片索引 {token} 越界", line=line_no)
    return idx


def _read_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshParseError("顶点行至少需要 3 个坐标", line=line_no)
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshParseError(f"无法解析顶点坐标: {raw.strip()}", line=line_no) from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshParseError("面片至少需要 3 个顶点", line=line_no)
                idx = [_parse_obj_index(t, len(vertices), line_no) for t in parts[1:]]
                # 多边形按扇形三角化
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not vertices:
        raise MeshParseError("OBJ 文件中没有顶点")
    return np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _write_obj(vertices: np.ndarray, faces: np.ndarray, path: str, object_id: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {object_id}\n")
        for v in vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for tri in faces:
            f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")


# =============================================================================
# PLY
# =============================================================================
def _read_ply(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("不是合法的 PLY 文件头", offset=0)
    body_start = data.find(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()

    elements: list[tuple[str, int, list[tuple]]] = []
    for line_no, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise MeshParseError(f"只支持 binary_little_endian 格式: {line}", line=line_no)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError("property 出现在 element 之前", line=line_no)
            if parts[1] == "list":
                elements[-1][2].append(("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]], parts[4]))
            elif parts[1] in _PLY_TYPES:
                elements[-1][2].append(("scalar", _PLY_TYPES[parts[1]], parts[2]))
            else:
                raise MeshParseError(f"未知属性类型: {parts[1]}", line=line_no)

    offset = body_start
    vertices = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, props in elements:
        if all(p[0] == "scalar" for p in props):
            dtype = np.dtype([(p[2], "<" + p[1]) for p in props])
            size = dtype.itemsize * count
            if offset + size > len(data):
                raise MeshParseError(f"{name} 数据被截断", offset=len(data))
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            offset += size
            if name == "vertex":
                vertices = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        # 面片：逐条解析变长列表
        if len(props) != 1:
            raise MeshParseError(f"{name} 只支持单个 list 属性", offset=offset)
        _, count_t, index_t, _ = props[0]
        count_size = np.dtype(count_t).itemsize
        index_dtype = np.dtype("<" + index_t)
        tris: list[list[int]] = []
        for _ in range(count):
            if offset + count_size > len(data):
                raise MeshParseError("面片数据被截断", offset=offset)
            k = int(np.frombuffer(data, dtype="<" + count_t, count=1, offset=offset)[0])
            offset += count_size
            if offset + k * index_dtype.itemsize > len(data):
                raise MeshParseError("面片数据被截断", offset=offset)
            idx = np.frombuffer(data, dtype=index_dtype, count=k, offset=offset).astype(np.int64)
            offset += k * index_dtype.itemsize
            for j in range(1, k - 1):
                tris.append([idx[0], idx[j], idx[j + 1]])
        if name == "face":
            faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if vertices is None:
        raise MeshParseError("PLY 文件中没有 vertex 元素", offset=body_start)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshParseError("面片索引越界", offset=offset)
    return vertices, faces


def _write_ply(vertices: np.ndarray, faces: np.ndarray, path: str, object_id: str) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment object_id {object_id}\n"
        f"element vertex {len(vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    face_arr = np.zeros(len(faces), dtype=face_dtype)
    face_arr["n"] = 3
    face_arr["idx"] = faces
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.asarray(vertices, dtype="<f4").tobytes())
        f.write(face_arr.tobytes())


# =============================================================================
# 对外接口
# =============================================================================
def read_mesh_arrays(path: str) -> tuple[np.ndarray, np.ndarray]:
    """
    只解析文件，返回 (vertices, faces)，不做 TriangleMesh 的完整性校验。

    Raises:
        DataError: 文件不存在或扩展名不支持
        MeshParseError: 文件内容格式错误
    """
    if not os.path.exists(path):
        raise DataError(f"网格文件不存在: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        return _read_obj(path)
    if ext == ".ply":
        try:
            return _read_ply(path)
        except (KeyError, IndexError, ValueError, struct.error) as e:
            raise MeshParseError(f"PLY 解析失败: {e}") from e
    raise DataError(f"不支持的网格格式: {ext}")


def load_mesh(path: str, object_id: str | None = None) -> TriangleMesh:
    """读取网格并校验；object_id 默认取文件名"""
    vertices, faces = read_mesh_arrays(path)
    if object_id is None:
        object_id = os.path.splitext(os.path.basename(path))[0]
    try:
        return TriangleMesh(vertices=vertices, faces=faces, object_id=object_id)
    except ValidationError as e:
        raise DataError(f"网格不满足约束: {path}\n{e}") from e


def save_mesh(mesh: TriangleMesh, path: str) -> str:
    """按扩展名保存为 OBJ 或二进制 PLY"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        _write_obj(mesh.vertices, mesh.faces, path, mesh.object_id)
    elif ext == ".ply":
        _write_ply(mesh.vertices, mesh.faces, path, mesh.object_id)
    else:
        raise DataError(f"不支持的网格格式: {ext}")
    return path
