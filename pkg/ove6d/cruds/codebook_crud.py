import glob
import os
import struct

import numpy as np
from pydantic import ValidationError

from ove6d.core.errors import CodebookFormatError, CodebookTruncatedError, DataError
from ove6d.models.codebook import EMBEDDING_DIM, ViewpointCodebook

"""
视点码本文件（OVCB）的读写，小端：
magic "OVCB" | u16 版本 | u16 长度 + UTF-8 object_id | u16 长度 + UTF-8 mesh_ref |
f32 直径 | f32 f_base | u32 维度(=64) | u32 N | N × (64 f32 嵌入 + 9 f32 行优先旋转)
"""

CODEBOOK_MAGIC = b"OVCB"
CODEBOOK_VERSION = 1
CODEBOOK_SUFFIX = ".ovcb"


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataError("字符串过长，无法写入码本")
    return struct.pack("<H", len(raw)) + raw


def codebook_to_bytes(cb: ViewpointCodebook) -> bytes:
    n = cb.size
    records = np.concatenate(
        [np.asarray(cb.embeddings, dtype="<f4"), np.asarray(cb.rotations, dtype="<f4").reshape(n, 9)], axis=1
    )
    return b"".join([
        CODEBOOK_MAGIC,
        struct.pack("<H", CODEBOOK_VERSION),
        _pack_str(cb.object_id),
        _pack_str(cb.mesh_ref),
        struct.pack("<ffII", cb.diameter, cb.f_base, EMBEDDING_DIM, n),
        records.tobytes(),
    ])


class _Reader:
    """带越界检查的顺序读取"""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CodebookTruncatedError(
                f"码本在读取 {what} 时被截断：偏移 {self.offset}，需要 {size} 字节，剩余 {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (length,) = self.unpack("<H", what)
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodebookFormatError(f"{what} 不是合法的 UTF-8") from e


def codebook_from_bytes(data: bytes) -> ViewpointCodebook:
    """
    Raises:
        CodebookFormatError: 魔数、版本或维度不匹配
        CodebookTruncatedError: 长度字段与实际数据不符
    """
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != CODEBOOK_MAGIC:
        raise CodebookFormatError(f"码本魔数不匹配: {magic!r}")
    (version,) = reader.unpack("<H", "version")
    if version != CODEBOOK_VERSION:
        raise CodebookFormatError(f"码本版本不支持: {version}")
    object_id = reader.string("object_id")
    mesh_ref = reader.string("mesh_ref")
    diameter, f_base, dim, n = reader.unpack("<ffII", "header")
    if dim != EMBEDDING_DIM:
        raise CodebookFormatError(f"嵌入维度应为 {EMBEDDING_DIM}，文件中为 {dim}")
    payload = reader.take(n * (dim + 9) * 4, "records")
    records = np.frombuffer(payload, dtype="<f4").reshape(n, dim + 9)
    try:
        return ViewpointCodebook(
            object_id=object_id,
            diameter=float(diameter),
            f_base=float(f_base),
            embeddings=records[:, :dim],
            rotations=records[:, dim:].reshape(n, 3, 3),
            mesh_ref=mesh_ref,
        )
    except ValidationError as e:
        raise CodebookFormatError(f"码本内容不合法: {e}") from e


def save_codebook(cb: ViewpointCodebook, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(codebook_to_bytes(cb))
    return path


def load_codebook(path: str) -> ViewpointCodebook:
    if not os.path.exists(path):
        raise DataError(f"码本文件不存在: {path}")
    with open(path, "rb") as f:
        return codebook_from_bytes(f.read())


def load_codebook_dir(directory: str) -> list[ViewpointCodebook]:
    """读取目录下所有 .ovcb 文件，按文件名排序"""
    if not os.path.isdir(directory):
        raise DataError(f"码本目录不存在: {directory}")
    return [load_codebook(p) for p in sorted(glob.glob(os.path.join(directory, f"*{CODEBOOK_SUFFIX}")))]
