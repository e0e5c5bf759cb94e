import os
import struct

import numpy as np

from ove6d.core.errors import CheckpointFormatError, DataError

"""
网络权重文件（OVCK）的读写，小端：
magic "OVCK" | u16 版本 | u32 记录数 |
每条记录：u16 名称长度 + 名称 | u8 dtype 标记 | u8 维数 | 维数 × u32 | 原始数据
dtype 标记 0 = f32，1 = u8（原始字节，用于网络结构配置）
"""

CHECKPOINT_MAGIC = b"OVCK"
CHECKPOINT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAGS = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


def checkpoint_to_bytes(records: dict[str, np.ndarray]) -> bytes:
    """按字典顺序写出记录；非 u8 数组统一转换为 f32"""
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(records))]
    for name, value in records.items():
        arr = np.asarray(value)
        arr = arr.astype("u1") if arr.dtype == np.uint8 else arr.astype("<f4")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    """
    Raises:
        CheckpointFormatError: 魔数/版本不匹配、未知 dtype 或数据被截断
    """
    offset = 0

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(data):
            raise CheckpointFormatError(f"权重文件在读取 {what} 时被截断（偏移 {offset}）")
        chunk = data[offset:offset + size]
        offset += size
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("权重文件魔数不匹配")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"权重文件版本不支持: {version}")

    records: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"记录 {i} 名称长度"))
        name = take(name_len, f"记录 {i} 名称").decode("utf-8", errors="strict")
        tag, rank = struct.unpack("<BB", take(2, f"{name} dtype"))
        if tag not in _DTYPES:
            raise CheckpointFormatError(f"{name} 的 dtype 标记未知: {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} 维度"))
        dtype = _DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        records[name] = np.frombuffer(take(size, f"{name} 数据"), dtype=dtype).reshape(dims).copy()
    return records


def save_checkpoint(records: dict[str, np.ndarray], path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(checkpoint_to_bytes(records))
    return path


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise DataError(f"权重文件不存在: {path}")
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
