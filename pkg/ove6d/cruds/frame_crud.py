import json
import os
import struct

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ove6d.core.errors import DataError
from ove6d.models.frames import DepthFrame, MaskFrame
from ove6d.models.geometry import CameraIntrinsics

"""
深度图/掩码的读写：
- 16 位灰度 PNG（值 = 毫米 / depth_scale，饱和到 65535）+ JSON 附属文件（内参与比例）
- OVDF 原始 f32 容器
"""

OVDF_MAGIC = b"OVDF"
OVDF_VERSION = 1
_OVDF_HEADER = struct.Struct("<4sHII4d")
PNG_MAX = 65535


class DepthSidecar(BaseModel):
    """深度 PNG 的附属文件"""
    model_config = ConfigDict(extra="forbid")

    intrinsics: CameraIntrinsics
    depth_scale: float = Field(default=1.0, gt=0, description="每个 PNG 单位对应的毫米数")


def sidecar_path(png_path: str) -> str:
    return os.path.splitext(png_path)[0] + ".json"


# =============================================================================
# 内参
# =============================================================================
def save_intrinsics(intr: CameraIntrinsics, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(intr.model_dump_json(indent=2))
    return path


def load_intrinsics(path: str) -> CameraIntrinsics:
    """读取内参 JSON，既接受纯内参也接受深度附属文件"""
    if not os.path.exists(path):
        raise DataError(f"内参文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        if "intrinsics" in payload:
            return DepthSidecar.model_validate(payload).intrinsics
        return CameraIntrinsics.model_validate(payload)
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"内参文件格式错误: {path}\n{e}") from e


# =============================================================================
# PNG
# =============================================================================
def save_depth_png(frame: DepthFrame, path: str, depth_scale: float = 1.0) -> str:
    """保存 16 位深度 PNG 与附属文件，返回 PNG 路径"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    values = np.clip(np.rint(frame.depth.astype(np.float64) / depth_scale), 0, PNG_MAX).astype(np.uint16)
    Image.fromarray(values).save(path)
    sidecar = DepthSidecar(intrinsics=frame.intrinsics, depth_scale=depth_scale)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        f.write(sidecar.model_dump_json(indent=2))
    return path


def _read_png(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"图像文件不存在: {path}")
    try:
        with Image.open(path) as img:
            return np.array(img)
    except OSError as e:
        raise DataError(f"无法读取图像: {path}") from e


def load_depth_png(path: str, intrinsics: CameraIntrinsics | None = None) -> DepthFrame:
    """
    读取 16 位深度 PNG。intrinsics 为空时从附属文件读取内参与比例。

    Raises:
        DataError: 文件缺失、尺寸与内参不一致或深度越界
    """
    raw = _read_png(path)
    if raw.ndim != 2:
        raise DataError(f"深度 PNG 必须是单通道: {path}")
    scale = 1.0
    side = sidecar_path(path)
    if os.path.exists(side):
        try:
            with open(side, "r", encoding="utf-8") as f:
                sidecar = DepthSidecar.model_validate_json(f.read())
        except ValidationError as e:
            raise DataError(f"附属文件格式错误: {side}\n{e}") from e
        scale = sidecar.depth_scale
        intrinsics = intrinsics or sidecar.intrinsics
    if intrinsics is None:
        raise DataError(f"缺少内参: {path}")
    try:
        return DepthFrame(depth=raw.astype(np.float64) * scale, intrinsics=intrinsics)
    except ValidationError as e:
        raise DataError(f"深度图不满足约束: {path}\n{e}") from e


def save_mask_png(mask: MaskFrame, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(mask.bits.astype(np.uint8) * 255).save(path)
    return path


def load_mask_png(path: str) -> MaskFrame:
    """读取掩码 PNG，任意非零值为 True"""
    raw = _read_png(path)
    if raw.ndim == 3:
        raw = raw[..., 0]
    return MaskFrame(bits=raw != 0)


# =============================================================================
# OVDF
# =============================================================================
def save_depth_raw(frame: DepthFrame, path: str) -> str:
    """magic OVDF, u16 版本, u32 宽, u32 高, 4×f64 内参, 然后行优先 f32 深度，全部小端"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    intr = frame.intrinsics
    header = _OVDF_HEADER.pack(OVDF_MAGIC, OVDF_VERSION, intr.width, intr.height, intr.fx, intr.fy, intr.px, intr.py)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.asarray(frame.depth, dtype="<f4").tobytes())
    return path


def load_depth_raw(path: str) -> DepthFrame:
    if not os.path.exists(path):
        raise DataError(f"深度文件不存在: {path}")
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _OVDF_HEADER.size:
        raise DataError(f"OVDF 文件头被截断: {path}")
    magic, version, width, height, fx, fy, px, py = _OVDF_HEADER.unpack_from(data)
    if magic != OVDF_MAGIC:
        raise DataError(f"OVDF 魔数不匹配: {magic!r}")
    if version != OVDF_VERSION:
        raise DataError(f"OVDF 版本不支持: {version}")
    expected = _OVDF_HEADER.size + 4 * width * height
    if len(data) < expected:
        raise DataError(f"OVDF 数据被截断: 需要 {expected} 字节，实际 {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", count=width * height, offset=_OVDF_HEADER.size).reshape(height, width)
    intr = CameraIntrinsics(fx=fx, fy=fy, px=px, py=py, width=width, height=height)
    return DepthFrame(depth=depth, intrinsics=intr)
