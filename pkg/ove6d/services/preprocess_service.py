import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import ndimage

from ove6d.core.errors import EmptyPointCloudError, InvalidArgumentError, InvalidDepthError, NoObjectError
from ove6d.models.frames import DepthFrame, MaskFrame
from ove6d.models.geometry import CameraIntrinsics

"""
深度预处理：中位深度、初始平移、裁剪并缩放到网络输入尺寸；以及掩码点云反投影。
真实帧与码本渲染帧走同一条预处理路径。
"""

MIN_MASK_PIXELS = 50
NETWORK_INPUT_SIZE = 128
CROP_SCALE = 1.5
# 平面内损失使用的正值图像偏移（以直径为单位）
POSITIVE_OFFSET = 2.0


class Localization(BaseModel):
    """由掩码与深度得到的粗定位"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t_init: np.ndarray
    d_c: float
    center: tuple[float, float]


class PreprocessResult(BaseModel):
    """网络输入：归一化深度块及其有效掩码"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    crop: np.ndarray
    crop_mask: np.ndarray
    t_init: np.ndarray
    d_c: float
    center: tuple[float, float]
    side: tuple[float, float]


def _valid_pixels(depth: DepthFrame, mask: MaskFrame, min_pixels: int) -> np.ndarray:
    mask.check_pairs(depth)
    if mask.count < min_pixels:
        raise NoObjectError(f"掩码像素数 {mask.count} 少于 {min_pixels}")
    valid = mask.bits & (depth.depth > 0)
    if not np.any(valid):
        raise InvalidDepthError("掩码内没有有效深度")
    return valid


def localize(depth: DepthFrame, mask: MaskFrame, min_pixels: int = MIN_MASK_PIXELS) -> Localization:
    """
    d_c = 掩码内非零深度的中位数；(c_x, c_y) = 掩码包围盒中心；
    t_init = d_c · K^-1 [c_x, c_y, 1]^T
    """
    valid = _valid_pixels(depth, mask, min_pixels)
    d_c = float(np.median(depth.depth[valid].astype(np.float64)))
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    cx = 0.5 * (cols[0] + cols[-1])
    cy = 0.5 * (rows[0] + rows[-1])
    t_init = depth.intrinsics.back_project(cx, cy, d_c)
    return Localization(t_init=t_init, d_c=d_c, center=(float(cx), float(cy)))


def preprocess(
        depth: DepthFrame,
        mask: MaskFrame,
        diameter: float,
        crop_scale: float = CROP_SCALE,
        out_size: int = NETWORK_INPUT_SIZE,
        min_pixels: int = MIN_MASK_PIXELS,
) -> PreprocessResult:
    """
    以掩码包围盒中心裁剪，边长为 d_c 处物体直径投影的 crop_scale 倍，
    深度减去中位数后除以直径，再用掩码加权的双线性采样缩放到 out_size。

    Raises:
        NoObjectError: 掩码为空或像素过少
        InvalidDepthError: 掩码内没有有效深度
    """
    if diameter <= 0:
        raise InvalidArgumentError(f"直径必须大于 0: {diameter}")
    loc = localize(depth, mask, min_pixels)
    valid = mask.bits & (depth.depth > 0)
    normalized = np.where(valid, (depth.depth.astype(np.float64) - loc.d_c) / diameter, 0.0)

    intr = depth.intrinsics
    sx = crop_scale * intr.fx * diameter / loc.d_c
    sy = crop_scale * intr.fy * diameter / loc.d_c
    offsets = np.arange(out_size, dtype=np.float64) - (out_size - 1) / 2.0
    src_cols = loc.center[0] + offsets * sx / out_size
    src_rows = loc.center[1] + offsets * sy / out_size
    rr, cc = np.meshgrid(src_rows, src_cols, indexing="ij")
    coords = np.stack([rr, cc])

    weight = ndimage.map_coordinates(valid.astype(np.float64), coords, order=1, mode="constant", cval=0.0)
    summed = ndimage.map_coordinates(normalized, coords, order=1, mode="constant", cval=0.0)
    crop_mask = weight > 0.5
    crop = np.where(crop_mask, summed / np.maximum(weight, 1e-12), 0.0)
    return PreprocessResult(
        crop=crop.astype(np.float32),
        crop_mask=crop_mask,
        t_init=loc.t_init,
        d_c=loc.d_c,
        center=loc.center,
        side=(float(sx), float(sy)),
    )


def positive_image(crop: np.ndarray, crop_mask: np.ndarray) -> np.ndarray:
    """归一化深度块转为物体区域为正值的图像，平面内损失在它上面计算余弦"""
    return np.where(crop_mask, crop + POSITIVE_OFFSET, 0.0).astype(np.float32)


def mask_to_points(depth: DepthFrame, mask: MaskFrame, intr: CameraIntrinsics | None = None) -> np.ndarray:
    """
    反投影掩码内所有有效像素：p = z · K^-1 [u, v, 1]^T，返回 (M, 3) 毫米点云

    Raises:
        EmptyPointCloudError: 没有有效像素
    """
    mask.check_pairs(depth)
    intr = intr or depth.intrinsics
    valid = mask.bits & (depth.depth > 0)
    rows, cols = np.nonzero(valid)
    if len(rows) == 0:
        raise EmptyPointCloudError("掩码内没有有效深度，点云为空")
    z = depth.depth[rows, cols].astype(np.float64)
    return intr.back_project(cols.astype(np.float64), rows.astype(np.float64), z)
