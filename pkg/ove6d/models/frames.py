import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from typing_extensions import Self

from ove6d.core.errors import InvalidArgumentError
from ove6d.models.geometry import CameraIntrinsics

# 近/远裁剪面（毫米）
NEAR_CLIP_MM = 1.0
FAR_CLIP_MM = 10000.0


class DepthFrame(BaseModel):
    """
    深度图：行优先 (height, width) 的 float32 网格，单位毫米，0 表示无观测。
    所有非零深度必须在 (near, far) 范围内。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    depth: np.ndarray
    intrinsics: CameraIntrinsics

    @field_validator("depth", mode="before")
    @classmethod
    def _check_depth(cls, v):
        arr = np.array(v, dtype=np.float32, copy=True)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"深度图必须是二维网格: {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("深度图包含非有限值")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_range(self) -> Self:
        if self.depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise InvalidArgumentError(
                f"深度图尺寸 {self.depth.shape} 与内参 {self.intrinsics.width}x{self.intrinsics.height} 不一致"
            )
        nz = self.depth[self.depth != 0]
        if nz.size and (nz.min() <= NEAR_CLIP_MM or nz.max() >= FAR_CLIP_MM):
            raise InvalidArgumentError(f"深度值超出裁剪范围 ({NEAR_CLIP_MM}, {FAR_CLIP_MM})")
        return self

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def valid(self) -> np.ndarray:
        """有效深度掩码"""
        return self.depth > 0

    def masked(self, mask: "MaskFrame") -> "DepthFrame":
        """返回掩码外置零后的深度图 D_M"""
        mask.check_pairs(self)
        return DepthFrame(depth=np.where(mask.bits, self.depth, 0.0), intrinsics=self.intrinsics)


class MaskFrame(BaseModel):
    """物体分割掩码，布尔网格"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bits: np.ndarray

    @field_validator("bits", mode="before")
    @classmethod
    def _check_bits(cls, v):
        arr = np.array(v, copy=True).astype(bool)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"掩码必须是二维网格: {arr.shape}")
        arr.setflags(write=False)
        return arr

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def check_pairs(self, frame: DepthFrame) -> None:
        if self.bits.shape != frame.depth.shape:
            raise InvalidArgumentError(f"掩码尺寸 {self.bits.shape} 与深度图 {frame.depth.shape} 不一致")
