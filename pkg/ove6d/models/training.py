from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from ove6d.core.errors import InvalidArgumentError
from ove6d.models.geometry import validate_rotation

ShapeFamily = Literal["box", "cylinder", "ellipsoid", "superellipsoid", "union"]
SHAPE_FAMILIES: tuple[str, ...] = ("box", "cylinder", "ellipsoid", "superellipsoid", "union")

# 生成物体直径范围（毫米）
MIN_DIAMETER_MM = 50.0
MAX_DIAMETER_MM = 300.0


class ShapeSpec(BaseModel):
    """程序化物体的生成参数"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: ShapeFamily
    params: dict[str, float] = Field(default_factory=dict, description="尺寸/指数参数，单位毫米")
    target_diameter: float = Field(ge=MIN_DIAMETER_MM, le=MAX_DIAMETER_MM)
    seed: int = Field(ge=0)


def _check_range(name: str, value: tuple[float, float], lo: float, hi: float) -> tuple[float, float]:
    a, b = value
    if not (lo <= a <= b <= hi):
        raise InvalidArgumentError(f"{name} 范围 {value} 超出允许区间 [{lo}, {hi}]")
    return value


class AugmentConfig(BaseModel):
    """
    深度增强参数。各项参数为 (下限, 上限) 的均匀采样区间；
    开关用于关闭单项增强（例如只做缩放重采样的退化配置）。
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    rescale_ratio: tuple[float, float] = (0.2, 0.8)
    laplace_dev: tuple[float, float] = (0.0, 0.01)
    cutout_ratio: tuple[float, float] = (0.01, 0.1)
    gaussian_blur_sigma: tuple[float, float] = (0.0, 1.5)
    occlusion_prob: float = Field(default=0.2, ge=0.0, le=1.0)
    occlusion_area: tuple[float, float] = (0.1, 0.4)

    use_laplace: bool = True
    use_cutout: bool = True
    use_blur: bool = True
    use_occlusion: bool = True

    @model_validator(mode="after")
    def _check_ranges(self) -> Self:
        _check_range("rescale_ratio", self.rescale_ratio, 0.2, 0.8)
        _check_range("laplace_dev", self.laplace_dev, 0.0, 0.01)
        _check_range("cutout_ratio", self.cutout_ratio, 0.01, 0.1)
        _check_range("gaussian_blur_sigma", self.gaussian_blur_sigma, 0.0, 1.5)
        _check_range("occlusion_area", self.occlusion_area, 0.0, 1.0)
        return self

    @classmethod
    def resample_only(cls, ratio: tuple[float, float] = (0.2, 0.8)) -> "AugmentConfig":
        """只做下采样再上采样的配置"""
        return cls(rescale_ratio=ratio, use_laplace=False, use_cutout=False, use_blur=False, use_occlusion=False)


class AugmentParams(BaseModel):
    """一次增强实际抽到的参数"""
    model_config = ConfigDict(frozen=True)

    ratio: float
    laplace_dev: float = 0.0
    cutout_ratio: float = 0.0
    # 在下采样图像上的中心（行, 列）
    cutout_center: tuple[float, float] = (0.0, 0.0)
    blur_sigma: float = 0.0
    occlude: bool = False
    occlusion_shape: Literal["square", "circle"] = "square"
    occlusion_area: float = 0.0
    occlusion_center: tuple[float, float] = (0.0, 0.0)


class TripletGeometry(BaseModel):
    """一个三元组的几何：锚点视点、平面内角度、视点扰动"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    anchor: np.ndarray
    theta_deg: float = Field(ge=0.0, lt=360.0)
    gamma_rotation: np.ndarray
    gamma_deg: float

    @field_validator("anchor", "gamma_rotation", mode="before")
    @classmethod
    def _check_rotation(cls, v):
        return validate_rotation(v)


class TrainingTriplet(BaseModel):
    """
    训练三元组 {V, V_θ, V_γ}：已预处理为网络输入的归一化深度块 (S, S)。
    V 与 V_θ 共享同一视点 R_γ，只差平面内旋转 theta；V_γ 的视点偏离 gamma_angle 度。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    object_id: str
    v: np.ndarray
    v_theta: np.ndarray
    v_gamma: np.ndarray
    theta_gt: np.ndarray
    theta_deg: float
    gamma_angle: float
    anchor: np.ndarray

    @field_validator("v", "v_theta", "v_gamma", mode="before")
    @classmethod
    def _check_crop(cls, v):
        arr = np.array(v, dtype=np.float32, copy=True)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidArgumentError(f"三元组图像必须是方形二维网格: {arr.shape}")
        arr.setflags(write=False)
        return arr

    @field_validator("theta_gt", "anchor", mode="before")
    @classmethod
    def _check_rotation(cls, v):
        return validate_rotation(v)


class ManifestEntry(BaseModel):
    """数据清单中的一个物体"""
    model_config = ConfigDict(extra="forbid")

    object_id: str
    mesh_path: str
    family: ShapeFamily
    seed: int
    diameter: float
    split: Literal["train", "held-out"]


class SceneEntry(BaseModel):
    """合成评估场景：深度/掩码文件 + 真值位姿"""
    model_config = ConfigDict(extra="forbid")

    scene_id: str
    object_id: str
    depth_path: str
    mask_path: str
    rotation: list[float] = Field(min_length=9, max_length=9)
    translation: list[float] = Field(min_length=3, max_length=3)


class DatasetManifest(BaseModel):
    """数据集清单：网格路径、种子、划分，以及增强参数的解释说明"""
    model_config = ConfigDict(extra="forbid")

    root_seed: int
    objects: list[ManifestEntry] = Field(default_factory=list)
    scenes: list[SceneEntry] = Field(default_factory=list)
    interpretations: dict[str, str] = Field(default_factory=dict)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.objects if e.split == name]
