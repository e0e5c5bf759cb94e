from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from ove6d.core.errors import InvalidArgumentError

ROTATION_TOL = 1e-6


def _frozen_array(value, dtype, shape_tail: tuple[int, ...], name: str) -> np.ndarray:
    """转换为只读 numpy 数组并校验尾部维度"""
    arr = np.array(value, dtype=dtype, copy=True)
    if arr.ndim != len(shape_tail) + 1 and shape_tail:
        raise InvalidArgumentError(f"{name} 维度错误: {arr.shape}")
    if shape_tail and tuple(arr.shape[1:]) != shape_tail:
        raise InvalidArgumentError(f"{name} 形状错误: {arr.shape}")
    arr.setflags(write=False)
    return arr


def validate_rotation(m, tol: float = ROTATION_TOL) -> np.ndarray:
    """
    校验 3x3 旋转矩阵：正交（R^T R = I）且行列式为 +1，返回只读 float64 副本。

    Raises:
        InvalidArgumentError: 不是合法旋转
    """
    r = np.array(m, dtype=np.float64, copy=True)
    if r.shape != (3, 3):
        raise InvalidArgumentError(f"旋转矩阵形状应为 (3, 3)，实际为 {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidArgumentError("旋转矩阵包含非有限值")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise InvalidArgumentError("旋转矩阵不正交")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidArgumentError("旋转矩阵行列式不为 +1")
    r.setflags(write=False)
    return r


class CameraIntrinsics(BaseModel):
    """针孔相机内参，单位像素；像素 (u, v) 的中心位于整数坐标"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    fx: float = Field(gt=0, description="x 方向焦距")
    fy: float = Field(gt=0, description="y 方向焦距")
    px: float = Field(description="主点 x")
    py: float = Field(description="主点 y")
    width: int = Field(gt=0, description="图像宽度")
    height: int = Field(gt=0, description="图像高度")

    @model_validator(mode="after")
    def _principal_point_inside(self) -> Self:
        if not (0.0 <= self.px < self.width and 0.0 <= self.py < self.height):
            raise InvalidArgumentError(
                f"主点 ({self.px}, {self.py}) 不在图像 {self.width}x{self.height} 内"
            )
        return self

    @property
    def matrix(self) -> np.ndarray:
        """内参矩阵 K"""
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """相机坐标系点 (N,3) 投影到像素坐标 (N,2)"""
        pts = np.asarray(points, dtype=np.float64)
        return np.stack(
            [self.fx * pts[:, 0] / pts[:, 2] + self.px, self.fy * pts[:, 1] / pts[:, 2] + self.py], axis=1
        )

    def back_project(self, u, v, z) -> np.ndarray:
        """像素坐标 + 深度反投影为相机坐标系点：p = z * K^-1 [u, v, 1]^T"""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        return np.stack([(u - self.px) * z / self.fx, (v - self.py) * z / self.fy, z], axis=-1)


class Pose(BaseModel):
    """物体坐标系到相机坐标系的刚体变换，X_cam = R X_obj + t，平移单位毫米"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray
    translation: np.ndarray

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, v):
        return validate_rotation(v)

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, v):
        t = np.array(v, dtype=np.float64, copy=True).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError(f"平移向量必须是有限 3 维向量: {v}")
        t.setflags(write=False)
        return t

    @classmethod
    def identity(cls) -> "Pose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """变换点集 (N,3)"""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other：先应用 other 再应用 self"""
        return Pose(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        return Pose(rotation=self.rotation.T, translation=-self.rotation.T @ self.translation)

    @property
    def matrix(self) -> np.ndarray:
        """4x4 齐次矩阵"""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


class TriangleMesh(BaseModel):
    """
    三角网格模型，顶点单位毫米。
    渲染、直径计算、ICP 模型点以及 ADD 点集都来自它。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vertices: np.ndarray
    faces: np.ndarray
    object_id: str = Field(default="object", min_length=1)

    @field_validator("vertices", mode="before")
    @classmethod
    def _check_vertices(cls, v):
        arr = _frozen_array(v, np.float64, (3,), "vertices")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("顶点坐标包含非有限值")
        return arr

    @field_validator("faces", mode="before")
    @classmethod
    def _check_faces(cls, v):
        return _frozen_array(np.asarray(v).reshape(-1, 3), np.int64, (3,), "faces")

    @model_validator(mode="after")
    def _check_topology(self) -> Self:
        n = len(self.vertices)
        if n < 4:
            raise InvalidArgumentError(f"网格至少需要 4 个顶点，实际 {n}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= n):
            raise InvalidArgumentError("面片索引越界")
        if np.ptp(self.vertices, axis=0).max() <= 0.0:
            raise InvalidArgumentError("网格直径必须大于 0")
        return self

    @cached_property
    def diameter(self) -> float:
        """最大顶点对距离（毫米）"""
        from ove6d.utils.geometry_utils import mesh_diameter
        return mesh_diameter(self)

    @property
    def center(self) -> np.ndarray:
        """包围盒中心"""
        return 0.5 * (self.vertices.min(axis=0) + self.vertices.max(axis=0))

    def transformed(self, pose: Pose) -> "TriangleMesh":
        """返回刚体变换后的新网格"""
        return TriangleMesh(vertices=pose.transform(self.vertices), faces=self.faces, object_id=self.object_id)
