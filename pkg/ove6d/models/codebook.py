import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from ove6d.core.errors import InvalidArgumentError

EMBEDDING_DIM = 64
# f32 存储的单位向量/旋转矩阵容差
F32_TOL = 1e-5


class ViewpointCodebook(BaseModel):
    """
    单个物体的视点码本：N 条 (嵌入向量, 视点旋转) 记录 + 物体元数据。
    嵌入和旋转按 float32 保存，与文件格式一致，保证读写往返逐位相同。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    object_id: str = Field(min_length=1)
    diameter: float = Field(gt=0, description="物体直径（毫米）")
    f_base: float = Field(gt=0, description="渲染距离系数")
    embeddings: np.ndarray
    rotations: np.ndarray
    mesh_ref: str = Field(default="", description="网格文件路径")

    @field_validator("embeddings", mode="before")
    @classmethod
    def _check_embeddings(cls, v):
        arr = np.array(v, dtype=np.float32, copy=True)
        if arr.ndim != 2 or arr.shape[1] != EMBEDDING_DIM:
            raise InvalidArgumentError(f"嵌入矩阵形状应为 (N, {EMBEDDING_DIM})，实际为 {arr.shape}")
        norms = np.linalg.norm(arr.astype(np.float64), axis=1)
        if not np.all(np.abs(norms - 1.0) < F32_TOL):
            raise InvalidArgumentError("码本嵌入必须是单位向量")
        arr.setflags(write=False)
        return arr

    @field_validator("rotations", mode="before")
    @classmethod
    def _check_rotations(cls, v):
        arr = np.array(v, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[1:] != (3, 3):
            raise InvalidArgumentError(f"旋转数组形状应为 (N, 3, 3)，实际为 {arr.shape}")
        r = arr.astype(np.float64)
        ortho = np.abs(np.einsum("nji,njk->nik", r, r) - np.eye(3)).max(initial=0.0)
        dets = np.linalg.det(r) if len(r) else np.ones(0)
        if ortho > F32_TOL or np.any(np.abs(dets - 1.0) > F32_TOL):
            raise InvalidArgumentError("码本旋转不是合法旋转矩阵")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_size(self) -> Self:
        if len(self.embeddings) != len(self.rotations):
            raise InvalidArgumentError("嵌入数量与旋转数量不一致")
        if len(self.embeddings) < 2:
            raise InvalidArgumentError("码本至少需要 2 条记录")
        return self

    @property
    def size(self) -> int:
        return len(self.embeddings)

    def rotation(self, index: int) -> np.ndarray:
        """第 index 条记录的旋转（float64）"""
        return self.rotations[index].astype(np.float64)


class RetrievalHit(BaseModel):
    """检索结果：记录序号、相似度、旋转"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    index: int
    similarity: float
    rotation: np.ndarray
