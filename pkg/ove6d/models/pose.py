from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from ove6d.core.errors import InvalidArgumentError
from ove6d.models.geometry import Pose, validate_rotation

IcpMode = Literal["off", "after-selection", "before-selection"]


class EstimateConfig(BaseModel):
    """级联估计参数，默认 N=4000, K=50, P=5"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_views: int = Field(default=4000, ge=2)
    k_retrieval: int = Field(default=50, ge=1)
    p_proposals: int = Field(default=5, ge=1)
    icp: IcpMode = "after-selection"
    f_base: float = Field(default=5.0, gt=0)
    # 质量评分中未观测像素（观测深度为 0）是否计为离群点
    unobserved_as_outlier: bool = True
    allocentric_correction: bool = True
    crop_scale: float = Field(default=1.5, gt=0)
    min_mask_pixels: int = Field(default=50, ge=1)
    outlier_frac: float = Field(default=0.1, gt=0)
    icp_max_iters: int = Field(default=30, ge=1)
    icp_tol: float = Field(default=1e-3, gt=0)
    icp_max_points: int = Field(default=5000, ge=3)

    @model_validator(mode="after")
    def _check_counts(self) -> Self:
        if not (1 <= self.p_proposals <= self.k_retrieval <= self.n_views):
            raise InvalidArgumentError(
                f"需要满足 1 <= P <= K <= N，当前 P={self.p_proposals}, K={self.k_retrieval}, N={self.n_views}"
            )
        return self


class PoseHypothesis(BaseModel):
    """一个位姿假设及其打分"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray
    translation: np.ndarray
    verify_score: float
    quality_q: float = Field(default=1.0, ge=0.0, le=1.0)
    source_rank: int = Field(ge=0)
    # 未做平面内回归的检索视点
    rotation_knn: np.ndarray | None = None
    translation_init: np.ndarray | None = None
    # 位置修正后、ICP 之前的平移
    translation_refined: np.ndarray | None = None
    quality_degenerate: bool = False
    icp_rms: float | None = None
    icp_skipped: bool = False

    @field_validator("rotation", "rotation_knn", mode="before")
    @classmethod
    def _check_rotation(cls, v):
        return None if v is None else validate_rotation(v)

    @field_validator("translation", "translation_init", "translation_refined", mode="before")
    @classmethod
    def _check_translation(cls, v):
        if v is None:
            return None
        t = np.array(v, dtype=np.float64, copy=True).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError(f"平移向量必须是有限 3 维向量: {v}")
        t.setflags(write=False)
        return t

    @property
    def pose(self) -> Pose:
        return Pose(rotation=self.rotation, translation=self.translation)


class EstimateResult(BaseModel):
    """估计结果：最终假设、全部 P 个打分假设、各阶段耗时"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    object_id: str
    final: PoseHypothesis
    hypotheses: list[PoseHypothesis]
    timings_ms: dict[str, float] = Field(default_factory=dict)


class PoseRecord(BaseModel):
    """位姿输出记录（JSON）"""
    model_config = ConfigDict(extra="forbid")

    object_id: str
    rotation: list[float] = Field(min_length=9, max_length=9, description="3x3 行优先")
    translation: list[float] = Field(min_length=3, max_length=3, description="毫米")
    q: float
    verify_score: float
    source_rank: int
    icp_rms: float | None = None
    timings_ms: dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_result(cls, result: EstimateResult) -> "PoseRecord":
        final = result.final
        return cls(
            object_id=result.object_id,
            rotation=[float(x) for x in final.rotation.reshape(-1)],
            translation=[float(x) for x in final.translation],
            q=float(final.quality_q),
            verify_score=float(final.verify_score),
            source_rank=final.source_rank,
            icp_rms=final.icp_rms,
            timings_ms=dict(result.timings_ms),
        )

    def to_pose(self) -> Pose:
        return Pose(rotation=np.array(self.rotation).reshape(3, 3), translation=np.array(self.translation))
