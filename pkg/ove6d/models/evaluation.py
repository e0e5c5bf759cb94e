import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ove6d.models.frames import DepthFrame, MaskFrame
from ove6d.models.geometry import Pose


class EvalRecord(BaseModel):
    """一条评估记录"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    object_id: str
    pose_gt: Pose
    pose_est: Pose
    diameter: float = Field(gt=0)
    scene_depth: DepthFrame | None = None
    # 以下为级联中间结果，用于精度曲线
    rotation_knn: np.ndarray | None = None
    translation_init: np.ndarray | None = None
    translation_refined: np.ndarray | None = None


class AblationRow(BaseModel):
    """消融表的一行"""
    parameter: str
    value: int
    recall: float
    n_records: int
    n_failed: int = 0


class EvalReport(BaseModel):
    """评估报告（JSON 输出）"""
    model_config = ConfigDict(extra="forbid")

    n_scenes: int
    n_failed: int
    add_recall: float | None = None
    adds_recall: float | None = None
    vsd_recall: float | None = None
    ablation: list[AblationRow] = Field(default_factory=list)
    occlusion: dict[str, float] = Field(default_factory=dict)
    failures: list[str] = Field(default_factory=list)


class EvalScene(BaseModel):
    """带真值的评估场景"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scene_id: str
    object_id: str
    depth: DepthFrame
    mask: MaskFrame
    pose_gt: Pose
