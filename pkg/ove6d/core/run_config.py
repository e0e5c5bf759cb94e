import json
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

from ove6d.core.errors import ConfigError

"""
实验运行配置（RunConfig）。
与 Settings（进程环境）不同，RunConfig 决定实验结果，所有命令都会把补全默认值后的配置回写到输出目录。
"""

RESOLVED_CONFIG_NAME = "resolved_config.json"


class _Section(BaseModel):
    # 未知键一律拒绝
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    shape_count: int = Field(default=20, ge=1, description="程序化生成的物体数量")
    held_out_fraction: float = Field(default=0.2, ge=0.0, lt=1.0, description="留出评估集比例")
    scene_count: int = Field(default=100, ge=0, description="合成评估场景数量")
    scene_width: int = Field(default=640, gt=0)
    scene_height: int = Field(default=480, gt=0)
    scene_focal: float = Field(default=572.4, gt=0, description="场景相机焦距（像素）")
    scene_distance_range: tuple[float, float] = Field(default=(600.0, 1200.0), description="物体距离范围（毫米）")


class TrainConfig(_Section):
    epochs: int = Field(default=5, ge=0)
    steps_per_epoch: int = Field(default=20, ge=1)
    anchors_per_object: int = Field(default=16, ge=1, description="每个物体的锚点视点数")
    objects_per_batch: int = Field(default=8, ge=1, description="每批物体数，batch = anchors * objects")
    lr_max: float = Field(default=1e-3, gt=0)
    lr_min: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=1e-5, ge=0)
    shards: int = Field(default=1, ge=1, description="数据并行分片数")
    augment: bool = Field(default=True, description="是否对训练视图做深度增强")
    backbone_channels: list[int] = Field(default=[16, 32, 32, 64, 64, 128, 128, 128])
    backbone_strides: list[int] = Field(default=[2, 1, 2, 1, 2, 1, 2, 1])
    input_size: int = Field(default=128, ge=16)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if len(self.backbone_channels) != len(self.backbone_strides):
            raise ValueError("backbone_channels 与 backbone_strides 长度不一致")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min 不能大于 lr_max")
        return self


class CodebookConfig(_Section):
    n_views: int = Field(default=4000, ge=2)
    f_base: float = Field(default=5.0, gt=0)
    batch_size: int = Field(default=64, ge=1, description="编码批大小")


class EstimateSection(_Section):
    k_retrieval: int = Field(default=50, ge=1)
    p_proposals: int = Field(default=5, ge=1)
    icp: Literal["off", "after-selection", "before-selection"] = "after-selection"
    unobserved_as_outlier: bool = True
    allocentric_correction: bool = True
    crop_scale: float = Field(default=1.5, gt=0)
    min_mask_pixels: int = Field(default=50, ge=1)
    outlier_frac: float = Field(default=0.1, gt=0, description="质量评分的离群阈值（物体直径的比例）")
    icp_max_iters: int = Field(default=30, ge=1)
    icp_tol: float = Field(default=1e-3, gt=0, description="ICP 收敛阈值（毫米）")
    icp_max_points: int = Field(default=5000, ge=3)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.p_proposals > self.k_retrieval:
            raise ValueError("p_proposals 不能大于 k_retrieval")
        return self


class EvalConfig(_Section):
    metrics: list[Literal["add", "adds", "vsd"]] = Field(default=["add", "adds", "vsd"])
    add_threshold_frac: float = Field(default=0.1, gt=0)
    vsd_tau: float = Field(default=20.0, gt=0)
    vsd_e_max: float = Field(default=0.3, gt=0, le=1)
    vsd_delta: float = Field(default=15.0, gt=0, description="可见性容差（毫米）")
    symmetric: bool = Field(default=False, description="使用 ADD-S 代替 ADD 计算召回")
    sweep_n: list[int] = Field(default=[1000, 4000])
    sweep_k: list[int] = Field(default=[1, 50])
    sweep_p: list[int] = Field(default=[1, 5])
    precision_thresholds_deg: list[float] = Field(default=[5.0, 10.0, 15.0, 20.0, 30.0])
    precision_thresholds_mm: list[float] = Field(default=[5.0, 10.0, 20.0, 30.0, 50.0])
    occlusion_ratios: list[float] = Field(default=[0.0, 0.1, 0.2, 0.3])


class RunConfig(_Section):
    """完整的实验配置，JSON 存储"""
    seed: int = Field(default=0, ge=0)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    codebook: CodebookConfig = Field(default_factory=CodebookConfig)
    estimate: EstimateSection = Field(default_factory=EstimateSection)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _check_counts(self) -> Self:
        if self.estimate.k_retrieval > self.codebook.n_views:
            raise ValueError("k_retrieval 不能大于 n_views")
        return self


def load_run_config(path: str | None) -> RunConfig:
    """
    读取并校验 JSON 配置文件，path 为空时返回默认配置。

    Raises:
        ConfigError: 文件不存在、JSON 解析失败或未通过 schema 校验
    """
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"配置文件校验失败: {path}\n{e}") from e


def echo_run_config(cfg: RunConfig, out_dir: str) -> str:
    """把补全默认值后的配置写入输出目录，返回文件路径"""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_CONFIG_NAME)
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.model_dump_json(indent=2))
    return path


def run_config_schema() -> str:
    """发布的 JSON schema"""
    return json.dumps(RunConfig.model_json_schema(), indent=2, ensure_ascii=False)
