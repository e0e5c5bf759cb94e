import os
from pathlib import Path
from typing import Literal

from pydantic import Field, computed_field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """进程级运行环境配置（环境变量 / .env），与具体实验参数 RunConfig 分开管理"""

    model_config = SettingsConfigDict(
        # 指定多个可能的 .env 文件位置
        env_file=[
            ".env",  # 当前目录
            "ove6d/.env",  # 包目录
            "../.env",  # 上级目录
            str(Path(__file__).parent.parent / ".env"),  # ove6d/.env
            str(Path(__file__).parent.parent.parent / ".env"),  # 项目根目录/.env
        ],
        env_ignore_empty=True,
        extra="ignore",
        case_sensitive=True,
    )

    # =============================================================================
    # 基础配置
    # =============================================================================
    PROJECT_NAME: str = Field(default="ove6d_pose", description="项目名称")
    ENVIRONMENT: Literal["local", "staging", "production"] = Field(
        default="local", description="环境类型"
    )

    # =============================================================================
    # 日志配置
    # =============================================================================
    LOG_DIR: str | None = Field(default=None, description="日志目录，为空时使用包目录下的 logs")
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="日志级别"
    )

    # =============================================================================
    # 计算资源配置
    # =============================================================================
    THREADS: int = Field(
        default_factory=lambda: os.cpu_count() or 1,
        description="内部线程池大小，默认为逻辑核数"
    )
    DATA_DIR: str = Field(default="data", description="默认数据输出目录")

    # =============================================================================
    # 外部服务配置
    # =============================================================================
    SENTRY_DSN: str | None = Field(default=None, description="Sentry DSN")

    @field_validator("THREADS")
    @classmethod
    def _check_threads(cls, v: int) -> int:
        """线程数至少为1"""
        if v < 1:
            raise ValueError(f"THREADS 必须 >= 1，当前值: {v}")
        return v

    @computed_field
    @property
    def sentry_enabled(self) -> bool:
        """仅在配置了 DSN 且非本地环境时启用 Sentry"""
        return bool(self.SENTRY_DSN) and self.ENVIRONMENT != "local"


settings = Settings()
