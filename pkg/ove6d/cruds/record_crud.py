import os
from typing import TypeVar

import pandas as pd
from pydantic import BaseModel, ValidationError

from ove6d.core.errors import DataError
from ove6d.models.pose import PoseRecord
from ove6d.models.training import DatasetManifest

"""
结构化文本记录（JSON）与表格（CSV）的读写：位姿记录、数据清单、评估报告
"""

M = TypeVar("M", bound=BaseModel)

MANIFEST_NAME = "manifest.json"


def save_model_json(model: BaseModel, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.model_dump_json(indent=2))
    return path


def load_model_json(cls: type[M], path: str) -> M:
    """
    Raises:
        DataError: 文件不存在或内容不符合模型
    """
    if not os.path.exists(path):
        raise DataError(f"文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return cls.model_validate_json(text)
    except ValidationError as e:
        raise DataError(f"{cls.__name__} 解析失败: {path}\n{e}") from e


def save_pose_record(record: PoseRecord, path: str) -> str:
    return save_model_json(record, path)


def load_pose_record(path: str) -> PoseRecord:
    return load_model_json(PoseRecord, path)


def write_manifest(manifest: DatasetManifest, out_dir: str) -> str:
    return save_model_json(manifest, os.path.join(out_dir, MANIFEST_NAME))


def read_manifest(path: str) -> DatasetManifest:
    """path 可以是清单文件，也可以是包含 manifest.json 的目录"""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    return load_model_json(DatasetManifest, path)


def save_table(df: pd.DataFrame, path: str) -> str:
    """导出 CSV"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8")
    return path
