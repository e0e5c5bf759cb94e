import os
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np

from ove6d.core.config import settings
from ove6d.core.errors import CodebookNotFoundError, InvalidArgumentError, Ove6dError, RenderError
from ove6d.cruds.codebook_crud import CODEBOOK_SUFFIX, load_codebook_dir, save_codebook
from ove6d.models.codebook import RetrievalHit, ViewpointCodebook
from ove6d.models.geometry import TriangleMesh
from ove6d.services.network_service import Ove6dNetwork
from ove6d.services.preprocess_service import CROP_SCALE, preprocess
from ove6d.services.render_service import mask_of, render_codebook_view
from ove6d.utils.geometry_utils import sample_viewpoints
from ove6d.utils.ove6d_logger import init_logger

logger = init_logger()

# 查询向量的单位范数容差
QUERY_NORM_TOL = 1e-4


def render_view_crop(
        mesh: TriangleMesh, rotation: np.ndarray, f_base: float, size: int, crop_scale: float = CROP_SCALE
) -> np.ndarray:
    """渲染一个码本视点并走与真实帧相同的预处理，返回网络输入块"""
    frame = render_codebook_view(mesh, rotation, f_base, size, crop_scale)
    return preprocess(frame, mask_of(frame), mesh.diameter, crop_scale, size, min_pixels=1).crop


def build_codebook(
        net: Ove6dNetwork,
        mesh: TriangleMesh,
        n: int = 4000,
        f_base: float = 5.0,
        mesh_ref: str = "",
        batch_size: int = 64,
        crop_scale: float = CROP_SCALE,
        max_workers: int | None = None,
) -> ViewpointCodebook:
    """
    对 n 个 Fibonacci 视点逐一渲染、预处理、编码。视点与网络确定时结果逐位相同。

    Raises:
        RenderError: 任一视点渲染或预处理失败，消息中包含视点序号
    """
    start_time = datetime.now()
    logger.info(f"开始构建码本：{mesh.object_id}，视点数量：{n}")
    rotations = sample_viewpoints(n)
    size = net.config.input_size

    def _render(i: int) -> np.ndarray:
        try:
            return render_view_crop(mesh, rotations[i], f_base, size, crop_scale)
        except Ove6dError as e:
            raise RenderError(f"视点 {i} 渲染失败: {e}") from e

    embeddings = []
    with ThreadPoolExecutor(max_workers=max_workers or settings.THREADS) as executor:
        for start in range(0, n, batch_size):
            futures = [executor.submit(_render, i) for i in range(start, min(start + batch_size, n))]
            crops = np.stack([f.result() for f in futures])
            emb, _ = net.encode(crops)
            embeddings.append(emb)

    # 文件中按 f32 存储，构建时先取整，保存再读取后数值不变
    cb = ViewpointCodebook(
        object_id=mesh.object_id,
        diameter=float(np.float32(mesh.diameter)),
        f_base=float(np.float32(f_base)),
        embeddings=np.concatenate(embeddings).astype(np.float32),
        rotations=rotations.astype(np.float32),
        mesh_ref=mesh_ref,
    )
    logger.info(f"码本构建完成：{mesh.object_id}，记录数：{cb.size}，耗时：{datetime.now() - start_time}")
    return cb


def retrieve(cb: ViewpointCodebook, query, k: int) -> list[RetrievalHit]:
    """
    精确线性扫描，按余弦相似度降序返回前 k 条，相同相似度时序号小者在前。

    Raises:
        InvalidArgumentError: k 超出 [1, N] 或查询不是单位向量
    """
    if not 1 <= k <= cb.size:
        raise InvalidArgumentError(f"k 必须在 [1, {cb.size}] 范围内，当前: {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape != (cb.embeddings.shape[1],):
        raise InvalidArgumentError(f"查询向量维度应为 {cb.embeddings.shape[1]}，实际为 {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > QUERY_NORM_TOL:
        raise InvalidArgumentError(f"查询向量必须是单位向量，当前范数 {np.linalg.norm(q):.6f}")
    sims = cb.embeddings.astype(np.float64) @ q
    order = np.lexsort((np.arange(cb.size), -sims))[:k]
    return [
        RetrievalHit(index=int(i), similarity=float(sims[i]), rotation=cb.rotation(int(i)))
        for i in order
    ]


def rebuild_codebook(cb: ViewpointCodebook, net: Ove6dNetwork, mesh: TriangleMesh, n: int) -> ViewpointCodebook:
    """N 消融用：按新的视点数重建（Fibonacci 点集随 N 变化，不能直接截取）"""
    if n == cb.size:
        return cb
    return build_codebook(net, mesh, n=n, f_base=cb.f_base, mesh_ref=cb.mesh_ref)


class CodebookRegistry:
    """object_id -> 码本。注册单写者加锁，码本本身不可变，检索可并发"""

    def __init__(self, codebooks: list[ViewpointCodebook] | None = None):
        self._lock = threading.Lock()
        self._codebooks: dict[str, ViewpointCodebook] = {}
        for cb in codebooks or []:
            self.register(cb)

    def register(self, cb: ViewpointCodebook, replace: bool = False) -> None:
        with self._lock:
            if cb.object_id in self._codebooks and not replace:
                raise InvalidArgumentError(f"物体 {cb.object_id} 的码本已注册")
            self._codebooks[cb.object_id] = cb

    def get(self, object_id: str) -> ViewpointCodebook:
        cb = self._codebooks.get(object_id)
        if cb is None:
            raise CodebookNotFoundError(f"未注册物体 {object_id} 的码本")
        return cb

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._codebooks

    def __len__(self) -> int:
        return len(self._codebooks)

    @property
    def object_ids(self) -> list[str]:
        return sorted(self._codebooks)

    @classmethod
    def from_dir(cls, directory: str) -> "CodebookRegistry":
        return cls(load_codebook_dir(directory))


def build_codebooks(
        net: Ove6dNetwork,
        meshes: list[TriangleMesh],
        out_dir: str,
        n: int = 4000,
        f_base: float = 5.0,
        batch_size: int = 64,
        mesh_refs: dict[str, str] | None = None,
) -> list[str]:
    """为每个物体构建并保存码本，返回文件路径"""
    paths = []
    for mesh in meshes:
        ref = (mesh_refs or {}).get(mesh.object_id, "")
        cb = build_codebook(net, mesh, n=n, f_base=f_base, mesh_ref=ref, batch_size=batch_size)
        paths.append(save_codebook(cb, os.path.join(out_dir, f"{mesh.object_id}{CODEBOOK_SUFFIX}")))
    return paths


def codebook_payload_bytes(cb: ViewpointCodebook) -> int:
    """记录部分的字节数：N × (64 + 9) × 4"""
    return int(cb.size * (cb.embeddings.shape[1] + 9) * 4)
