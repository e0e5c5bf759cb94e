import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.spatial import cKDTree

from ove6d.core.config import settings
from ove6d.core.errors import (
    CodebookNotFoundError,
    EmptyFrameError,
    EstimationFailureError,
    InvalidArgumentError,
    NoObjectError,
    RenderError,
)
from ove6d.models.frames import DepthFrame, MaskFrame
from ove6d.models.geometry import CameraIntrinsics, Pose, TriangleMesh
from ove6d.models.pose import EstimateConfig, EstimateResult, PoseHypothesis
from ove6d.services.codebook_service import CodebookRegistry, render_view_crop, retrieve
from ove6d.services.network_service import Ove6dNetwork
from ove6d.services.preprocess_service import localize, mask_to_points, preprocess
from ove6d.services.render_service import mask_of, render_depth
from ove6d.utils.geometry_utils import (
    inplane_matrix,
    is_degenerate_cloud,
    kabsch,
    model_points,
    ray_alignment_rotation,
)
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.seed_utils import make_rng

"""
推理级联：预处理 -> 编码 -> 检索 K 个候选 -> 候选渲染编码 -> 平面内回归 -> 一致性验证
-> 取前 P 个 -> 位置修正 -> 质量评分 -> 选择 -> 可选 ICP。
网络与码本只读，同一个 PoseEstimator 可以被多个线程同时使用。
"""

logger = init_logger()


# =============================================================================
# 位置修正与质量评分
# =============================================================================
def corrected_location(t_init, t_syn) -> np.ndarray:
    """t_est = 2·t_init - t_syn，抵消自遮挡引起的可见表面中心偏移"""
    return 2.0 * np.asarray(t_init, dtype=np.float64) - np.asarray(t_syn, dtype=np.float64)


def refine_location(mesh: TriangleMesh, r_est, t_init, intr: CameraIntrinsics) -> np.ndarray:
    """
    把物体中心放在 t_init 处按 r_est 渲染，用同一个定位器得到 t_syn，
    返回修正后的位姿平移（物体原点在相机坐标系下的位置）。

    Raises:
        RenderError: 修正渲染为空
    """
    r = np.asarray(r_est, dtype=np.float64)
    t0 = np.asarray(t_init, dtype=np.float64)
    pose = Pose(rotation=r, translation=t0 - r @ mesh.center)
    try:
        syn = render_depth(mesh, pose, intr)
        t_syn = localize(syn, mask_of(syn), min_pixels=1).t_init
    except (EmptyFrameError, NoObjectError) as e:
        raise RenderError(f"位置修正渲染失败: {e}") from e
    return corrected_location(t0, t_syn) - r @ mesh.center


def hypothesis_quality(
        mesh: TriangleMesh,
        pose: Pose,
        depth_masked: DepthFrame,
        diameter: float,
        unobserved_as_outlier: bool = True,
        outlier_frac: float = 0.1,
) -> tuple[float, bool]:
    """
    q = 合成深度与观测深度相差超过 outlier_frac·d 的像素占合成物体像素的比例。
    unobserved_as_outlier 为 False 时只统计观测深度非零的像素。

    Returns:
        (q, degenerate)：没有可统计像素时返回 (1.0, True)
    """
    try:
        syn = render_depth(mesh, pose, depth_masked.intrinsics).depth.astype(np.float64)
    except EmptyFrameError:
        return 1.0, True
    obs = depth_masked.depth.astype(np.float64)
    footprint = syn > 0
    if not unobserved_as_outlier:
        footprint &= obs > 0
    m = int(footprint.sum())
    if m == 0:
        return 1.0, True
    outliers = footprint & (np.abs(syn - obs) > outlier_frac * diameter)
    return float(outliers.sum()) / m, False


def select_hypothesis(hypotheses: list[PoseHypothesis]) -> PoseHypothesis:
    """q 最小者；q 相同时验证分数高者；再相同时检索排名靠前者"""
    if not hypotheses:
        raise EstimationFailureError("没有可选择的位姿假设")
    return min(hypotheses, key=lambda h: (h.quality_q, -h.verify_score, h.source_rank))


# =============================================================================
# ICP
# =============================================================================
class IcpResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pose: Pose
    rms: float | None
    iterations: int
    skipped: bool = False
    rms_history: list[float] = []


def _rms(dist: np.ndarray) -> float:
    return float(np.sqrt(np.mean(dist * dist)))


def icp_refine(
        model_pts: np.ndarray,
        scene_pts: np.ndarray,
        init: Pose,
        max_iters: int = 30,
        tol: float = 1e-3,
) -> IcpResult:
    """
    点到点 ICP：场景点变换到物体坐标系后在模型 KD 树上找最近点，
    再用 SVD 闭式解求模型 -> 场景的刚体变换。
    RMS 改善量小于 tol（毫米）或达到 max_iters 时停止。
    点云退化（少于 3 点或共线）时跳过并返回初值。
    """
    model = np.asarray(model_pts, dtype=np.float64)
    scene = np.asarray(scene_pts, dtype=np.float64)
    if is_degenerate_cloud(model) or is_degenerate_cloud(scene):
        logger.warning(f"ICP 点云退化，跳过：模型 {len(model)} 点，场景 {len(scene)} 点")
        return IcpResult(pose=init, rms=None, iterations=0, skipped=True)

    tree = cKDTree(model)
    pose = init
    history: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        dist, idx = tree.query(pose.inverse().transform(scene))
        rms = _rms(dist)
        if history and history[-1] - rms < tol:
            history.append(rms)
            break
        history.append(rms)
        r, t = kabsch(model[idx], scene)
        pose = Pose(rotation=r, translation=t)
        iterations += 1
    else:
        dist, _ = tree.query(pose.inverse().transform(scene))
        history.append(_rms(dist))
    return IcpResult(pose=pose, rms=history[-1], iterations=iterations, rms_history=history)


def subsample_points(points: np.ndarray, max_points: int) -> np.ndarray:
    """等间隔下采样到 max_points，结果确定"""
    if len(points) <= max_points:
        return points
    idx = np.linspace(0, len(points) - 1, max_points).round().astype(np.int64)
    return points[idx]


# =============================================================================
# 遮挡
# =============================================================================
def occlude_mask(mask: MaskFrame, ratio: float, seed: int = 0) -> MaskFrame:
    """从随机一侧（上/下/左/右）连续去掉 ratio 比例的掩码像素"""
    if not 0.0 <= ratio < 1.0:
        raise InvalidArgumentError(f"遮挡比例必须在 [0, 1) 内: {ratio}")
    bits = mask.bits.copy()
    rows, cols = np.nonzero(bits)
    n_remove = int(round(ratio * len(rows)))
    if n_remove == 0:
        return MaskFrame(bits=bits)
    side = int(make_rng(seed, "occlude").integers(0, 4))
    key = (rows, -rows, cols, -cols)[side]
    order = np.lexsort((cols, rows, key))[:n_remove]
    bits[rows[order], cols[order]] = False
    return MaskFrame(bits=bits)


# =============================================================================
# 级联
# =============================================================================
class _Candidate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rank: int
    rotation_knn: np.ndarray
    crop: np.ndarray


class PoseEstimator:
    """持有网络、码本注册表与物体网格的级联估计服务"""

    def __init__(
            self,
            network: Ove6dNetwork,
            registry: CodebookRegistry,
            meshes: dict[str, TriangleMesh],
            config: EstimateConfig | None = None,
            max_workers: int | None = None,
    ):
        self.network = network
        self.registry = registry
        self.meshes = dict(meshes)
        self.config = config or EstimateConfig()
        self.max_workers = max_workers or settings.THREADS
        self._model_points: dict[str, np.ndarray] = {}
        self._points_lock = threading.Lock()

    def mesh(self, object_id: str) -> TriangleMesh:
        if object_id not in self.meshes:
            raise CodebookNotFoundError(f"未提供物体 {object_id} 的网格")
        return self.meshes[object_id]

    def model_points(self, object_id: str) -> np.ndarray:
        with self._points_lock:
            if object_id not in self._model_points:
                self._model_points[object_id] = model_points(self.mesh(object_id), self.config.icp_max_points)
            return self._model_points[object_id]

    def _render_candidates(self, mesh: TriangleMesh, hits, f_base: float) -> list[_Candidate]:
        size = self.network.config.input_size
        cfg = self.config

        def _one(rank: int, rotation: np.ndarray) -> _Candidate | None:
            try:
                crop = render_view_crop(mesh, rotation, f_base, size, cfg.crop_scale)
            except (EmptyFrameError, NoObjectError, RenderError) as e:
                logger.warning(f"候选 {rank} 渲染失败，跳过: {e}")
                return None
            return _Candidate(rank=rank, rotation_knn=rotation, crop=crop)

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(_one, rank, hit.rotation) for rank, hit in enumerate(hits)]
            candidates = [f.result() for f in futures]
        return [c for c in candidates if c is not None]

    def _icp(self, object_id: str, hyp: PoseHypothesis, scene_pts: np.ndarray) -> PoseHypothesis:
        cfg = self.config
        res = icp_refine(self.model_points(object_id), scene_pts, hyp.pose, cfg.icp_max_iters, cfg.icp_tol)
        return hyp.model_copy(update={
            "rotation": res.pose.rotation,
            "translation": res.pose.translation,
            "icp_rms": res.rms,
            "icp_skipped": res.skipped,
        })

    def _score(self, mesh: TriangleMesh, hyp: PoseHypothesis, observed: DepthFrame) -> PoseHypothesis:
        cfg = self.config
        q, degenerate = hypothesis_quality(
            mesh, hyp.pose, observed, mesh.diameter, cfg.unobserved_as_outlier, cfg.outlier_frac
        )
        return hyp.model_copy(update={"quality_q": q, "quality_degenerate": degenerate})

    def estimate(self, depth: DepthFrame, mask: MaskFrame, object_id: str) -> EstimateResult:
        """
        单帧级联估计，返回最终假设、前 P 个打分假设与各阶段耗时（毫米 / 毫秒）。

        Raises:
            CodebookNotFoundError: 物体未注册
            NoObjectError / InvalidDepthError: 预处理失败
            EstimationFailureError: 没有可渲染的候选
        """
        cfg = self.config
        net = self.network
        timings: dict[str, float] = {}
        t_start = time.perf_counter()
        clock = [t_start]

        def lap(name: str) -> None:
            now = time.perf_counter()
            timings[name] = (now - clock[0]) * 1000.0
            clock[0] = now

        cb = self.registry.get(object_id)
        mesh = self.mesh(object_id)
        pre = preprocess(depth, mask, cb.diameter, cfg.crop_scale, net.config.input_size, cfg.min_mask_pixels)
        lap("preprocess")

        emb, feat = net.encode(pre.crop)
        lap("encode")

        hits = retrieve(cb, emb[0], min(cfg.k_retrieval, cb.size))
        lap("retrieve")

        candidates = self._render_candidates(mesh, hits, cb.f_base)
        if not candidates:
            raise EstimationFailureError(f"物体 {object_id} 的 {len(hits)} 个候选视图都无法渲染")
        _, cand_feat = net.encode(np.stack([c.crop for c in candidates]))
        lap("candidates")

        real_feat = np.repeat(feat, len(candidates), axis=0)
        theta = net.regress_inplane(real_feat, cand_feat)
        r_theta = np.stack([inplane_matrix(v / np.linalg.norm(v.astype(np.float64))) for v in theta])
        lap("regress")

        scores = net.verify_score(real_feat, cand_feat, r_theta)
        lap("verify")

        r_ray = ray_alignment_rotation(pre.t_init) if cfg.allocentric_correction else np.eye(3)
        ranks = np.array([c.rank for c in candidates])
        top = np.lexsort((ranks, -scores.astype(np.float64)))[:cfg.p_proposals]
        observed = depth.masked(mask)
        hypotheses = []
        for i in top:
            c = candidates[int(i)]
            rotation = r_ray @ r_theta[i] @ c.rotation_knn
            translation = refine_location(mesh, rotation, pre.t_init, depth.intrinsics)
            hypotheses.append(PoseHypothesis(
                rotation=rotation,
                translation=translation,
                verify_score=float(scores[i]),
                source_rank=c.rank,
                rotation_knn=r_ray @ c.rotation_knn,
                translation_init=pre.t_init - rotation @ mesh.center,
                translation_refined=translation,
            ))
        lap("refine")

        scene_pts = None
        if cfg.icp != "off":
            scene_pts = subsample_points(mask_to_points(depth, mask), cfg.icp_max_points)
        if cfg.icp == "before-selection":
            hypotheses = [self._icp(object_id, h, scene_pts) for h in hypotheses]
            lap("icp")

        hypotheses = [self._score(mesh, h, observed) for h in hypotheses]
        final = select_hypothesis(hypotheses)
        lap("select")

        if cfg.icp == "after-selection":
            final = self._score(mesh, self._icp(object_id, final, scene_pts), observed)
            lap("icp")

        timings["total"] = (time.perf_counter() - t_start) * 1000.0
        logger.info(
            f"{object_id} 估计完成：q={final.quality_q:.3f}，验证分数={final.verify_score:.3f}，"
            f"检索排名={final.source_rank}，耗时 {timings['total']:.1f} ms"
        )
        return EstimateResult(object_id=object_id, final=final, hypotheses=hypotheses, timings_ms=timings)
