import os
from datetime import datetime

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from ove6d.core.errors import InvalidArgumentError, Ove6dError, VsdError
from ove6d.core.run_config import EvalConfig
from ove6d.cruds.frame_crud import load_depth_png, load_mask_png
from ove6d.cruds.mesh_crud import load_mesh
from ove6d.cruds.record_crud import save_model_json, save_table
from ove6d.models.evaluation import AblationRow, EvalRecord, EvalReport, EvalScene
from ove6d.models.frames import DepthFrame
from ove6d.models.geometry import CameraIntrinsics, Pose, TriangleMesh
from ove6d.models.pose import EstimateConfig
from ove6d.models.training import DatasetManifest
from ove6d.services.codebook_service import CodebookRegistry, rebuild_codebook, retrieve
from ove6d.services.pipeline_service import PoseEstimator, occlude_mask
from ove6d.services.preprocess_service import preprocess
from ove6d.services.render_service import render_depth
from ove6d.utils.geometry_utils import decompose_rotation, geodesic_angle, ray_alignment_rotation, view_axis_angle
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.plot_utils import plot_precision_curves

logger = init_logger()

# 暴力最近邻只用于小点云
BRUTE_FORCE_MAX_POINTS = 2000
REPORT_NAME = "report.json"
RECORDS_CSV_NAME = "records.csv"
ABLATION_CSV_NAME = "ablation.csv"
PRECISION_CSV_NAME = "precision_curves.csv"
PRECISION_PNG_NAME = "precision_curves.png"


# =============================================================================
# ADD / ADD-S
# =============================================================================
def add_error(model_pts, pose_gt: Pose, pose_est: Pose) -> float:
    """对应点距离的均值（毫米）"""
    pts = np.asarray(model_pts, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise InvalidArgumentError("ADD 需要至少一个模型点")
    return float(np.linalg.norm(pose_gt.transform(pts) - pose_est.transform(pts), axis=1).mean())


def adds_error(model_pts, pose_gt: Pose, pose_est: Pose, method: str = "kdtree") -> float:
    """真值变换后每个点到估计变换点集的最近距离的均值（毫米）"""
    pts = np.asarray(model_pts, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise InvalidArgumentError("ADD-S 需要至少一个模型点")
    gt = pose_gt.transform(pts)
    est = pose_est.transform(pts)
    if method == "kdtree":
        dist, _ = cKDTree(est).query(gt)
    elif method == "brute":
        if len(pts) > BRUTE_FORCE_MAX_POINTS:
            raise InvalidArgumentError(f"暴力最近邻只支持不超过 {BRUTE_FORCE_MAX_POINTS} 个点")
        dist = np.sqrt(((gt[:, None, :] - est[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    else:
        raise InvalidArgumentError(f"未知的最近邻方法: {method}")
    return float(dist.mean())


def add_recall(errors, diameters, threshold_frac: float = 0.1) -> float:
    """误差小于 threshold_frac·直径 的记录比例"""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    d = np.asarray(diameters, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise InvalidArgumentError("召回率需要非空记录集")
    if d.size == 1:
        d = np.full_like(e, d[0])
    if d.shape != e.shape:
        raise InvalidArgumentError("误差与直径数量不一致")
    return float(np.mean(e < threshold_frac * d))


def record_add_errors(records: list[EvalRecord], points: dict[str, np.ndarray], symmetric: bool = False) -> np.ndarray:
    fn = adds_error if symmetric else add_error
    return np.array([fn(points[r.object_id], r.pose_gt, r.pose_est) for r in records])


# =============================================================================
# VSD
# =============================================================================
def visibility_mask(object_depth: np.ndarray, scene_depth: np.ndarray, delta: float) -> np.ndarray:
    """物体像素在场景中可见：物体深度不超过场景深度 + delta，或场景该处无测量"""
    return (object_depth > 0) & ((object_depth <= scene_depth + delta) | (scene_depth == 0))


def vsd_error(
        scene_depth: DepthFrame,
        mesh: TriangleMesh,
        pose_gt: Pose,
        pose_est: Pose,
        intr: CameraIntrinsics | None = None,
        tau: float = 20.0,
        delta: float = 15.0,
) -> float:
    """
    两个位姿各自渲染后按同一规则求可见性掩码，
    e = 可见性并集中（只一方可见，或深度差 > tau）的像素比例。

    Raises:
        VsdError: 两个位姿的可见性并集为空
    """
    intr = intr or scene_depth.intrinsics
    scene = scene_depth.depth.astype(np.float64)
    d_gt = render_depth(mesh, pose_gt, intr).depth.astype(np.float64)
    d_est = render_depth(mesh, pose_est, intr).depth.astype(np.float64)
    v_gt = visibility_mask(d_gt, scene, delta)
    v_est = visibility_mask(d_est, scene, delta)
    union = v_gt | v_est
    n = int(union.sum())
    if n == 0:
        raise VsdError("两个位姿在场景中都不可见")
    both = v_gt & v_est
    ok = both & (np.abs(d_gt - d_est) <= tau)
    return float(1.0 - ok.sum() / n)


def vsd_recall(errors, e_max: float = 0.3) -> float:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise InvalidArgumentError("召回率需要非空记录集")
    return float(np.mean(e < e_max))


# =============================================================================
# 场景评估
# =============================================================================
def scenes_from_manifest(manifest: DatasetManifest, root: str) -> list[EvalScene]:
    scenes = []
    for entry in manifest.scenes:
        depth = load_depth_png(os.path.join(root, entry.depth_path))
        mask = load_mask_png(os.path.join(root, entry.mask_path))
        pose = Pose(rotation=np.array(entry.rotation).reshape(3, 3), translation=np.array(entry.translation))
        scenes.append(EvalScene(scene_id=entry.scene_id, object_id=entry.object_id, depth=depth, mask=mask, pose_gt=pose))
    return scenes


def meshes_from_manifest(manifest: DatasetManifest, root: str, split: str | None = None) -> dict[str, TriangleMesh]:
    entries = manifest.objects if split is None else manifest.split(split)
    return {e.object_id: load_mesh(os.path.join(root, e.mesh_path), e.object_id) for e in entries}


def evaluate_scenes(estimator: PoseEstimator, scenes: list[EvalScene]) -> tuple[list[EvalRecord], list[str]]:
    """逐场景运行级联；单个场景失败只记录，不中断整批"""
    records, failures = [], []
    for scene in scenes:
        try:
            result = estimator.estimate(scene.depth, scene.mask, scene.object_id)
        except Ove6dError as e:
            logger.error(f"场景 {scene.scene_id} 估计失败: {e}")
            failures.append(f"{scene.scene_id}: {e}")
            continue
        final = result.final
        mesh = estimator.mesh(scene.object_id)
        records.append(EvalRecord(
            object_id=scene.object_id,
            pose_gt=scene.pose_gt,
            pose_est=final.pose,
            diameter=mesh.diameter,
            scene_depth=scene.depth,
            rotation_knn=final.rotation_knn,
            translation_init=final.translation_init,
            translation_refined=final.translation_refined,
        ))
    return records, failures


def recall_for(records: list[EvalRecord], points: dict[str, np.ndarray], n_total: int,
               threshold_frac: float, symmetric: bool) -> float:
    """失败的场景计为未召回"""
    if n_total == 0:
        raise InvalidArgumentError("召回率需要非空场景集")
    if not records:
        return 0.0
    errors = record_add_errors(records, points, symmetric)
    hits = add_recall(errors, [r.diameter for r in records], threshold_frac) * len(records)
    return float(hits / n_total)


def ablation_harness(
        estimator: PoseEstimator,
        scenes: list[EvalScene],
        sweep: dict[str, list[int]],
        threshold_frac: float = 0.1,
        symmetric: bool = False,
) -> list[AblationRow]:
    """
    分别扫描 N（重建码本）、K、P，其余参数取估计器的当前配置；
    P 不超过 K，K 不超过 N。
    """
    base = estimator.config
    points = {oid: estimator.model_points(oid) for oid in {s.object_id for s in scenes}}
    rows = []
    for parameter, values in sweep.items():
        for value in values:
            start_time = datetime.now()
            registry = estimator.registry
            if parameter == "n":
                registry = CodebookRegistry([
                    rebuild_codebook(estimator.registry.get(oid), estimator.network, estimator.mesh(oid), value)
                    for oid in sorted(points)
                ])
                k = min(base.k_retrieval, value)
                cfg = base.model_copy(update={"n_views": value, "k_retrieval": k, "p_proposals": min(base.p_proposals, k)})
            elif parameter == "k":
                k = min(value, base.n_views)
                cfg = base.model_copy(update={"k_retrieval": k, "p_proposals": min(base.p_proposals, k)})
            elif parameter == "p":
                p = min(value, base.n_views)
                cfg = base.model_copy(update={"p_proposals": p, "k_retrieval": max(base.k_retrieval, p)})
            else:
                raise InvalidArgumentError(f"未知的消融参数: {parameter}")
            cfg = EstimateConfig.model_validate(cfg.model_dump())
            sub = PoseEstimator(estimator.network, registry, estimator.meshes, cfg, estimator.max_workers)
            records, failures = evaluate_scenes(sub, scenes)
            recall = recall_for(records, points, len(scenes), threshold_frac, symmetric)
            rows.append(AblationRow(parameter=parameter, value=value, recall=recall,
                                    n_records=len(records), n_failed=len(failures)))
            logger.info(f"消融 {parameter}={value}：召回率 {recall:.3f}，耗时：{datetime.now() - start_time}")
    return rows


def record_errors_table(records: list[EvalRecord], points: dict[str, np.ndarray]) -> pd.DataFrame:
    """每条记录的各项误差"""
    rows = []
    for r in records:
        r_theta_est, _ = decompose_rotation(r.pose_est.rotation)
        r_theta_gt, _ = decompose_rotation(r.pose_gt.rotation)
        t_gt = r.pose_gt.translation
        rows.append({
            "object_id": r.object_id,
            "diameter": r.diameter,
            "add": add_error(points[r.object_id], r.pose_gt, r.pose_est),
            "adds": adds_error(points[r.object_id], r.pose_gt, r.pose_est),
            "rotation_deg": geodesic_angle(r.pose_est.rotation, r.pose_gt.rotation),
            "viewpoint_deg": view_axis_angle(r.rotation_knn, r.pose_gt.rotation) if r.rotation_knn is not None else np.nan,
            "inplane_deg": geodesic_angle(r_theta_est, r_theta_gt),
            "translation_init_mm": float(np.linalg.norm(r.translation_init - t_gt)) if r.translation_init is not None else np.nan,
            "translation_refined_mm": float(np.linalg.norm(r.translation_refined - t_gt)) if r.translation_refined is not None else np.nan,
            "translation_final_mm": float(np.linalg.norm(r.pose_est.translation - t_gt)),
        })
    return pd.DataFrame(rows)


def precision_curve(table: pd.DataFrame, thresholds_deg: list[float], thresholds_mm: list[float]) -> pd.DataFrame:
    """视点/平面内/平移误差在各阈值下的精度，列为 metric, threshold, precision"""
    rows = []
    for metric, thresholds in (
            ("viewpoint_deg", thresholds_deg),
            ("inplane_deg", thresholds_deg),
            ("translation_init_mm", thresholds_mm),
            ("translation_refined_mm", thresholds_mm),
            ("translation_final_mm", thresholds_mm),
    ):
        values = table[metric].dropna().to_numpy() if metric in table else np.zeros(0)
        for th in thresholds:
            precision = float(np.mean(values < th)) if values.size else float("nan")
            rows.append({"metric": metric, "threshold": th, "precision": precision})
    return pd.DataFrame(rows, columns=["metric", "threshold", "precision"])


def occlusion_sweep(
        estimator: PoseEstimator,
        scenes: list[EvalScene],
        ratios: list[float],
        threshold_deg: float = 15.0,
        seed: int = 0,
) -> dict[str, float]:
    """不同遮挡比例下 rank-1 检索视点的准确率（视轴误差 < threshold_deg）"""
    net, cfg = estimator.network, estimator.config
    result = {}
    for ratio in ratios:
        hits, total = 0, 0
        for i, scene in enumerate(scenes):
            total += 1
            cb = estimator.registry.get(scene.object_id)
            mask = occlude_mask(scene.mask, ratio, seed=seed + i)
            try:
                pre = preprocess(scene.depth, mask, cb.diameter, cfg.crop_scale, net.config.input_size, cfg.min_mask_pixels)
            except Ove6dError:
                continue
            emb, _ = net.encode(pre.crop)
            top = retrieve(cb, emb[0], 1)[0]
            r_ray = ray_alignment_rotation(pre.t_init) if cfg.allocentric_correction else np.eye(3)
            if view_axis_angle(r_ray @ top.rotation, scene.pose_gt.rotation) < threshold_deg:
                hits += 1
        result[f"{ratio:.2f}"] = hits / total if total else 0.0
        logger.info(f"遮挡比例 {ratio:.2f}：rank-1 视点准确率 {result[f'{ratio:.2f}']:.3f}")
    return result


def write_report(report: EvalReport, out_dir: str, records_table: pd.DataFrame | None = None,
                 precision: pd.DataFrame | None = None) -> str:
    """写出 JSON 报告、逐记录误差 CSV、消融 CSV 与精度曲线"""
    path = save_model_json(report, os.path.join(out_dir, REPORT_NAME))
    if records_table is not None:
        save_table(records_table, os.path.join(out_dir, RECORDS_CSV_NAME))
    if report.ablation:
        save_table(pd.DataFrame([row.model_dump() for row in report.ablation]), os.path.join(out_dir, ABLATION_CSV_NAME))
    if precision is not None and len(precision):
        save_table(precision, os.path.join(out_dir, PRECISION_CSV_NAME))
        plot_precision_curves(precision.dropna(), os.path.join(out_dir, PRECISION_PNG_NAME))
    return path


def run_evaluation(
        estimator: PoseEstimator,
        scenes: list[EvalScene],
        cfg: EvalConfig,
        out_dir: str | None = None,
        seed: int = 0,
) -> EvalReport:
    """评估主函数：召回率、消融、精度曲线与遮挡扫描"""
    start_time = datetime.now()
    logger.info(f"开始评估，场景数量：{len(scenes)}")
    records, failures = evaluate_scenes(estimator, scenes)
    points = {oid: estimator.model_points(oid) for oid in {s.object_id for s in scenes}}

    add_r = adds_r = vsd_r = None
    if scenes and "add" in cfg.metrics:
        add_r = recall_for(records, points, len(scenes), cfg.add_threshold_frac, cfg.symmetric)
    if scenes and "adds" in cfg.metrics:
        adds_r = recall_for(records, points, len(scenes), cfg.add_threshold_frac, True)
    if scenes and "vsd" in cfg.metrics:
        errors = []
        for r in records:
            try:
                errors.append(vsd_error(r.scene_depth, estimator.mesh(r.object_id), r.pose_gt, r.pose_est,
                                        tau=cfg.vsd_tau, delta=cfg.vsd_delta))
            except VsdError:
                errors.append(1.0)
        vsd_r = float(np.sum(np.asarray(errors) < cfg.vsd_e_max) / len(scenes))

    sweep = {"n": cfg.sweep_n, "k": cfg.sweep_k, "p": cfg.sweep_p}
    ablation = ablation_harness(estimator, scenes, {k: v for k, v in sweep.items() if v},
                                cfg.add_threshold_frac, cfg.symmetric) if scenes else []
    table = record_errors_table(records, points)
    precision = precision_curve(table, cfg.precision_thresholds_deg, cfg.precision_thresholds_mm) if len(table) else None
    occlusion = occlusion_sweep(estimator, scenes, cfg.occlusion_ratios, seed=seed) if scenes else {}

    report = EvalReport(
        n_scenes=len(scenes),
        n_failed=len(failures),
        add_recall=add_r,
        adds_recall=adds_r,
        vsd_recall=vsd_r,
        ablation=ablation,
        occlusion=occlusion,
        failures=failures,
    )
    if out_dir:
        write_report(report, out_dir, table, precision)
    logger.info(f"评估完成，失败场景：{len(failures)}，耗时：{datetime.now() - start_time}")
    return report

