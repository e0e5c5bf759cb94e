import argparse
import os
import sys

import sentry_sdk
from pydantic import ValidationError

from ove6d.core.config import settings
from ove6d.core.errors import ConfigError, DataError, Ove6dError
from ove6d.core.run_config import RunConfig, echo_run_config, load_run_config, run_config_schema
from ove6d.cruds.codebook_crud import load_codebook
from ove6d.cruds.frame_crud import load_depth_png, load_intrinsics, load_mask_png
from ove6d.cruds.mesh_crud import load_mesh
from ove6d.cruds.record_crud import read_manifest, save_model_json, save_pose_record
from ove6d.models.pose import EstimateConfig, PoseRecord
from ove6d.services.codebook_service import CodebookRegistry, build_codebooks
from ove6d.services.datagen_service import build_dataset
from ove6d.services.metrics_service import meshes_from_manifest, run_evaluation, scenes_from_manifest
from ove6d.services.network_service import NetworkConfig, Ove6dNetwork
from ove6d.services.pipeline_service import PoseEstimator
from ove6d.services.selftest_service import run_selftest
from ove6d.services.train_service import evaluate_held_out, train
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.seed_utils import derive_seed

"""
命令行入口：gen-data / train / build-codebook / estimate / evaluate / selftest / schema。
退出码：0 正常，2 配置错误，3 数据错误，4 数值错误。
"""

logger = init_logger()

POSE_RECORD_NAME = "pose.json"
HELD_OUT_NAME = "held_out.json"

# 如果Sentry DSN存在且环境不是本地，则初始化Sentry SDK
if settings.sentry_enabled:
    sentry_sdk.init(dsn=str(settings.SENTRY_DSN), enable_tracing=True)


def estimate_config(cfg: RunConfig, n_views: int) -> EstimateConfig:
    """RunConfig 的 estimate 段 + 实际码本大小 -> 级联参数"""
    k = min(cfg.estimate.k_retrieval, n_views)
    return EstimateConfig(
        n_views=n_views,
        k_retrieval=k,
        p_proposals=min(cfg.estimate.p_proposals, k),
        icp=cfg.estimate.icp,
        f_base=cfg.codebook.f_base,
        unobserved_as_outlier=cfg.estimate.unobserved_as_outlier,
        allocentric_correction=cfg.estimate.allocentric_correction,
        crop_scale=cfg.estimate.crop_scale,
        min_mask_pixels=cfg.estimate.min_mask_pixels,
        outlier_frac=cfg.estimate.outlier_frac,
        icp_max_iters=cfg.estimate.icp_max_iters,
        icp_tol=cfg.estimate.icp_tol,
        icp_max_points=cfg.estimate.icp_max_points,
    )


def _mesh_for(cb_mesh_ref: str, mesh_path: str | None, object_id: str):
    path = mesh_path or cb_mesh_ref
    if not path:
        raise DataError(f"码本 {object_id} 没有记录网格路径，请通过 --mesh 指定")
    return load_mesh(path, object_id)


# =============================================================================
# 子命令
# =============================================================================
def cmd_gen_data(cfg: RunConfig, args) -> int:
    manifest = build_dataset(cfg, args.out)
    print(f"物体 {len(manifest.objects)} 个，场景 {len(manifest.scenes)} 个 -> {args.out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    manifest = read_manifest(args.data)
    meshes = meshes_from_manifest(manifest, args.data, "train")
    held = meshes_from_manifest(manifest, args.data, "held-out")
    net = Ove6dNetwork.init(NetworkConfig.from_train(cfg.train), seed=derive_seed(cfg.seed, "init"))
    result = train(net, list(meshes.values()), cfg.train, seed=cfg.seed, out_dir=args.out)
    if held and cfg.train.epochs > 0:
        report = evaluate_held_out(result.network, list(held.values()), seed=cfg.seed)
        save_model_json(report, os.path.join(args.out, HELD_OUT_NAME))
    print(f"checkpoint -> {result.checkpoint_path}")
    return 0


def cmd_build_codebook(cfg: RunConfig, args) -> int:
    net = Ove6dNetwork.load(args.checkpoint)
    meshes = [load_mesh(p) for p in args.mesh]
    refs = {m.object_id: os.path.abspath(p) for m, p in zip(meshes, args.mesh)}
    paths = build_codebooks(
        net, meshes, args.out, n=cfg.codebook.n_views, f_base=cfg.codebook.f_base,
        batch_size=cfg.codebook.batch_size, mesh_refs=refs,
    )
    for p in paths:
        print(p)
    return 0


def cmd_estimate(cfg: RunConfig, args) -> int:
    net = Ove6dNetwork.load(args.checkpoint)
    cb = load_codebook(args.codebook)
    mesh = _mesh_for(cb.mesh_ref, args.mesh, cb.object_id)
    intr = load_intrinsics(args.intrinsics) if args.intrinsics else None
    depth = load_depth_png(args.depth, intr)
    mask = load_mask_png(args.mask)
    estimator = PoseEstimator(net, CodebookRegistry([cb]), {cb.object_id: mesh}, estimate_config(cfg, cb.size))
    result = estimator.estimate(depth, mask, cb.object_id)
    path = save_pose_record(PoseRecord.from_result(result), os.path.join(args.out, POSE_RECORD_NAME))
    print(f"q={result.final.quality_q:.4f} -> {path}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    net = Ove6dNetwork.load(args.checkpoint)
    registry = CodebookRegistry.from_dir(args.codebooks)
    manifest = read_manifest(args.data)
    meshes = meshes_from_manifest(manifest, args.data)
    scenes = [s for s in scenes_from_manifest(manifest, args.data) if s.object_id in registry]
    n_views = min((registry.get(oid).size for oid in registry.object_ids), default=cfg.codebook.n_views)
    estimator = PoseEstimator(net, registry, meshes, estimate_config(cfg, n_views))
    report = run_evaluation(estimator, scenes, cfg.eval, out_dir=args.out, seed=cfg.seed)
    print(report.model_dump_json(indent=2))
    return 0


def cmd_selftest(cfg: RunConfig, args) -> int:
    report = run_selftest(cfg.seed)
    for c in report.checks:
        print(f"[{'OK' if c.passed else 'FAIL'}] {c.name} ({c.seconds:.1f}s) {c.detail}")
    if args.out:
        save_model_json(report, os.path.join(args.out, "selftest.json"))
    return report.exit_code


def cmd_schema(cfg: RunConfig, args) -> int:
    print(run_config_schema())
    return 0


# =============================================================================
# 参数解析
# =============================================================================
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="RunConfig JSON 文件")
    common.add_argument("--seed", type=int, default=None, help="覆盖配置中的顶层种子")
    common.add_argument("--threads", type=int, default=None, help="内部线程数，默认为逻辑核数")
    common.add_argument("--out", default=settings.DATA_DIR, help="输出目录")

    parser = argparse.ArgumentParser(prog="ove6d", description="基于深度图与视点码本的 6D 位姿估计")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="生成程序化物体、评估场景与数据清单")

    p = sub.add_parser("train", parents=[common], help="训练网络，写出 checkpoint 与损失曲线")
    p.add_argument("--data", required=True, help="gen-data 的输出目录")

    p = sub.add_parser("build-codebook", parents=[common], help="为物体网格构建视点码本")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True, nargs="+", help="OBJ/PLY 网格文件")

    p = sub.add_parser("estimate", parents=[common], help="单帧位姿估计")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--depth", required=True, help="16 位深度 PNG")
    p.add_argument("--mask", required=True, help="掩码 PNG")
    p.add_argument("--intrinsics", default=None, help="内参 JSON，缺省时读取深度图附属文件")
    p.add_argument("--mesh", default=None, help="缺省时使用码本记录的网格路径")

    p = sub.add_parser("evaluate", parents=[common], help="批量评估与消融")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebooks", required=True, help="码本目录")
    p.add_argument("--data", required=True, help="包含场景与数据清单的目录")

    sub.add_parser("selftest", parents=[common], help="梯度检查、渲染对照、格式往返")
    sub.add_parser("schema", parents=[common], help="输出 RunConfig 的 JSON schema")
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "build-codebook": cmd_build_codebook,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "selftest": cmd_selftest,
    "schema": cmd_schema,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(f"--threads 必须 >= 1: {args.threads}")
            settings.THREADS = args.threads
        cfg = load_run_config(args.config)
        if args.seed is not None:
            try:
                cfg = RunConfig.model_validate({**cfg.model_dump(), "seed": args.seed})
            except ValidationError as e:
                raise ConfigError(f"--seed 不合法: {args.seed}\n{e}") from e
        if args.command not in ("schema", "selftest"):
            echo_run_config(cfg, args.out)
        return COMMANDS[args.command](cfg, args)
    except Ove6dError as e:
        logger.error(f"{args.command} 失败: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command} 输入校验失败: {e}")
        return DataError.exit_code
    except Exception as e:
        logger.exception(f"{args.command} 出现未预期的异常: {e}")
        sentry_sdk.capture_exception(e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
