import os
import tempfile
import time
from typing import Callable

import numpy as np
from pydantic import BaseModel

from ove6d.core.errors import DataError, NumericalError, Ove6dError
from ove6d.cruds.checkpoint_crud import checkpoint_to_bytes
from ove6d.cruds.codebook_crud import codebook_to_bytes, load_codebook, save_codebook
from ove6d.models.codebook import EMBEDDING_DIM
from ove6d.models.geometry import CameraIntrinsics, Pose
from ove6d.nn import functional as F
from ove6d.nn.gradcheck import check_gradients
from ove6d.nn.tensor import Tensor
from ove6d.services.codebook_service import build_codebook
from ove6d.services.datagen_service import build_box_mesh, build_wedge_mesh
from ove6d.services.network_service import NetworkConfig, Ove6dNetwork, TripletBatch
from ove6d.services.render_service import raycast_depth, render_depth
from ove6d.utils.geometry_utils import average_adjacent_viewpoint_distance, rot_x, rot_y, sample_viewpoints
from ove6d.utils.ove6d_logger import init_logger

"""
自检：有限差分梯度检查、光栅化与射线求交的对照、码本与 checkpoint 的逐位往返、视点采样密度。
每项独立运行，单项失败不影响其余检查。
"""

logger = init_logger()

GRAD_EPS = 1e-3
GRAD_TOL = 1e-4
# 含折点的算子（relu、max_pool2d、双线性旋转）与整网用更小的步长，避免差分跨过折点
KINK_GRAD_EPS = 1e-6
KINK_CASES = frozenset({"relu", "max_pool2d", "rotate_2d"})
# 小步长下舍入误差约 1e-9，逐元素相对误差的分母下限随之放大
KINK_GRAD_FLOOR = 1e-4
# BN 之前的卷积偏置解析梯度为 0，数值差分只剩舍入误差
NETWORK_GRAD_FLOOR = 1e-3
# 光栅化与射线求交在物体内部像素上的最大深度差（毫米）
RENDER_DEPTH_TOL = 1e-2
# 覆盖不一致的像素比例上限（只允许出现在三角形边上）
RENDER_COVERAGE_TOL = 0.02
# N=1000 时相邻视点平均距离（度）
AAVD_1000 = (6.1, 1.2)


class CheckResult(BaseModel):
    name: str
    passed: bool
    seconds: float
    detail: str = ""
    exit_code: int = 0


class SelftestReport(BaseModel):
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return max((c.exit_code for c in self.checks), default=0)


def micro_network_config() -> NetworkConfig:
    """梯度检查与往返检查用的小网络"""
    return NetworkConfig(
        input_size=16,
        backbone_channels=(3, 4),
        backbone_strides=(2, 1),
        embedding_dim=EMBEDDING_DIM,
        ove_channels=4,
        ior_channels=3,
        ior_hidden=5,
        ocv_channels=(4, 3),
    )


def _t(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


# =============================================================================
# 梯度检查
# =============================================================================
def case_step(name: str) -> tuple[float, float]:
    """逐层检查的 (差分步长, 相对误差分母下限)"""
    if name in KINK_CASES:
        return KINK_GRAD_EPS, KINK_GRAD_FLOOR
    return GRAD_EPS, 1e-8


def _layer_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, dict[str, Tensor]]]:
    cases: dict[str, tuple[Callable, dict[str, Tensor]]] = {}

    for stride in (1, 2):
        x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)
        cases[f"conv2d_s{stride}"] = (lambda tape, x=x, w=w, b=b, s=stride: F.conv2d(x, w, b, s, tape=tape),
                                      {"x": x, "w": w, "b": b})

    x, w, b = _t(rng, 3, 6), _t(rng, 4, 6), _t(rng, 4)
    cases["linear"] = (lambda tape: F.linear(x, w, b, tape=tape), {"x": x, "w": w, "b": b})

    for train in (True, False):
        xb, gamma, beta = _t(rng, 3, 2, 3, 3), _t(rng, 2), _t(rng, 2)
        mean, var = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
        cases[f"batch_norm_{'train' if train else 'eval'}"] = (
            lambda tape, xb=xb, g=gamma, be=beta, tr=train, m=mean, v=var: F.batch_norm(xb, g, be, m, v, tr, tape=tape)[0],
            {"x": xb, "gamma": gamma, "beta": beta},
        )

    xr = _t(rng, 2, 3, 4)
    cases["relu"] = (lambda tape: F.relu(xr, tape=tape), {"x": xr})
    xp = _t(rng, 2, 2, 5, 5)
    cases["max_pool2d"] = (lambda tape: F.max_pool2d(xp, tape=tape), {"x": xp})
    xg = _t(rng, 2, 3, 4, 4)
    cases["global_avg_pool"] = (lambda tape: F.global_avg_pool(xg, tape=tape), {"x": xg})
    a, c = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    cases["add"] = (lambda tape: F.add(a, c, tape=tape), {"a": a, "b": c})
    a2, c2 = _t(rng, 2, 2, 3, 3), _t(rng, 2, 3, 3, 3)
    cases["concat_channels"] = (lambda tape: F.concat_channels(a2, c2, tape=tape), {"a": a2, "b": c2})
    xn = _t(rng, 3, 5)
    cases["l2_normalize"] = (lambda tape: F.l2_normalize(xn, tape=tape), {"x": xn})
    ca, cb = _t(rng, 3, 5), _t(rng, 3, 5)
    cases["cosine_rows"] = (lambda tape: F.cosine_rows(ca, cb, tape=tape), {"a": ca, "b": cb})

    xs = _t(rng, 2, 2, 6, 6)
    angles = rng.uniform(0.0, 2.0 * np.pi, 2)
    theta = Tensor(np.stack([np.cos(angles), np.sin(angles)], axis=1), requires_grad=True, dtype=np.float64)
    cases["rotate_2d"] = (lambda tape: F.rotate_2d(xs, theta, tape=tape), {"x": xs, "theta": theta})

    pos = Tensor(rng.uniform(-1.0, 1.0, 6), requires_grad=True, dtype=np.float64)
    neg = Tensor(pos.data + rng.choice([-0.5, 0.3], 6), requires_grad=True, dtype=np.float64)
    cases["ranking_loss"] = (lambda tape: F.ranking_loss(pos, neg, 0.1, tape=tape), {"pos": pos, "neg": neg})
    s = Tensor(rng.uniform(-0.5, 0.9, 5), requires_grad=True, dtype=np.float64)
    cases["neg_log_cosine_loss"] = (lambda tape: F.neg_log_cosine_loss(s, tape=tape), {"s": s})
    t1, t2, t3 = _t(rng, 4), _t(rng, 4), _t(rng, 4)
    cases["weighted_mean"] = (lambda tape: F.weighted_mean([t1, t2, t3], [100.0, 10.0, 1.0], tape=tape),
                              {"a": t1, "b": t2, "c": t3})
    return cases


def micro_batch(config: NetworkConfig, size: int = 2, seed: int = 0) -> TripletBatch:
    """随机深度块构成的训练批"""
    rng = np.random.default_rng(seed)
    s = config.input_size
    angles = rng.uniform(0.0, 2.0 * np.pi, size)
    v = rng.uniform(-0.5, 0.5, (size, s, s))
    return TripletBatch(
        v=v,
        v_theta=rng.uniform(-0.5, 0.5, (size, s, s)),
        v_gamma=rng.uniform(-0.5, 0.5, (size, s, s)),
        theta_vec=np.stack([np.cos(angles), np.sin(angles)], axis=1),
        positive=v + 2.0,
    )


def network_gradient_check(seed: int = 0, max_entries: int = 3) -> dict[str, float]:
    """整网三项损失对全部参数的梯度检查（每个参数抽样 max_entries 个元素）"""
    net = Ove6dNetwork.init(micro_network_config(), seed=seed)
    params = net.bind(requires_grad=True, dtype=np.float64)
    batch = micro_batch(net.config, seed=seed).astype(np.float64)

    def build(tape):
        return net.forward_triplets(batch, params=params, tape=tape, train=True).total

    return check_gradients(build, params, eps=KINK_GRAD_EPS, tol=GRAD_TOL, seed=seed, max_entries=max_entries,
                           floor=NETWORK_GRAD_FLOOR)


def gradient_suite(seed: int = 0) -> dict[str, float]:
    """
    逐层 + 空间变换 + 三项损失 + 整网的有限差分检查，返回每项的最大相对误差。

    Raises:
        GradientCheckError: 任一项相对误差 >= 1e-4
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, (build, inputs) in _layer_cases(rng).items():
        eps, floor = case_step(name)
        errors = check_gradients(build, inputs, eps=eps, tol=GRAD_TOL, seed=seed, floor=floor)
        worst[name] = max(errors.values(), default=0.0)
    worst["network"] = max(network_gradient_check(seed).values(), default=0.0)
    return worst


# =============================================================================
# 渲染与格式
# =============================================================================
def renderer_oracle(size: int = 48) -> tuple[float, float]:
    """
    光栅化与逐像素射线求交对照，返回 (内部像素最大深度差, 覆盖不一致比例)。

    Raises:
        NumericalError: 超出容差
    """
    mesh = build_wedge_mesh()
    intr = CameraIntrinsics(fx=60.0, fy=60.0, px=(size - 1) / 2.0, py=(size - 1) / 2.0, width=size, height=size)
    pose = Pose(rotation=rot_x(25.0) @ rot_y(-40.0), translation=np.array([5.0, -3.0, 400.0]))
    raster = render_depth(mesh, pose, intr).depth.astype(np.float64)
    vv, uu = np.mgrid[0:size, 0:size]
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    ray = raycast_depth(mesh, pose, intr, pixels).reshape(size, size)
    both = (raster > 0) & (ray > 0)
    max_diff = float(np.abs(raster[both] - ray[both]).max(initial=0.0))
    mismatch = float(np.mean((raster > 0) != (ray > 0)))
    if not np.any(both) or max_diff > RENDER_DEPTH_TOL or mismatch > RENDER_COVERAGE_TOL:
        raise NumericalError(f"光栅化与射线求交不一致：最大深度差 {max_diff:.4f} mm，覆盖不一致 {mismatch:.4f}")
    return max_diff, mismatch


def codebook_roundtrip(n: int = 24, seed: int = 0) -> int:
    """微型网络构建码本，写出再读回，字节逐位相同；返回文件字节数"""
    net = Ove6dNetwork.init(micro_network_config(), seed=seed)
    mesh = build_box_mesh((80.0, 50.0, 30.0), subdivisions=2, object_id="selftest_box")
    cb = build_codebook(net, mesh, n=n, f_base=5.0, mesh_ref="selftest_box.obj", batch_size=8, max_workers=1)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_codebook(cb, os.path.join(tmp, "selftest_box.ovcb"))
        loaded = load_codebook(path)
    original, again = codebook_to_bytes(cb), codebook_to_bytes(loaded)
    if original != again or loaded.mesh_ref != cb.mesh_ref:
        raise DataError("码本往返结果与原始码本不一致")
    return len(original)


def checkpoint_roundtrip(seed: int = 0) -> int:
    net = Ove6dNetwork.init(micro_network_config(), seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        loaded = Ove6dNetwork.load(net.save(os.path.join(tmp, "selftest.ovck")))
    original, again = checkpoint_to_bytes(net.to_records()), checkpoint_to_bytes(loaded.to_records())
    if original != again:
        raise DataError("checkpoint 往返结果与原始参数不一致")
    return len(original)


def viewpoint_density(n: int = 1000) -> float:
    aavd = average_adjacent_viewpoint_distance(sample_viewpoints(n))
    target, tol = AAVD_1000
    if abs(aavd - target) > tol:
        raise NumericalError(f"N={n} 的相邻视点平均距离 {aavd:.2f}° 超出 {target}±{tol}°")
    return aavd


# =============================================================================
# 汇总
# =============================================================================
def _run(name: str, fn: Callable[[], object]) -> CheckResult:
    start = time.perf_counter()
    try:
        value = fn()
    except Ove6dError as e:
        logger.error(f"自检 {name} 失败: {e}")
        return CheckResult(name=name, passed=False, seconds=time.perf_counter() - start,
                           detail=str(e), exit_code=e.exit_code)
    logger.info(f"自检 {name} 通过: {value}")
    return CheckResult(name=name, passed=True, seconds=time.perf_counter() - start, detail=str(value))


def run_selftest(seed: int = 0) -> SelftestReport:
    checks = [
        _run("gradients", lambda: gradient_suite(seed)),
        _run("renderer_oracle", renderer_oracle),
        _run("codebook_roundtrip", lambda: codebook_roundtrip(seed=seed)),
        _run("checkpoint_roundtrip", lambda: checkpoint_roundtrip(seed)),
        _run("viewpoint_density", viewpoint_density),
    ]
    report = SelftestReport(checks=checks)
    logger.info(f"自检完成：{sum(c.passed for c in checks)}/{len(checks)} 项通过")
    return report
