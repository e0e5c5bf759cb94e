import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ove6d.core.config import settings
from ove6d.core.errors import DivergenceError, InvalidArgumentError, NumericalError
from ove6d.core.run_config import TrainConfig
from ove6d.cruds.record_crud import save_table
from ove6d.models.geometry import TriangleMesh
from ove6d.models.training import AugmentConfig, TrainingTriplet
from ove6d.nn.optim import AdamState, adam_step, cosine_lr
from ove6d.nn.tensor import Tape
from ove6d.services.datagen_service import sample_triplets
from ove6d.services.network_service import (
    HeldOutReport,
    Ove6dNetwork,
    TripletBatch,
    evaluate_triplets,
    stack_triplets,
)
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.plot_utils import plot_loss_curve
from ove6d.utils.seed_utils import make_rng

logger = init_logger()

CHECKPOINT_NAME = "network.ovck"
LOSS_CSV_NAME = "loss_curve.csv"
LOSS_PNG_NAME = "loss_curve.png"


class ShardResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    size: int
    loss: float
    viewpoint: float
    verification: float
    inplane: float
    grads: list[np.ndarray | None]
    stats: dict[str, np.ndarray]


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    network: Ove6dNetwork
    history: pd.DataFrame
    checkpoint_path: str | None = None


def assemble_batch(
        meshes: list[TriangleMesh],
        cfg: TrainConfig,
        seed: int,
        epoch: int,
        step: int,
        max_workers: int | None = None,
) -> list[TrainingTriplet]:
    """
    随机选 objects_per_batch 个物体，每个物体 anchors_per_object 个三元组，
    批大小 = anchors × objects（默认 16 × 8 = 128）。各物体并行渲染，按物体顺序拼接。
    """
    rng = make_rng(seed, "batch", epoch, step)
    count = min(cfg.objects_per_batch, len(meshes))
    chosen = sorted(int(i) for i in rng.choice(len(meshes), size=count, replace=False))
    augment_cfg = AugmentConfig() if cfg.augment else None
    counter = epoch * cfg.steps_per_epoch + step

    with ThreadPoolExecutor(max_workers=max_workers or settings.THREADS) as executor:
        futures = [
            executor.submit(
                sample_triplets,
                meshes[i],
                cfg.anchors_per_object,
                seed,
                augment_cfg,
                cfg.input_size,
                5.0,
                1.5,
                counter * len(meshes) + i,
            )
            for i in chosen
        ]
        triplets = []
        for future in futures:
            triplets.extend(future.result())
    return triplets


def shard_bounds(batch_size: int, shards: int) -> list[tuple[int, int]]:
    """把批切成连续分片；每片至少 2 个样本（训练模式 BN 的要求）"""
    shards = max(1, min(shards, batch_size // 2))
    edges = np.linspace(0, batch_size, shards + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def shard_gradients(net: Ove6dNetwork, batch: TripletBatch) -> ShardResult:
    """单个分片的前向与反向；参数包装每次新建，分片之间互不共享梯度"""
    params = net.bind(requires_grad=True)
    tape = Tape()
    losses = net.forward_triplets(batch, params=params, tape=tape, train=True)
    tape.backward(losses.total)
    return ShardResult(
        size=batch.size,
        loss=float(losses.total.data),
        viewpoint=float(losses.viewpoint.data.mean()),
        verification=float(losses.verification.data.mean()),
        inplane=float(losses.inplane.data.mean()),
        grads=[params[name].grad for name in net.parameter_names],
        stats=losses.new_stats,
    )


def train_step(
        net: Ove6dNetwork,
        batch: TripletBatch,
        state: AdamState,
        lr: float,
        weight_decay: float,
        shards: int = 1,
        max_workers: int | None = None,
) -> tuple[Ove6dNetwork, AdamState, dict[str, float]]:
    """
    一步 AdamW。各分片梯度按样本数加权、按分片顺序求和，结果与线程调度无关；
    BN 滑动统计量同样按分片顺序加权平均。
    """
    bounds = shard_bounds(batch.size, shards)
    if len(bounds) == 1:
        results = [shard_gradients(net, batch)]
    else:
        with ThreadPoolExecutor(max_workers=max_workers or settings.THREADS) as executor:
            futures = [executor.submit(shard_gradients, net, batch.rows(a, b)) for a, b in bounds]
            results = [f.result() for f in futures]

    total = float(batch.size)
    grads: list[np.ndarray | None] = []
    for i, name in enumerate(net.parameter_names):
        acc = None
        for r in results:
            if r.grads[i] is None:
                continue
            g = r.grads[i].astype(np.float64) * (r.size / total)
            acc = g if acc is None else acc + g
        grads.append(acc)
    stats = {
        name: sum(r.stats[name].astype(np.float64) * (r.size / total) for r in results)
        for name in results[0].stats
    }
    metrics = {
        key: sum(getattr(r, key) * r.size / total for r in results)
        for key in ("loss", "viewpoint", "verification", "inplane")
    }
    if not np.isfinite(metrics["loss"]):
        raise DivergenceError(f"损失不是有限值: {metrics}")

    names = net.parameter_names
    new_params, state = adam_step([net.params[n] for n in names], grads, state, lr, weight_decay=weight_decay)
    net = net.with_state(dict(zip(names, new_params)), stats)
    return net, state, metrics


def train(
        net: Ove6dNetwork,
        meshes: list[TriangleMesh],
        cfg: TrainConfig,
        seed: int = 0,
        out_dir: str | None = None,
        max_workers: int | None = None,
) -> TrainResult:
    """
    训练主函数：每轮 steps_per_epoch 步，学习率按轮余弦退火，AdamW 解耦权重衰减。
    epochs = 0 时网络保持初始化状态。输出目录非空时写出 checkpoint、损失 CSV 与曲线图。

    Raises:
        InvalidArgumentError: 物体少于 2 个或输入尺寸与网络不一致
        DivergenceError: 损失出现 NaN/Inf
    """
    if len(meshes) < 2:
        raise InvalidArgumentError(f"训练至少需要 2 个物体，当前: {len(meshes)}")
    if cfg.input_size != net.config.input_size:
        raise InvalidArgumentError(f"训练输入尺寸 {cfg.input_size} 与网络 {net.config.input_size} 不一致")

    start_time = datetime.now()
    logger.info(
        f"开始训练，物体数量：{len(meshes)}，轮数：{cfg.epochs}，每轮步数：{cfg.steps_per_epoch}，"
        f"批大小：{cfg.anchors_per_object * min(cfg.objects_per_batch, len(meshes))}，参数量：{net.parameter_count}"
    )
    state = AdamState([p.shape for p in net.params.values()])
    rows = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
        epoch_losses = []
        for step in range(cfg.steps_per_epoch):
            triplets = assemble_batch(meshes, cfg, seed, epoch, step, max_workers)
            batch = stack_triplets(triplets)
            try:
                net, state, metrics = train_step(
                    net, batch, state, lr, cfg.weight_decay, cfg.shards, max_workers
                )
            except NumericalError as e:
                raise DivergenceError(f"训练发散：第 {epoch + 1} 轮第 {step + 1} 步，学习率 {lr:.2e}，{e}") from e
            epoch_losses.append(metrics["loss"])
            rows.append({"epoch": epoch, "step": step, "lr": lr, **metrics})
        logger.info(f"第 {epoch + 1}/{cfg.epochs} 轮完成，学习率：{lr:.2e}，平均损失：{np.mean(epoch_losses):.4f}")

    history = pd.DataFrame(rows, columns=["epoch", "step", "lr", "loss", "viewpoint", "verification", "inplane"])
    checkpoint_path = None
    if out_dir:
        checkpoint_path = net.save(os.path.join(out_dir, CHECKPOINT_NAME))
        save_table(history, os.path.join(out_dir, LOSS_CSV_NAME))
        if len(history):
            plot_loss_curve(history, os.path.join(out_dir, LOSS_PNG_NAME))
    logger.info(f"训练完成，耗时：{datetime.now() - start_time}")
    return TrainResult(network=net, history=history, checkpoint_path=checkpoint_path)


def evaluate_held_out(
        net: Ove6dNetwork,
        meshes: list[TriangleMesh],
        anchors: int = 16,
        seed: int = 0,
        min_gamma: float = 15.0,
) -> HeldOutReport:
    """在留出物体上采样不增强的三元组，评估视点排序、平面内误差与验证排序"""
    if not meshes:
        raise InvalidArgumentError("没有留出物体")
    triplets = []
    for i, mesh in enumerate(meshes):
        triplets.extend(sample_triplets(
            mesh, anchors, seed=seed, size=net.config.input_size, counter=1_000_000 + i
        ))
    return evaluate_triplets(net, triplets, min_gamma=min_gamma)


def smoothed_trend(history: pd.DataFrame, window: int = 5) -> float:
    """滑动平均损失的末值减首值，小于 0 表示整体下降"""
    if len(history) == 0:
        return 0.0
    smooth = history["loss"].rolling(window, min_periods=1).mean()
    return float(smooth.iloc[-1] - smooth.iloc[0])
