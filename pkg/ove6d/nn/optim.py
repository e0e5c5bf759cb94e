import math

import numpy as np

from ove6d.core.errors import InvalidArgumentError

LR_MAX = 1e-3
LR_MIN = 1e-5
WEIGHT_DECAY = 1e-5


class AdamState:
    """Adam 的一阶/二阶矩与步数"""

    def __init__(self, shapes: list[tuple[int, ...]]):
        self.t = 0
        self.m = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.v = [np.zeros(s, dtype=np.float64) for s in shapes]

    def check(self, params: list[np.ndarray]) -> None:
        if len(params) != len(self.m) or any(p.shape != m.shape for p, m in zip(params, self.m)):
            raise InvalidArgumentError("Adam 状态与参数形状不一致")


def adam_step(
        params: list[np.ndarray],
        grads: list[np.ndarray | None],
        state: AdamState,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = WEIGHT_DECAY,
) -> tuple[list[np.ndarray], AdamState]:
    """
    一步 Adam，权重衰减与梯度解耦：
        p <- p - lr·wd·p - lr·m_hat / (sqrt(v_hat) + eps)
    梯度为 None 的参数视为零梯度。返回新参数列表（保持原 dtype）与更新后的状态。
    """
    state.check(params)
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g64 = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g64
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g64 * g64
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p64 = p.astype(np.float64)
        p64 = p64 - lr * weight_decay * p64 - lr * m_hat / (np.sqrt(v_hat) + eps)
        updated.append(p64.astype(p.dtype))
    return updated, state


def cosine_lr(epoch: int, total_epochs: int, lr_max: float = LR_MAX, lr_min: float = LR_MIN) -> float:
    """余弦退火：lr(e) = lr_min + ½(lr_max - lr_min)(1 + cos(π·e/E))"""
    if total_epochs <= 0:
        return lr_max
    e = min(max(epoch, 0), total_epochs)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * e / total_epochs))
