from typing import Callable

import numpy as np

from ove6d.core.errors import GradientCheckError
from ove6d.nn.tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """逐元素 |a - n| / max(|a|, |n|, floor) 的最大值"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / scale).max(initial=0.0))


def numeric_gradient(
        f: Callable[[], float],
        arr: np.ndarray,
        eps: float = 1e-3,
        indices: list[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """
    中心差分梯度。f 读取 arr 的当前值并返回标量；arr 被原地扰动后恢复。
    indices 为空时检查全部元素，否则只计算给定位置（其余为 0）。
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    positions = indices if indices is not None else list(np.ndindex(arr.shape))
    for idx in positions:
        old = arr[idx]
        arr[idx] = old + eps
        f_plus = f()
        arr[idx] = old - eps
        f_minus = f()
        arr[idx] = old
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def check_gradients(
        build: Callable[[Tape | None], Tensor],
        inputs: dict[str, Tensor],
        eps: float = 1e-3,
        tol: float = 1e-4,
        seed: int = 0,
        max_entries: int | None = None,
        floor: float = 1e-8,
) -> dict[str, float]:
    """
    用有限差分检查 build 构造的计算的梯度。
    标量化方式：L = Σ out · R，R 为固定随机投影；输出本身为标量时 R = 1。
    max_entries 限制每个输入检查的元素数（随机抽取）；floor 为相对误差分母的下限。

    Returns:
        每个输入的相对误差

    Raises:
        GradientCheckError: 任一输入的相对误差 >= tol
    """
    rng = np.random.default_rng(seed)
    tape = Tape()
    for t in inputs.values():
        t.zero_grad()
    out = build(tape)
    proj = np.ones_like(out.data, dtype=np.float64) if out.data.ndim == 0 else rng.standard_normal(out.shape)
    tape.backward(out, proj.astype(out.data.dtype))

    def scalar() -> float:
        return float((build(None).data.astype(np.float64) * proj).sum())

    errors: dict[str, float] = {}
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        indices = None
        if max_entries is not None and t.data.size > max_entries:
            flat = rng.choice(t.data.size, size=max_entries, replace=False)
            indices = [np.unravel_index(i, t.shape) for i in flat]
        numeric = numeric_gradient(scalar, t.data, eps=eps, indices=indices)
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        if indices is not None:
            mask = np.zeros(t.shape, dtype=bool)
            for idx in indices:
                mask[idx] = True
            analytic = np.where(mask, analytic, 0.0)
        errors[name] = relative_error(analytic, numeric, floor)
    failed = {k: v for k, v in errors.items() if v >= tol}
    if failed:
        raise GradientCheckError(f"梯度检查失败: {failed}")
    return errors
