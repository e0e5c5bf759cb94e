from typing import Callable

import numpy as np

from ove6d.core.errors import NumericalError


class Tensor:
    """
    稠密数组 + 梯度。参数以 float32 存储，梯度检查时使用 float64。
    requires_grad 为 True 的张量在反向传播时累积 grad。
    """
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(name={self.name}, shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """
    反向模式记录带：前向时按顺序记录每个算子的反向闭包，backward 逆序执行。
    网络结构固定，不需要通用计算图。
    """

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, output: Tensor, grad: np.ndarray | None = None) -> None:
        """从 output 开始反向传播；grad 默认为全 1"""
        seed = np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=output.data.dtype)
        output.grad = seed.reshape(output.data.shape)
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()


def result(data: np.ndarray, *parents: Tensor, name: str | None = None) -> Tensor:
    """构造算子输出：检查数值有限，继承 requires_grad"""
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"算子 {name or ''} 输出包含 NaN/Inf")
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents), name=name)


def needs_grad(tape: Tape | None, *tensors: Tensor) -> bool:
    return tape is not None and any(t.requires_grad for t in tensors)
