import numpy as np

from ove6d.core.errors import InvalidArgumentError
from ove6d.nn.tensor import Tape, Tensor, needs_grad, result

"""
固定算子集合：每个算子计算前向结果，并在 tape 上记录反向闭包。
张量布局为 NCHW；卷积核固定 3x3、padding 1。
归约（BN 统计量、全局池化、余弦、损失）使用 float64 累加。
"""

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
# neg_log_cosine_loss 的下限，避免 log(0)
COS_FLOOR = -1.0 + 1e-7


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# =============================================================================
# 卷积 / 全连接
# =============================================================================
def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, tape: Tape | None = None) -> Tensor:
    """
    3x3 互相关，padding 1，输出尺寸 ceil(in / stride)。
    按 9 个核偏移分别做一次矩阵乘并累加，避免展开整个 im2col 矩阵。
    """
    if x.data.ndim != 4:
        raise InvalidArgumentError(f"conv2d 输入必须是 NCHW: {x.shape}")
    n, c, h, wd = x.shape
    o, c_w, kh, kw = w.shape
    if c != c_w:
        raise InvalidArgumentError(f"conv2d 通道数不匹配: 输入 {c}，卷积核 {c_w}")
    if (kh, kw) != (3, 3):
        raise InvalidArgumentError(f"只支持 3x3 卷积核: {(kh, kw)}")
    dtype = x.data.dtype
    ho, wo = -(-h // stride), -(-wd // stride)
    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (1, 1), (1, 1), (0, 0)))
    wt = w.data.astype(dtype, copy=False)

    def window(arr, i, j):
        return arr[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]

    out = np.zeros((n * ho * wo, o), dtype=dtype)
    for i in range(3):
        for j in range(3):
            cols = np.ascontiguousarray(window(xp, i, j)).reshape(-1, c)
            out += cols @ wt[:, :, i, j].T
    out += b.data.astype(dtype, copy=False)
    y = result(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), x, w, b, name="conv2d")

    if needs_grad(tape, x, w, b):
        def _backward():
            if y.grad is None:
                return
            g = np.ascontiguousarray(y.grad.transpose(0, 2, 3, 1)).reshape(-1, o)
            dw = np.zeros_like(wt) if w.requires_grad else None
            dxp = np.zeros_like(xp) if x.requires_grad else None
            for i in range(3):
                for j in range(3):
                    if dw is not None:
                        cols = np.ascontiguousarray(window(xp, i, j)).reshape(-1, c)
                        dw[:, :, i, j] = g.T @ cols
                    if dxp is not None:
                        window(dxp, i, j)[...] += (g @ wt[:, :, i, j]).reshape(n, ho, wo, c)
            if dw is not None:
                w.accumulate(dw)
            if b.requires_grad:
                b.accumulate(g.sum(axis=0))
            if dxp is not None:
                x.accumulate(dxp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2))
        tape.record(_backward)
    return y


def linear(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """全连接：x (N, D)，w (O, D)，b (O,)"""
    if x.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise InvalidArgumentError(f"linear 形状不匹配: 输入 {x.shape}，权重 {w.shape}")
    wt = w.data.astype(x.data.dtype, copy=False)
    y = result(x.data @ wt.T + b.data.astype(x.data.dtype, copy=False), x, w, b, name="linear")

    if needs_grad(tape, x, w, b):
        def _backward():
            if y.grad is None:
                return
            if x.requires_grad:
                x.accumulate(y.grad @ wt)
            if w.requires_grad:
                w.accumulate(y.grad.T @ x.data)
            if b.requires_grad:
                b.accumulate(y.grad.sum(axis=0))
        tape.record(_backward)
    return y


# =============================================================================
# 归一化 / 激活 / 池化
# =============================================================================
def batch_norm(
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        train: bool,
        momentum: float = BN_MOMENTUM,
        eps: float = BN_EPS,
        tape: Tape | None = None,
) -> tuple[Tensor, tuple[np.ndarray, np.ndarray] | None]:
    """
    批归一化。训练模式使用批统计量（有偏方差），并返回更新后的滑动统计量
    （无偏方差，动量 momentum）；评估模式使用滑动统计量，返回 None。
    滑动统计量不在原地修改，由调用方按顺序写回。
    """
    axes = (0, 2, 3) if x.data.ndim == 4 else (0,)
    bshape = (1, -1, 1, 1) if x.data.ndim == 4 else (1, -1)
    dtype = x.data.dtype
    x64 = x.data.astype(np.float64)
    count = x64.size // x64.shape[1]

    if train:
        if count < 2:
            raise InvalidArgumentError("训练模式的批归一化每个通道至少需要 2 个样本")
        mean = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        new_stats = (
            ((1.0 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype),
            ((1.0 - momentum) * running_var + momentum * var * count / (count - 1)).astype(running_var.dtype),
        )
    else:
        mean = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
        new_stats = None

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean.reshape(bshape)) * inv_std.reshape(bshape)
    g64 = gamma.data.astype(np.float64).reshape(bshape)
    out = xhat * g64 + beta.data.astype(np.float64).reshape(bshape)
    y = result(out.astype(dtype), x, gamma, beta, name="batch_norm")

    if needs_grad(tape, x, gamma, beta):
        def _backward():
            if y.grad is None:
                return
            g = y.grad.astype(np.float64)
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * g64
                if train:
                    s1 = dxhat.sum(axis=axes).reshape(bshape)
                    s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                    dx = inv_std.reshape(bshape) / count * (count * dxhat - s1 - xhat * s2)
                else:
                    dx = dxhat * inv_std.reshape(bshape)
                x.accumulate(dx)
        tape.record(_backward)
    return y, new_stats


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    y = result(np.maximum(x.data, 0), x, name="relu")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is not None:
                x.accumulate(y.grad * (x.data > 0))
        tape.record(_backward)
    return y


def max_pool2d(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x2 窗口、步长 2 的最大池化；奇数尺寸的最后一行/列被丢弃"""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise InvalidArgumentError(f"max_pool2d 输入尺寸过小: {x.shape}")
    blocks = (
        x.data[:, :, :2 * h2, :2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    y = result(out, x, name="max_pool2d")

    if needs_grad(tape, x):
        def _backward():
            if y.grad is None:
                return
            dblocks = np.zeros_like(blocks)
            np.put_along_axis(dblocks, idx[..., None], y.grad[..., None], axis=-1)
            dx = np.zeros_like(x.data)
            dx[:, :, :2 * h2, :2 * w2] = (
                dblocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
            )
            x.accumulate(dx)
        tape.record(_backward)
    return y


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """(N, C, H, W) -> (N, C)"""
    n, c, h, w = x.shape
    y = result(x.data.astype(np.float64).mean(axis=(2, 3)).astype(x.data.dtype), x, name="global_avg_pool")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is not None:
                x.accumulate(np.broadcast_to(y.grad[:, :, None, None] / (h * w), x.shape))
        tape.record(_backward)
    return y


# =============================================================================
# 结构算子
# =============================================================================
def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"add 形状不匹配: {a.shape} vs {b.shape}")
    y = result(a.data + b.data, a, b, name="add")
    if needs_grad(tape, a, b):
        def _backward():
            if y.grad is None:
                return
            if a.requires_grad:
                a.accumulate(y.grad)
            if b.requires_grad:
                b.accumulate(y.grad)
        tape.record(_backward)
    return y


def concat_channels(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """沿通道维拼接 [a; b]"""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise InvalidArgumentError(f"concat_channels 形状不匹配: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    y = result(np.concatenate([a.data, b.data], axis=1), a, b, name="concat_channels")
    if needs_grad(tape, a, b):
        def _backward():
            if y.grad is None:
                return
            if a.requires_grad:
                a.accumulate(y.grad[:, :ca])
            if b.requires_grad:
                b.accumulate(y.grad[:, ca:])
        tape.record(_backward)
    return y


def concat_rows(parts: list[Tensor], tape: Tape | None = None) -> Tensor:
    """沿批维拼接"""
    sizes = [p.shape[0] for p in parts]
    y = result(np.concatenate([p.data for p in parts], axis=0), *parts, name="concat_rows")
    if needs_grad(tape, *parts):
        def _backward():
            if y.grad is None:
                return
            start = 0
            for p, size in zip(parts, sizes):
                if p.requires_grad:
                    p.accumulate(y.grad[start:start + size])
                start += size
        tape.record(_backward)
    return y


def take_rows(x: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    """取批维的 [start, stop) 切片"""
    y = result(x.data[start:stop], x, name="take_rows")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is None:
                return
            dx = np.zeros_like(x.data)
            dx[start:stop] = y.grad
            x.accumulate(dx)
        tape.record(_backward)
    return y


def flatten(x: Tensor, tape: Tape | None = None) -> Tensor:
    shape = x.shape
    y = result(x.data.reshape(shape[0], -1), x, name="flatten")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is not None:
                x.accumulate(y.grad.reshape(shape))
        tape.record(_backward)
    return y


def reshape(x: Tensor, shape: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    old = x.shape
    y = result(x.data.reshape(shape), x, name="reshape")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is not None:
                x.accumulate(y.grad.reshape(old))
        tape.record(_backward)
    return y


def l2_normalize(x: Tensor, tape: Tape | None = None) -> Tensor:
    """逐行 L2 归一化 (N, D)"""
    x64 = x.data.astype(np.float64)
    norm = np.sqrt((x64 * x64).sum(axis=1, keepdims=True))
    if np.any(norm == 0.0):
        raise InvalidArgumentError("l2_normalize 输入包含零向量")
    u = x64 / norm
    y = result(u.astype(x.data.dtype), x, name="l2_normalize")
    if needs_grad(tape, x):
        def _backward():
            if y.grad is None:
                return
            g = y.grad.astype(np.float64)
            x.accumulate((g - u * (g * u).sum(axis=1, keepdims=True)) / norm)
        tape.record(_backward)
    return y


# =============================================================================
# 相似度与损失
# =============================================================================
def cosine_similarity(a, b) -> float:
    """两个向量的余弦相似度，范围 [-1, 1]"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidArgumentError("余弦相似度的输入不能是零向量")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_rows(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """逐行余弦相似度 (N, D), (N, D) -> (N,)"""
    if a.shape != b.shape or a.data.ndim != 2:
        raise InvalidArgumentError(f"cosine_rows 形状不匹配: {a.shape} vs {b.shape}")
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)
    na = np.linalg.norm(a64, axis=1)
    nb = np.linalg.norm(b64, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise InvalidArgumentError("余弦相似度的输入包含零向量")
    s = (a64 * b64).sum(axis=1) / (na * nb)
    y = result(s.astype(a.data.dtype), a, b, name="cosine_rows")
    if needs_grad(tape, a, b):
        def _backward():
            if y.grad is None:
                return
            g = y.grad.astype(np.float64)[:, None]
            if a.requires_grad:
                a.accumulate(g * (b64 / (na * nb)[:, None] - s[:, None] * a64 / (na ** 2)[:, None]))
            if b.requires_grad:
                b.accumulate(g * (a64 / (na * nb)[:, None] - s[:, None] * b64 / (nb ** 2)[:, None]))
        tape.record(_backward)
    return y


def ranking_loss(pos: Tensor, neg: Tensor, margin: float = 0.1, tape: Tape | None = None) -> Tensor:
    """逐样本排序损失 max(neg - pos + margin, 0)"""
    z = neg.data - pos.data + margin
    active = z > 0
    y = result(np.where(active, z, 0).astype(pos.data.dtype), pos, neg, name="ranking_loss")
    if needs_grad(tape, pos, neg):
        def _backward():
            if y.grad is None:
                return
            g = y.grad * active
            if neg.requires_grad:
                neg.accumulate(g)
            if pos.requires_grad:
                pos.accumulate(-g)
        tape.record(_backward)
    return y


def neg_log_cosine_loss(s: Tensor, tape: Tape | None = None) -> Tensor:
    """-log((1 + s) / 2)，s 下限截断到 -1 + 1e-7"""
    s64 = s.data.astype(np.float64)
    clipped = s64 < COS_FLOOR
    sc = np.maximum(s64, COS_FLOOR)
    y = result((-np.log((1.0 + sc) / 2.0)).astype(s.data.dtype), s, name="neg_log_cosine_loss")
    if needs_grad(tape, s):
        def _backward():
            if y.grad is not None:
                s.accumulate(np.where(clipped, 0.0, -y.grad / (1.0 + sc)))
        tape.record(_backward)
    return y


def weighted_mean(terms: list[Tensor], weights: list[float], tape: Tape | None = None) -> Tensor:
    """(1/N) Σ_n Σ_i w_i · term_i[n]，返回标量张量"""
    if len(terms) != len(weights) or not terms:
        raise InvalidArgumentError("weighted_mean 的项数与权重数不一致")
    n = terms[0].shape[0]
    if n == 0:
        raise InvalidArgumentError("weighted_mean 需要非空批次")
    total = sum(w * t.data.astype(np.float64) for t, w in zip(terms, weights))
    y = result(np.asarray(total.mean(), dtype=terms[0].data.dtype), *terms, name="weighted_mean")
    if needs_grad(tape, *terms):
        def _backward():
            if y.grad is None:
                return
            for t, w in zip(terms, weights):
                if t.requires_grad:
                    t.accumulate(np.full(t.shape, float(y.grad) * w / n))
        tape.record(_backward)
    return y


# =============================================================================
# 二维空间变换
# =============================================================================
def rotate_2d(x: Tensor, theta, tape: Tape | None = None) -> Tensor:
    """
    绕特征图中心 (S-1)/2 按平面内单位向量 theta=(cos, sin) 旋转每个通道，双线性采样，越界为 0。
    输出像素 (u, v) 取自输入位置：
        src_u = c + ϑ1·du + ϑ2·dv,  src_v = c - ϑ2·du + ϑ1·dv
    梯度同时回传到特征图与 theta。
    """
    theta = _as_tensor(theta)
    if x.data.ndim != 4 or x.shape[2] != x.shape[3]:
        raise InvalidArgumentError(f"rotate_2d 需要方形特征图: {x.shape}")
    n, c, s, _ = x.shape
    if theta.shape != (n, 2):
        raise InvalidArgumentError(f"theta 形状应为 ({n}, 2)，实际为 {theta.shape}")

    ctr = (s - 1) / 2.0
    grid = np.arange(s, dtype=np.float64) - ctr
    du = grid[None, None, :]
    dv = grid[None, :, None]
    t = theta.data.astype(np.float64)
    t1, t2 = t[:, 0, None, None], t[:, 1, None, None]
    su = ctr + t1 * du + t2 * dv
    sv = ctr - t2 * du + t1 * dv
    x0 = np.floor(su)
    y0 = np.floor(sv)
    ax = su - x0
    ay = sv - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    xt = x.data.transpose(0, 2, 3, 1)
    nidx = np.arange(n)[:, None, None]
    corners = []
    for dy, dx, wgt in (
            (0, 0, (1 - ax) * (1 - ay)),
            (0, 1, ax * (1 - ay)),
            (1, 0, (1 - ax) * ay),
            (1, 1, ax * ay),
    ):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < s) & (xx >= 0) & (xx < s)
        yc, xc = np.clip(yy, 0, s - 1), np.clip(xx, 0, s - 1)
        vals = xt[nidx, yc, xc].astype(np.float64) * valid[..., None]
        corners.append((yc, xc, valid, wgt, vals))

    out_t = sum(wgt[..., None] * vals for _, _, _, wgt, vals in corners)
    y = result(out_t.transpose(0, 3, 1, 2).astype(x.data.dtype), x, theta, name="rotate_2d")

    if needs_grad(tape, x, theta):
        def _backward():
            if y.grad is None:
                return
            gt = y.grad.transpose(0, 2, 3, 1).astype(np.float64)
            if x.requires_grad:
                dxt = np.zeros((n, s, s, c), dtype=np.float64)
                for yc, xc, valid, wgt, _ in corners:
                    np.add.at(dxt, (np.broadcast_to(nidx, yc.shape), yc, xc), (wgt * valid)[..., None] * gt)
                x.accumulate(dxt.transpose(0, 3, 1, 2))
            if theta.requires_grad:
                v00, v01, v10, v11 = (cor[4] for cor in corners)
                ay4, ax4 = ay[..., None], ax[..., None]
                gu = (1 - ay4) * (v01 - v00) + ay4 * (v11 - v10)
                gv = (1 - ax4) * (v10 - v00) + ax4 * (v11 - v01)
                du4, dv4 = du[..., None], dv[..., None]
                d1 = (gt * (gu * du4 + gv * dv4)).sum(axis=(1, 2, 3))
                d2 = (gt * (gu * dv4 - gv * du4)).sum(axis=(1, 2, 3))
                theta.accumulate(np.stack([d1, d2], axis=1))
        tape.record(_backward)
    return y


def inplane_vectors(rotations) -> np.ndarray:
    """平面内旋转矩阵 (N, 3, 3) 或 (3, 3) -> 单位向量 (N, 2)"""
    r = np.asarray(rotations, dtype=np.float64)
    if r.ndim == 2:
        r = r[None]
    v = np.stack([r[:, 0, 0], r[:, 1, 0]], axis=1)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def spatial_transform_2d(feature_map, r_theta, tape: Tape | None = None) -> Tensor:
    """按平面内旋转矩阵 r_theta（单个或逐样本）旋转特征图"""
    x = _as_tensor(feature_map)
    vec = inplane_vectors(r_theta)
    if len(vec) == 1 and x.shape[0] > 1:
        vec = np.repeat(vec, x.shape[0], axis=0)
    return rotate_2d(x, Tensor(vec, dtype=np.float64), tape=tape)
