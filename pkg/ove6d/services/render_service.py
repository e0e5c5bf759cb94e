import numpy as np

from ove6d.core.errors import EmptyFrameError, InvalidArgumentError
from ove6d.models.frames import FAR_CLIP_MM, NEAR_CLIP_MM, DepthFrame, MaskFrame
from ove6d.models.geometry import CameraIntrinsics, Pose, TriangleMesh

"""
CPU 深度光栅化：边函数 + top-left 填充规则 + 透视校正深度 + z-buffer。
射线求交（Möller–Trumbore）只作为测试基准。
"""

CODEBOOK_SIZE = 128
CROP_SCALE = 1.5
# 单批处理的 (三角形, 像素) 对数量上限
_MAX_PAIRS = 4_000_000


def canonical_intrinsics(f_base: float = 5.0, crop_scale: float = CROP_SCALE, size: int = CODEBOOK_SIZE) -> CameraIntrinsics:
    """码本渲染相机：物体直径投影为 size / crop_scale 像素，主点位于图像中心"""
    if f_base <= 0:
        raise InvalidArgumentError(f"f_base 必须大于 0: {f_base}")
    focal = size * f_base / crop_scale
    ctr = (size - 1) / 2.0
    return CameraIntrinsics(fx=focal, fy=focal, px=ctr, py=ctr, width=size, height=size)


def codebook_view_pose(mesh: TriangleMesh, viewpoint: np.ndarray, f_base: float = 5.0) -> Pose:
    """相机位于半径 f_base·直径的球面上，物体包围盒中心在光轴上"""
    r = np.asarray(viewpoint, dtype=np.float64)
    t = np.array([0.0, 0.0, f_base * mesh.diameter]) - r @ mesh.center
    return Pose(rotation=r, translation=t)


def _camera_vertices(mesh: TriangleMesh, pose: Pose) -> np.ndarray:
    vc = pose.transform(mesh.vertices)
    if not np.any(vc[:, 2] > NEAR_CLIP_MM):
        raise EmptyFrameError("物体完全位于相机后方（或近裁剪面之前）")
    return vc


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns_edge(ax, ay, bx, by):
    # top-left 规则：共享边上的像素只归属于其中一个三角形
    dx, dy = bx - ax, by - ay
    return (dy > 0) | ((dy == 0) & (dx < 0))


def _rasterize_chunk(
        su: np.ndarray, sv: np.ndarray, z: np.ndarray, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """su/sv/z: (T, 3)，返回 (像素扁平索引, 深度)"""
    w, h = intr.width, intr.height
    umin = np.clip(np.ceil(su.min(axis=1)), 0, w).astype(np.int64)
    umax = np.clip(np.floor(su.max(axis=1)), -1, w - 1).astype(np.int64)
    vmin = np.clip(np.ceil(sv.min(axis=1)), 0, h).astype(np.int64)
    vmax = np.clip(np.floor(sv.max(axis=1)), -1, h - 1).astype(np.int64)
    bw = np.maximum(umax - umin + 1, 0)
    bh = np.maximum(vmax - vmin + 1, 0)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)

    tri = np.repeat(np.arange(len(su)), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(total) - starts[tri]
    pu = umin[tri] + k % bw[tri]
    pv = vmin[tri] + k // bw[tri]
    px, py = pu.astype(np.float64), pv.astype(np.float64)

    x0, x1, x2 = su[tri, 0], su[tri, 1], su[tri, 2]
    y0, y1, y2 = sv[tri, 0], sv[tri, 1], sv[tri, 2]
    area = _edge(x0, y0, x1, y1, x2, y2)
    w0 = _edge(x1, y1, x2, y2, px, py)
    w1 = _edge(x2, y2, x0, y0, px, py)
    w2 = _edge(x0, y0, x1, y1, px, py)
    # 统一为正向绕序：负面积时翻转符号，同时翻转边方向
    sign = np.where(area < 0, -1.0, 1.0)
    w0, w1, w2, area = w0 * sign, w1 * sign, w2 * sign, area * sign
    own0 = np.where(sign > 0, _owns_edge(x1, y1, x2, y2), _owns_edge(x2, y2, x1, y1))
    own1 = np.where(sign > 0, _owns_edge(x2, y2, x0, y0), _owns_edge(x0, y0, x2, y2))
    own2 = np.where(sign > 0, _owns_edge(x0, y0, x1, y1), _owns_edge(x1, y1, x0, y0))
    inside = (
            (area > 1e-12)
            & ((w0 > 0) | ((w0 == 0) & own0))
            & ((w1 > 0) | ((w1 == 0) & own1))
            & ((w2 > 0) | ((w2 == 0) & own2))
    )
    if not np.any(inside):
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    tri, pu, pv = tri[inside], pu[inside], pv[inside]
    l0, l1, l2 = w0[inside] / area[inside], w1[inside] / area[inside], w2[inside] / area[inside]
    # 透视校正：1/z 在屏幕空间线性
    inv_z = l0 / z[tri, 0] + l1 / z[tri, 1] + l2 / z[tri, 2]
    depth = 1.0 / inv_z
    keep = (depth > NEAR_CLIP_MM) & (depth < FAR_CLIP_MM)
    return (pv[keep] * w + pu[keep]), depth[keep]


def render_depth(mesh: TriangleMesh, pose: Pose, intr: CameraIntrinsics) -> DepthFrame:
    """
    渲染无噪声深度图：每个像素为最近表面的相机坐标 z（毫米），无命中为 0。
    任一顶点在近裁剪面之前的三角形被丢弃。

    Raises:
        EmptyFrameError: 物体完全位于相机后方
    """
    vc = _camera_vertices(mesh, pose)
    tris = vc[mesh.faces]
    tris = tris[np.all(tris[:, :, 2] > NEAR_CLIP_MM, axis=1)]
    su = intr.fx * tris[:, :, 0] / tris[:, :, 2] + intr.px
    sv = intr.fy * tris[:, :, 1] / tris[:, :, 2] + intr.py
    z = tris[:, :, 2]

    w, h = intr.width, intr.height
    best = np.full(w * h, np.inf)
    # 按包围盒像素数分批，限制内存
    extent = (np.ptp(su, axis=1) + 2) * (np.ptp(sv, axis=1) + 2) if len(tris) else np.zeros(0)
    start = 0
    while start < len(tris):
        cum = np.cumsum(np.minimum(extent[start:], float(w * h)))
        stop = start + max(1, int(np.searchsorted(cum, _MAX_PAIRS)))
        idx, depth = _rasterize_chunk(su[start:stop], sv[start:stop], z[start:stop], intr)
        if len(idx):
            order = np.lexsort((depth, idx))
            idx, depth = idx[order], depth[order]
            first = np.unique(idx, return_index=True)[1]
            np.minimum.at(best, idx[first], depth[first])
        start = stop
    best[~np.isfinite(best)] = 0.0
    return DepthFrame(depth=best.reshape(h, w).astype(np.float32), intrinsics=intr)


def render_mask(mesh: TriangleMesh, pose: Pose, intr: CameraIntrinsics) -> MaskFrame:
    """掩码：render_depth > 0"""
    return mask_of(render_depth(mesh, pose, intr))


def mask_of(frame: DepthFrame) -> MaskFrame:
    return MaskFrame(bits=frame.depth > 0)


def render_codebook_view(
        mesh: TriangleMesh,
        viewpoint: np.ndarray,
        f_base: float = 5.0,
        size: int = CODEBOOK_SIZE,
        crop_scale: float = CROP_SCALE,
) -> DepthFrame:
    """按码本几何渲染一个视点：相机距离 f_base·直径，物体居中"""
    pose = codebook_view_pose(mesh, viewpoint, f_base)
    return render_depth(mesh, pose, canonical_intrinsics(f_base, crop_scale, size))


# =============================================================================
# 测试基准与分析工具
# =============================================================================
def raycast_depth(mesh: TriangleMesh, pose: Pose, intr: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """
    Möller–Trumbore 射线求交，返回每个像素 (u, v) 的最近交点 z（毫米），无交点为 0。
    逐像素对全部三角形向量化，只用于校验光栅化结果。
    """
    tris = pose.transform(mesh.vertices)[mesh.faces]
    v0, e1, e2 = tris[:, 0], tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]
    out = np.zeros(len(pixels))
    for i, (u, v) in enumerate(np.asarray(pixels, dtype=np.float64)):
        d = np.array([(u - intr.px) / intr.fx, (v - intr.py) / intr.fy, 1.0])
        p = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = -v0
        a = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        b = (q @ d) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (a >= 0) & (b >= 0) & (a + b <= 1) & (t > NEAR_CLIP_MM) & (t < FAR_CLIP_MM)
        if np.any(hit):
            # 方向向量 z 分量为 1，参数 t 即深度
            out[i] = t[hit].min()
    return out


def depth_histogram(frame: DepthFrame, bins: int = 32, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """物体深度值的归一化直方图（平面内旋转下近似不变）"""
    values = frame.depth[frame.depth > 0].astype(np.float64)
    if values.size == 0:
        raise EmptyFrameError("深度图中没有物体像素")
    if value_range is None:
        value_range = (float(values.min()), float(values.max()) + 1e-6)
    hist, _ = np.histogram(values, bins=bins, range=value_range)
    return hist / hist.sum()


def histogram_distance(a: DepthFrame, b: DepthFrame, bins: int = 32) -> float:
    """两帧在共同取值范围上的直方图 L1 距离，范围 [0, 2]"""
    va, vb = a.depth[a.depth > 0], b.depth[b.depth > 0]
    if va.size == 0 or vb.size == 0:
        raise EmptyFrameError("深度图中没有物体像素")
    rng = (float(min(va.min(), vb.min())), float(max(va.max(), vb.max())) + 1e-6)
    return float(np.abs(depth_histogram(a, bins, rng) - depth_histogram(b, bins, rng)).sum())


# main函数用于单独调试
if __name__ == "__main__":
    from ove6d.utils.geometry_utils import sample_viewpoints
    from ove6d.services.datagen_service import build_box_mesh

    box = build_box_mesh((100.0, 60.0, 40.0))
    frame = render_codebook_view(box, sample_viewpoints(10)[3])
    print(frame.depth.shape, int((frame.depth > 0).sum()))
