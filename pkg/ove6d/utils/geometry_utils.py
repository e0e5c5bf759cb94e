import math

import numpy as np
from scipy.spatial import ConvexHull, KDTree
from scipy.spatial.transform import Rotation as ScipyRotation

from ove6d.core.errors import InvalidArgumentError
from ove6d.models.geometry import TriangleMesh
from ove6d.utils.seed_utils import make_rng

"""
旋转、视点采样、旋转分解和网格度量工具。
约定：X_cam = R X_obj + t；R 的第三行是相机视轴在物体坐标系下的方向。
所有函数都是纯函数，可在线程池中并发调用。
"""

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
# 视轴与 +Z 平行的判定阈值
DEGENERATE_EPS = 1e-9
# 不超过该顶点数时直接做精确两两距离
EXACT_DIAMETER_MAX_VERTICES = 20000

_WORLD_X = np.array([1.0, 0.0, 0.0])
_WORLD_Z = np.array([0.0, 0.0, 1.0])


# =============================================================================
# 基础旋转
# =============================================================================
def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_rotation(axis, deg: float) -> np.ndarray:
    """绕任意轴旋转 deg 度"""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise InvalidArgumentError("旋转轴不能为零向量")
    return ScipyRotation.from_rotvec(axis / norm * math.radians(deg)).as_matrix()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """SO(3) 上的均匀随机旋转（归一化高斯四元数）"""
    q = rng.standard_normal(4)
    return ScipyRotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# =============================================================================
# 视点采样与旋转分解
# =============================================================================
def fibonacci_directions(n: int) -> np.ndarray:
    """全球面 Fibonacci 格点，返回 (n, 3) 单位向量"""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def viewpoint_rotation(view_dir) -> np.ndarray:
    """
    给定视轴方向（物体坐标系），构造平面内分量为零的规范旋转 R_γ。

    规范约定：世界 +Z 在图像中朝上（图像上方向是相机 -y）；
    视轴与 ±Z 平行时改用世界 +X 作为图像右方向。
    """
    r3 = np.asarray(view_dir, dtype=np.float64)
    norm = np.linalg.norm(r3)
    if norm == 0.0:
        raise InvalidArgumentError("视轴方向不能为零向量")
    r3 = r3 / norm
    up = _WORLD_Z - np.dot(_WORLD_Z, r3) * r3
    up_norm = np.linalg.norm(up)
    if up_norm > DEGENERATE_EPS:
        r2 = -up / up_norm
        r1 = np.cross(r2, r3)
    else:
        right = _WORLD_X - np.dot(_WORLD_X, r3) * r3
        r1 = right / np.linalg.norm(right)
        r2 = np.cross(r3, r1)
    return np.stack([r1, r2, r3], axis=0)


def sample_viewpoints(n: int) -> np.ndarray:
    """
    在整个球面上近似均匀地采样 n 个视点，返回 (n, 3, 3) 规范旋转。
    相机位于方向 p_i 上并看向物体中心，因此视轴为 -p_i。

    Raises:
        InvalidArgumentError: n < 2
    """
    if n < 2:
        raise InvalidArgumentError(f"视点数量至少为 2，当前: {n}")
    dirs = -fibonacci_directions(n)
    return np.stack([viewpoint_rotation(d) for d in dirs], axis=0)


def decompose_rotation(r) -> tuple[np.ndarray, np.ndarray]:
    """
    R = R_θ · R_γ：R_γ 为同视轴的规范旋转，R_θ 为绕光轴的平面内旋转。
    退化视轴按 viewpoint_rotation 的约定处理，不会报错。
    """
    r = np.asarray(r, dtype=np.float64)
    r_gamma = viewpoint_rotation(r[2])
    r_theta = r @ r_gamma.T
    return r_theta, r_gamma


def inplane_matrix(theta_vec) -> np.ndarray:
    """由单位二维向量 (ϑ1, ϑ2) 构造绕光轴的旋转"""
    t = np.asarray(theta_vec, dtype=np.float64).reshape(-1)
    if t.shape != (2,):
        raise InvalidArgumentError(f"平面内向量必须是 2 维: {t.shape}")
    norm = np.linalg.norm(t)
    if norm == 0.0:
        raise InvalidArgumentError("平面内向量不能为零向量")
    if abs(norm - 1.0) > 1e-6:
        raise InvalidArgumentError(f"平面内向量必须是单位向量，当前范数 {norm}")
    c, s = t
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def inplane_angle(r_theta) -> float:
    """平面内旋转的角度（度，范围 [0, 360)）"""
    r = np.asarray(r_theta, dtype=np.float64)
    return math.degrees(math.atan2(r[1, 0], r[0, 0])) % 360.0


def inplane_vector(r_theta) -> np.ndarray:
    """平面内旋转对应的单位向量 (cos θ, sin θ)"""
    r = np.asarray(r_theta, dtype=np.float64)
    v = np.array([r[0, 0], r[1, 0]])
    return v / np.linalg.norm(v)


def geodesic_angle(a, b) -> float:
    """两个旋转之间的测地角（度，[0, 180]），atan2 形式在 0° 与 180° 附近也数值稳定"""
    m = np.asarray(a, dtype=np.float64).T @ np.asarray(b, dtype=np.float64)
    cos_part = (np.trace(m) - 1.0) / 2.0
    skew = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    sin_part = np.linalg.norm(skew) / 2.0
    return math.degrees(math.atan2(sin_part, cos_part))


def view_axis_angle(a, b) -> float:
    """两个旋转视轴（第三行）之间的夹角（度），即视点误差"""
    u = np.asarray(a, dtype=np.float64)[2]
    v = np.asarray(b, dtype=np.float64)[2]
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(float(np.clip(cos, -1.0, 1.0))))


def ray_alignment_rotation(t) -> np.ndarray:
    """
    把光轴 +z 转到过点 t 的视线方向的最小旋转。
    码本视图中物体位于光轴上，离轴物体的检索旋转需要左乘此旋转。
    """
    d = np.asarray(t, dtype=np.float64)
    d = d / np.linalg.norm(d)
    axis = np.cross(_WORLD_Z, d)
    s = np.linalg.norm(axis)
    if s < DEGENERATE_EPS:
        return np.eye(3)
    angle = math.atan2(s, float(np.dot(_WORLD_Z, d)))
    return ScipyRotation.from_rotvec(axis / s * angle).as_matrix()


def _nearest_neighbor_angles(dirs: np.ndarray, method: str) -> np.ndarray:
    if method == "kdtree":
        # 单位向量上弦长最近即角度最近
        dist, _ = KDTree(dirs).query(dirs, k=2)
        chord = np.clip(dist[:, 1], 0.0, 2.0)
        return np.degrees(2.0 * np.arcsin(chord / 2.0))
    if method == "brute":
        n = len(dirs)
        best = np.empty(n)
        for start in range(0, n, 512):
            block = np.clip(dirs[start:start + 512] @ dirs.T, -1.0, 1.0)
            idx = np.arange(start, min(start + 512, n))
            block[idx - start, idx] = -np.inf
            best[start:start + 512] = block.max(axis=1)
        return np.degrees(np.arccos(np.clip(best, -1.0, 1.0)))
    raise InvalidArgumentError(f"未知的最近邻方法: {method}")


def average_adjacent_viewpoint_distance(rotations: np.ndarray, method: str = "kdtree") -> float:
    """
    AAVD：每个视轴到最近邻视轴的角度的平均值（度）。
    method="brute" 为全部两两比较的精确计算。
    """
    dirs = np.asarray(rotations, dtype=np.float64)[:, 2, :]
    if len(dirs) < 2:
        raise InvalidArgumentError("至少需要 2 个视点")
    return float(_nearest_neighbor_angles(dirs, method).mean())


def spherical_cap_discrepancy(dirs: np.ndarray, n_caps: int = 2000, seed: int = 0) -> float:
    """
    随机球冠差异：max |落入球冠的点占比 - 球冠面积占比|。
    同一 seed 使用同一组球冠，可用于比较不同采样数量。
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    rng = make_rng(seed, "cap_discrepancy")
    centers = random_unit_vectors(rng, n_caps)
    heights = rng.uniform(-1.0, 1.0, size=n_caps)
    inside = (dirs @ centers.T) >= heights[None, :]
    empirical = inside.mean(axis=0)
    expected = (1.0 - heights) / 2.0
    return float(np.abs(empirical - expected).max())


# =============================================================================
# 网格度量
# =============================================================================
def _max_pairwise_distance(points: np.ndarray) -> float:
    best = 0.0
    for start in range(0, len(points), 1024):
        block = points[start:start + 1024]
        d2 = np.sum((block[:, None, :] - points[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def mesh_diameter(mesh: TriangleMesh) -> float:
    """最大顶点对距离；顶点数超过 20000 时先用凸包过滤"""
    pts = mesh.vertices
    if len(pts) > EXACT_DIAMETER_MAX_VERTICES:
        pts = pts[ConvexHull(pts).vertices]
    return _max_pairwise_distance(pts)


def mesh_center(mesh: TriangleMesh) -> np.ndarray:
    """包围盒中心，码本渲染时物体以它为中心放在光轴上"""
    return mesh.center


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    tri = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def sample_surface_points(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """按面积加权在网格表面均匀采样 n 个点"""
    if n < 1:
        raise InvalidArgumentError(f"采样点数至少为 1，当前: {n}")
    areas = face_areas(mesh)
    total = areas.sum()
    if len(mesh.faces) == 0 or total <= 0.0:
        # 没有有效面片时退化为顶点
        rng = make_rng(seed, "surface_points")
        idx = rng.choice(len(mesh.vertices), size=min(n, len(mesh.vertices)), replace=False)
        return mesh.vertices[np.sort(idx)].copy()
    rng = make_rng(seed, "surface_points")
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random((n, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    tri = mesh.vertices[mesh.faces[face_idx]]
    return tri[:, 0] + u[:, :1] * (tri[:, 1] - tri[:, 0]) + u[:, 1:] * (tri[:, 2] - tri[:, 0])


def model_points(mesh: TriangleMesh, max_points: int = 5000, seed: int = 0, min_points: int = 1000) -> np.ndarray:
    """ICP/ADD 使用的模型点：顶点数在 [min_points, max_points] 内时直接用顶点，否则表面采样"""
    n = len(mesh.vertices)
    if min_points <= n <= max_points:
        return np.asarray(mesh.vertices, dtype=np.float64).copy()
    return sample_surface_points(mesh, min(max(n, min_points), max_points), seed)


def is_degenerate_cloud(points: np.ndarray, tol: float = 1e-6) -> bool:
    """少于 3 个点或所有点共线"""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        return True
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return bool(s[1] <= tol * max(s[0], 1.0))


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """最小二乘刚体对齐：返回 (R, t) 使 R·src + t ≈ dst，行列式修正避免反射"""
    a = np.asarray(src, dtype=np.float64)
    b = np.asarray(dst, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise InvalidArgumentError(f"点集形状不匹配: {a.shape} vs {b.shape}")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ u.T
    return r, cb - r @ ca


# main函数用于单独调试
if __name__ == "__main__":
    for n in (1000, 4000):
        views = sample_viewpoints(n)
        print(n, average_adjacent_viewpoint_distance(views))
