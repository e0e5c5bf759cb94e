import math
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np
from scipy import ndimage

from ove6d.core.config import settings
from ove6d.core.errors import InvalidArgumentError
from ove6d.core.run_config import RunConfig
from ove6d.cruds.frame_crud import save_depth_png, save_mask_png
from ove6d.cruds.mesh_crud import save_mesh
from ove6d.cruds.record_crud import write_manifest
from ove6d.models.frames import DepthFrame
from ove6d.models.geometry import CameraIntrinsics, Pose, TriangleMesh
from ove6d.models.training import (
    MAX_DIAMETER_MM,
    MIN_DIAMETER_MM,
    SHAPE_FAMILIES,
    AugmentConfig,
    AugmentParams,
    DatasetManifest,
    ManifestEntry,
    SceneEntry,
    ShapeSpec,
    TrainingTriplet,
    TripletGeometry,
)
from ove6d.services.preprocess_service import CROP_SCALE, NETWORK_INPUT_SIZE, preprocess
from ove6d.services.render_service import canonical_intrinsics, codebook_view_pose, mask_of, render_depth
from ove6d.utils.geometry_utils import (
    axis_angle_rotation,
    random_rotation,
    random_unit_vectors,
    rot_z,
    viewpoint_rotation,
)
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.seed_utils import make_rng

logger = init_logger()

# 生成时的目标直径范围，比约束区间略窄
TARGET_DIAMETER_RANGE = (60.0, 280.0)
GAMMA_RANGE_DEG = (10.0, 90.0)
SCENE_MIN_MASK_PIXELS = 200
SCENE_ATTEMPTS = 10

# 增强参数在本实现中的解释，写入数据清单
AUGMENT_INTERPRETATIONS = {
    "rescale_ratio": "下采样比例，深度按掩码加权双线性重采样后再放大回原尺寸",
    "laplace_dev": "归一化深度单位（毫米 / 物体直径），噪声尺度 = dev × 直径",
    "cutout_ratio": "正方形挖空区域占整幅图像面积的比例",
    "gaussian_blur_sigma": "下采样图像上的像素单位，按有效像素归一化卷积",
    "occlusion": "概率 0.2，正方形或圆形，面积为物体包围盒的 10%~40%",
}


# =============================================================================
# 程序化网格
# =============================================================================
def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """按面法向与（面中心 - 形体中心）的方向统一为朝外，适用于凸形体"""
    tri = vertices[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = tri.mean(axis=1) - vertices.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _grid_faces(rows: int, cols: int, offset: int = 0, wrap: bool = False) -> np.ndarray:
    """(rows+1) x (cols 或 cols+1) 顶点网格的三角形索引"""
    width = cols if wrap else cols + 1
    faces = []
    for i in range(rows):
        for j in range(cols):
            jn = (j + 1) % width if wrap else j + 1
            a, b = offset + i * width + j, offset + i * width + jn
            c, d = offset + (i + 1) * width + j, offset + (i + 1) * width + jn
            faces.append([a, b, d])
            faces.append([a, d, c])
    return np.array(faces, dtype=np.int64)


def _merge_vertices(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.round(vertices, 6)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    return unique, inverse.reshape(-1)[faces]


def build_box_mesh(size, subdivisions: int = 4, object_id: str = "box") -> TriangleMesh:
    """长方体，每个面为 subdivisions x subdivisions 网格，共享顶点合并"""
    sx, sy, sz = (float(s) / 2.0 for s in size)
    lin = np.linspace(-1.0, 1.0, subdivisions + 1)
    uu, vv = np.meshgrid(lin, lin, indexing="ij")
    uu, vv = uu.reshape(-1), vv.reshape(-1)
    one = np.ones_like(uu)
    verts, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            coords = [None, None, None]
            coords[axis] = sign * one
            others = [a for a in range(3) if a != axis]
            coords[others[0]] = uu
            coords[others[1]] = vv
            offset = sum(len(v) for v in verts)
            verts.append(np.stack(coords, axis=1))
            faces.append(_grid_faces(subdivisions, subdivisions, offset))
    vertices = np.concatenate(verts) * np.array([sx, sy, sz])
    vertices, faces_arr = _merge_vertices(vertices, np.concatenate(faces))
    return TriangleMesh(vertices=vertices, faces=_orient_outward(vertices, faces_arr), object_id=object_id)


def build_cylinder_mesh(radius: float, height: float, segments: int = 32, object_id: str = "cylinder") -> TriangleMesh:
    """沿 z 轴的圆柱，上下底面带中心点"""
    ang = 2.0 * math.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    vertices = np.concatenate([bottom, top, [[0.0, 0.0, -height / 2.0], [0.0, 0.0, height / 2.0]]])
    faces = list(_grid_faces(1, segments, 0, wrap=True))
    cb, ct = 2 * segments, 2 * segments + 1
    for j in range(segments):
        jn = (j + 1) % segments
        faces.append([cb, jn, j])
        faces.append([ct, segments + j, segments + jn])
    faces = np.array(faces, dtype=np.int64)
    return TriangleMesh(vertices=vertices, faces=_orient_outward(vertices, faces), object_id=object_id)


def _signed_pow(x: np.ndarray, e: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** e


def build_superellipsoid_mesh(
        radii, e1: float = 1.0, e2: float = 1.0, n_lat: int = 16, n_lon: int = 32, object_id: str = "superellipsoid"
) -> TriangleMesh:
    """超椭球，e1 = e2 = 1 时为椭球；纬线网格加两个极点"""
    a, b, c = (float(r) for r in radii)
    eta = np.linspace(-math.pi / 2.0, math.pi / 2.0, n_lat + 1)[1:-1]
    omega = 2.0 * math.pi * np.arange(n_lon) / n_lon
    ee, oo = np.meshgrid(eta, omega, indexing="ij")
    x = a * _signed_pow(np.cos(ee), e1) * _signed_pow(np.cos(oo), e2)
    y = b * _signed_pow(np.cos(ee), e1) * _signed_pow(np.sin(oo), e2)
    z = c * _signed_pow(np.sin(ee), e1)
    ring_vertices = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    south, north = len(ring_vertices), len(ring_vertices) + 1
    vertices = np.concatenate([ring_vertices, [[0.0, 0.0, -c], [0.0, 0.0, c]]])
    faces = list(_grid_faces(n_lat - 2, n_lon, 0, wrap=True))
    last = (n_lat - 2) * n_lon
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        faces.append([south, jn, j])
        faces.append([north, last + j, last + jn])
    faces = np.array(faces, dtype=np.int64)
    return TriangleMesh(vertices=vertices, faces=_orient_outward(vertices, faces), object_id=object_id)


def build_ellipsoid_mesh(radii, object_id: str = "ellipsoid", n_lat: int = 16, n_lon: int = 32) -> TriangleMesh:
    return build_superellipsoid_mesh(radii, 1.0, 1.0, n_lat, n_lon, object_id)


def build_wedge_mesh(size=(120.0, 60.0, 40.0), object_id: str = "wedge") -> TriangleMesh:
    """直角三角形截面的楔形体，质心明显偏离包围盒中心，用于测试位置修正"""
    a, b, h = (float(s) for s in size)
    base = np.array([[0.0, 0.0], [a, 0.0], [0.0, b]])
    vertices = np.concatenate([np.column_stack([base, np.zeros(3)]), np.column_stack([base, np.full(3, h)])])
    vertices = vertices - 0.5 * (vertices.min(axis=0) + vertices.max(axis=0))
    faces = np.array([
        [0, 2, 1], [3, 4, 5],
        [0, 1, 4], [0, 4, 3],
        [1, 2, 5], [1, 5, 4],
        [2, 0, 3], [2, 3, 5],
    ], dtype=np.int64)
    # 楔形是凸的，但中心偏向直角，用体心判断朝向
    return TriangleMesh(vertices=vertices, faces=_orient_outward(vertices, faces), object_id=object_id)


def combine_meshes(meshes: list[TriangleMesh], object_id: str) -> TriangleMesh:
    """拼接多个各自闭合的网格"""
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriangleMesh(vertices=np.concatenate(verts), faces=np.concatenate(faces), object_id=object_id)


def rescale_to_diameter(mesh: TriangleMesh, target: float) -> TriangleMesh:
    """平移到包围盒中心并等比缩放到目标直径"""
    centered = mesh.vertices - mesh.center
    scale = target / mesh.diameter
    return TriangleMesh(vertices=centered * scale, faces=mesh.faces, object_id=mesh.object_id)


# =============================================================================
# 物体生成
# =============================================================================
def draw_shape_spec(index: int, seed: int) -> ShapeSpec:
    """第 index 个物体的参数；族按序号轮换，保证族的多样性"""
    rng = make_rng(seed, "shape", index)
    family = SHAPE_FAMILIES[index % len(SHAPE_FAMILIES)]
    dims = rng.uniform(0.35, 1.0, size=3)
    params = {"a": float(dims[0]), "b": float(dims[1]), "c": float(dims[2])}
    if family == "superellipsoid":
        params["e1"], params["e2"] = (float(x) for x in rng.uniform(0.3, 1.8, size=2))
    elif family == "union":
        params["offset_x"], params["offset_y"] = (float(x) for x in rng.uniform(0.2, 0.6, size=2))
        params["second"] = float(rng.integers(0, 3))
    return ShapeSpec(
        family=family,
        params=params,
        target_diameter=float(rng.uniform(*TARGET_DIAMETER_RANGE)),
        seed=int(seed),
    )


def build_shape(spec: ShapeSpec, object_id: str) -> TriangleMesh:
    p = spec.params
    dims = np.array([p["a"], p["b"], p["c"]]) * 100.0
    if spec.family == "box":
        mesh = build_box_mesh(dims, object_id=object_id)
    elif spec.family == "cylinder":
        mesh = build_cylinder_mesh(dims[0] / 2.0, dims[2], object_id=object_id)
    elif spec.family == "ellipsoid":
        mesh = build_ellipsoid_mesh(dims / 2.0, object_id=object_id)
    elif spec.family == "superellipsoid":
        mesh = build_superellipsoid_mesh(dims / 2.0, p["e1"], p["e2"], object_id=object_id)
    else:
        first = build_box_mesh(dims, object_id=object_id)
        second_dims = dims[[1, 2, 0]] * 0.6
        kind = int(p["second"])
        if kind == 0:
            second = build_cylinder_mesh(second_dims[0] / 2.0, second_dims[2], object_id=object_id)
        elif kind == 1:
            second = build_ellipsoid_mesh(second_dims / 2.0, object_id=object_id)
        else:
            second = build_box_mesh(second_dims, object_id=object_id)
        shift = np.array([p["offset_x"] * dims[0], p["offset_y"] * dims[1], 0.25 * dims[2]])
        second = TriangleMesh(vertices=second.vertices + shift, faces=second.faces, object_id=object_id)
        mesh = combine_meshes([first, second], object_id)
    mesh = rescale_to_diameter(mesh, spec.target_diameter)
    if not MIN_DIAMETER_MM <= mesh.diameter <= MAX_DIAMETER_MM:
        raise InvalidArgumentError(f"{object_id} 直径 {mesh.diameter:.2f} 超出范围")
    return mesh


def generate_shapes(count: int, seed: int) -> list[TriangleMesh]:
    """生成 count 个程序化物体，同一 seed 结果完全相同"""
    if count < 1:
        raise InvalidArgumentError(f"物体数量至少为 1，当前: {count}")
    meshes = []
    for i in range(count):
        spec = draw_shape_spec(i, seed)
        meshes.append(build_shape(spec, f"{spec.family}_{i:03d}"))
    return meshes


# =============================================================================
# 三元组
# =============================================================================
def draw_triplet_geometry(rng: np.random.Generator) -> TripletGeometry:
    """
    锚点：随机视轴的规范视点 R_γ；
    V_θ：锚点叠加 U[0, 360) 的平面内旋转；
    V_γ：绕相机 xy 平面内随机轴旋转 U[10°, 90°]，视轴偏离恰为该角度。
    """
    anchor = viewpoint_rotation(random_unit_vectors(rng, 1)[0])
    theta = float(rng.uniform(0.0, 360.0))
    gamma = float(rng.uniform(*GAMMA_RANGE_DEG))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    axis = np.array([math.cos(phi), math.sin(phi), 0.0])
    return TripletGeometry(
        anchor=anchor,
        theta_deg=theta % 360.0,
        gamma_rotation=axis_angle_rotation(axis, gamma) @ anchor,
        gamma_deg=gamma,
    )


def _render_crop(
        mesh: TriangleMesh,
        rotation: np.ndarray,
        f_base: float,
        size: int,
        crop_scale: float,
        augment_cfg: AugmentConfig | None,
        rng: np.random.Generator,
):
    intr = canonical_intrinsics(f_base, crop_scale, size)
    frame = render_depth(mesh, codebook_view_pose(mesh, rotation, f_base), intr)
    if augment_cfg is not None:
        frame = augment(frame, augment_cfg, rng, scale_mm=mesh.diameter)
    return preprocess(frame, mask_of(frame), mesh.diameter, crop_scale, size, min_pixels=1)


def sample_triplets(
        mesh: TriangleMesh,
        anchors: int = 16,
        seed: int = 0,
        augment_cfg: AugmentConfig | None = None,
        size: int = NETWORK_INPUT_SIZE,
        f_base: float = 5.0,
        crop_scale: float = CROP_SCALE,
        counter: int = 0,
) -> list[TrainingTriplet]:
    """
    为一个物体采样 anchors 个三元组 {V, V_θ, V_γ}，渲染几何与码本视图一致。
    counter 区分同一物体的不同批次。
    """
    triplets = []
    for i in range(anchors):
        rng = make_rng(seed, "triplet", counter, i)
        geom = draw_triplet_geometry(rng)
        r_theta = rot_z(geom.theta_deg)
        crops = [
            _render_crop(mesh, r, f_base, size, crop_scale, augment_cfg, rng)
            for r in (geom.anchor, r_theta @ geom.anchor, geom.gamma_rotation)
        ]
        triplets.append(TrainingTriplet(
            object_id=mesh.object_id,
            v=crops[0].crop,
            v_theta=crops[1].crop,
            v_gamma=crops[2].crop,
            theta_gt=r_theta,
            theta_deg=geom.theta_deg,
            gamma_angle=geom.gamma_deg,
            anchor=geom.anchor,
        ))
    return triplets


# =============================================================================
# 深度增强
# =============================================================================
def _resample(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """像素中心对齐的双线性重采样"""
    h, w = arr.shape
    oh, ow = out_shape
    rows = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    cols = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(arr, np.stack([rr, cc]), order=1, mode="nearest")


def masked_resample(depth: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """只在有效深度之间插值：resample(depth·valid) / resample(valid)，权重 < 0.5 视为无效"""
    valid = (depth > 0).astype(np.float64)
    weight = _resample(valid, out_shape)
    summed = _resample(depth.astype(np.float64) * valid, out_shape)
    return np.where(weight > 0.5, summed / np.maximum(weight, 1e-12), 0.0)


def resample_frame(depth: np.ndarray, ratio: float) -> np.ndarray:
    """先按 ratio 下采样再放大回原尺寸"""
    h, w = depth.shape
    small = (max(1, int(round(h * ratio))), max(1, int(round(w * ratio))))
    return masked_resample(masked_resample(depth, small), (h, w))


def draw_augment_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """抽取一次增强的全部随机参数；位置以 [0, 1] 的相对坐标表示"""
    ratio = float(rng.uniform(*cfg.rescale_ratio))
    laplace = float(rng.uniform(*cfg.laplace_dev)) if cfg.use_laplace else 0.0
    cutout = float(rng.uniform(*cfg.cutout_ratio)) if cfg.use_cutout else 0.0
    cutout_center = (float(rng.random()), float(rng.random()))
    blur = float(rng.uniform(*cfg.gaussian_blur_sigma)) if cfg.use_blur else 0.0
    occlude = bool(cfg.use_occlusion and rng.random() < cfg.occlusion_prob)
    shape = "circle" if rng.random() < 0.5 else "square"
    area = float(rng.uniform(*cfg.occlusion_area))
    occ_center = (float(rng.random()), float(rng.random()))
    return AugmentParams(
        ratio=ratio,
        laplace_dev=laplace,
        cutout_ratio=cutout,
        cutout_center=cutout_center,
        blur_sigma=blur,
        occlude=occlude,
        occlusion_shape=shape,
        occlusion_area=area,
        occlusion_center=occ_center,
    )


def apply_augment(depth: np.ndarray, params: AugmentParams, rng: np.random.Generator, scale_mm: float) -> np.ndarray:
    """下采样 -> 噪声/挖空/模糊/遮挡 -> 放大回原尺寸；输入为 0 的像素输出仍为 0"""
    h, w = depth.shape
    small_shape = (max(1, int(round(h * params.ratio))), max(1, int(round(w * params.ratio))))
    small = masked_resample(depth, small_shape)
    sh, sw = small_shape
    valid = small > 0

    if params.laplace_dev > 0:
        noise = rng.laplace(0.0, params.laplace_dev * scale_mm, size=small.shape)
        small = np.where(valid, np.maximum(small + noise, 0.0), 0.0)

    if params.cutout_ratio > 0:
        side = min(int(round(math.sqrt(params.cutout_ratio * sh * sw))), sh, sw)
        top = int(round(params.cutout_center[0] * (sh - side)))
        left = int(round(params.cutout_center[1] * (sw - side)))
        small[top:top + side, left:left + side] = 0.0

    if params.blur_sigma > 0:
        valid = small > 0
        weight = ndimage.gaussian_filter(valid.astype(np.float64), params.blur_sigma)
        blurred = ndimage.gaussian_filter(small * valid, params.blur_sigma)
        small = np.where(valid, blurred / np.maximum(weight, 1e-12), 0.0)

    if params.occlude and np.any(small > 0):
        rows = np.flatnonzero((small > 0).any(axis=1))
        cols = np.flatnonzero((small > 0).any(axis=0))
        bh, bw = rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1
        cy = rows[0] + params.occlusion_center[0] * bh
        cx = cols[0] + params.occlusion_center[1] * bw
        area = params.occlusion_area * bh * bw
        yy, xx = np.mgrid[0:sh, 0:sw]
        if params.occlusion_shape == "square":
            half = math.sqrt(area) / 2.0
            region = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
        else:
            radius = math.sqrt(area / math.pi)
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        small = np.where(region, 0.0, small)

    out = masked_resample(small, (h, w))
    return np.where(depth > 0, out, 0.0)


def augment(frame: DepthFrame, cfg: AugmentConfig, seed, scale_mm: float) -> DepthFrame:
    """
    按增强配置扰动深度图，同一 seed 结果相同。
    seed 可以是整数或已有的 numpy Generator。
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(int(seed), "augment")
    params = draw_augment_params(cfg, rng)
    depth = apply_augment(frame.depth.astype(np.float64), params, rng, scale_mm)
    return DepthFrame(depth=depth.astype(np.float32), intrinsics=frame.intrinsics)


# =============================================================================
# 数据集与评估场景
# =============================================================================
def scene_intrinsics(cfg: RunConfig) -> CameraIntrinsics:
    d = cfg.data
    return CameraIntrinsics(
        fx=d.scene_focal, fy=d.scene_focal,
        px=(d.scene_width - 1) / 2.0, py=(d.scene_height - 1) / 2.0,
        width=d.scene_width, height=d.scene_height,
    )


def draw_scene_pose(mesh: TriangleMesh, intr: CameraIntrinsics, rng: np.random.Generator,
                    distance_range: tuple[float, float]) -> Pose:
    """随机旋转；物体中心落在图像中部区域内"""
    rotation = random_rotation(rng)
    z = float(rng.uniform(*distance_range))
    u = intr.px + rng.uniform(-0.3, 0.3) * intr.width / 2.0
    v = intr.py + rng.uniform(-0.3, 0.3) * intr.height / 2.0
    center = intr.back_project(u, v, z)
    return Pose(rotation=rotation, translation=center - rotation @ mesh.center)


def render_scene(mesh: TriangleMesh, pose: Pose, intr: CameraIntrinsics):
    depth = render_depth(mesh, pose, intr)
    return depth, mask_of(depth)


def _write_scene(index: int, meshes: list[TriangleMesh], cfg: RunConfig, intr: CameraIntrinsics, out_dir: str):
    for attempt in range(SCENE_ATTEMPTS):
        rng = make_rng(cfg.seed, "scene", index, attempt)
        mesh = meshes[int(rng.integers(0, len(meshes)))]
        pose = draw_scene_pose(mesh, intr, rng, cfg.data.scene_distance_range)
        depth, mask = render_scene(mesh, pose, intr)
        if mask.count >= SCENE_MIN_MASK_PIXELS:
            break
    else:
        logger.warning(
            f"场景 {index} 连续 {SCENE_ATTEMPTS} 次采样的掩码都少于 {SCENE_MIN_MASK_PIXELS} 像素，"
            f"保留最后一次（{mask.count} 像素）"
        )
    scene_id = f"scene_{index:04d}"
    depth_path = save_depth_png(depth, os.path.join(out_dir, "scenes", f"{scene_id}_depth.png"))
    mask_path = save_mask_png(mask, os.path.join(out_dir, "scenes", f"{scene_id}_mask.png"))
    return SceneEntry(
        scene_id=scene_id,
        object_id=mesh.object_id,
        depth_path=os.path.relpath(depth_path, out_dir),
        mask_path=os.path.relpath(mask_path, out_dir),
        rotation=[float(x) for x in pose.rotation.reshape(-1)],
        translation=[float(x) for x in pose.translation],
    )


def build_dataset(cfg: RunConfig, out_dir: str, max_workers: int | None = None) -> DatasetManifest:
    """
    生成物体网格、训练/留出划分以及带真值的合成评估场景，写出数据清单。
    评估场景只使用训练集物体。
    """
    start_time = datetime.now()
    logger.info(f"开始生成数据集，物体数量：{cfg.data.shape_count}，场景数量：{cfg.data.scene_count}")
    meshes = generate_shapes(cfg.data.shape_count, cfg.seed)

    n_held = int(round(cfg.data.held_out_fraction * len(meshes)))
    if len(meshes) - n_held < 1:
        n_held = len(meshes) - 1
    order = make_rng(cfg.seed, "split").permutation(len(meshes))
    held = set(int(i) for i in order[:n_held])

    entries = []
    for i, mesh in enumerate(meshes):
        path = save_mesh(mesh, os.path.join(out_dir, "meshes", f"{mesh.object_id}.obj"))
        entries.append(ManifestEntry(
            object_id=mesh.object_id,
            mesh_path=os.path.relpath(path, out_dir),
            family=draw_shape_spec(i, cfg.seed).family,
            seed=cfg.seed,
            diameter=mesh.diameter,
            split="held-out" if i in held else "train",
        ))

    train_meshes = [m for i, m in enumerate(meshes) if i not in held]
    intr = scene_intrinsics(cfg)
    with ThreadPoolExecutor(max_workers=max_workers or settings.THREADS) as executor:
        futures = [
            executor.submit(_write_scene, i, train_meshes, cfg, intr, out_dir)
            for i in range(cfg.data.scene_count)
        ]
        scenes = [f.result() for f in futures]

    manifest = DatasetManifest(
        root_seed=cfg.seed, objects=entries, scenes=scenes, interpretations=dict(AUGMENT_INTERPRETATIONS)
    )
    write_manifest(manifest, out_dir)
    logger.info(f"数据集生成完成，训练物体：{len(train_meshes)}，留出物体：{n_held}，耗时：{datetime.now() - start_time}")
    return manifest


# main函数用于单独调试
if __name__ == "__main__":
    shapes = generate_shapes(5, seed=0)
    for m in shapes:
        logger.info(f"{m.object_id}: 顶点 {len(m.vertices)}，直径 {m.diameter:.1f} mm")
