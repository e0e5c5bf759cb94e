import json
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

import ove6d.nn.functional as F
from ove6d.core.errors import CheckpointFormatError, DegenerateRegressionError, InvalidArgumentError
from ove6d.core.run_config import TrainConfig
from ove6d.cruds.checkpoint_crud import load_checkpoint, save_checkpoint
from ove6d.models.codebook import EMBEDDING_DIM
from ove6d.models.frames import DepthFrame
from ove6d.models.training import TrainingTriplet
from ove6d.nn.tensor import Tape, Tensor
from ove6d.services.preprocess_service import positive_image
from ove6d.utils.geometry_utils import geodesic_angle, inplane_matrix, inplane_vector
from ove6d.utils.ove6d_logger import init_logger
from ove6d.utils.seed_utils import make_rng

"""
OVE6D 网络：共享骨干 + 视点编码头（OVE）+ 平面内回归头（IOR）+ 方向一致性验证头（OCV），
以及三项损失与加权总损失。参数以 name -> ndarray 的字典保存，每次前向按需包装成 Tensor。
"""

logger = init_logger()

RANKING_MARGIN = 0.1
# 总损失权重：视点排序、一致性验证、平面内回归
LOSS_WEIGHTS = (100.0, 10.0, 1.0)
DEGENERATE_NORM = 1e-8
CONFIG_RECORD = "__config__"


class NetworkConfig(BaseModel):
    """网络结构；通道宽度与头部隐藏层大小是可配置的默认值"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_size: int = Field(default=128, ge=16)
    backbone_channels: tuple[int, ...] = (16, 32, 32, 64, 64, 128, 128, 128)
    backbone_strides: tuple[int, ...] = (2, 1, 2, 1, 2, 1, 2, 1)
    embedding_dim: int = Field(default=EMBEDDING_DIM, ge=2)
    ove_channels: int = Field(default=128, ge=1)
    ior_channels: int = Field(default=64, ge=1)
    ior_hidden: int = Field(default=128, ge=1)
    ocv_channels: tuple[int, int] = (128, 64)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if not self.backbone_channels or len(self.backbone_channels) != len(self.backbone_strides):
            raise InvalidArgumentError("backbone_channels 与 backbone_strides 长度不一致或为空")
        if any(s not in (1, 2) for s in self.backbone_strides):
            raise InvalidArgumentError(f"步长只能是 1 或 2: {self.backbone_strides}")
        return self

    @classmethod
    def from_train(cls, cfg: TrainConfig) -> "NetworkConfig":
        return cls(
            input_size=cfg.input_size,
            backbone_channels=tuple(cfg.backbone_channels),
            backbone_strides=tuple(cfg.backbone_strides),
        )

    @property
    def feature_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def feature_size(self) -> int:
        size = self.input_size
        for s in self.backbone_strides:
            size = -(-size // s)
        return size


def parameter_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """可训练参数的名称与形状，顺序固定"""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(prefix: str, c_in: int, c_out: int):
        shapes[f"{prefix}.w"] = (c_out, c_in, 3, 3)
        shapes[f"{prefix}.b"] = (c_out,)

    def bn(prefix: str, c: int):
        shapes[f"{prefix}.gamma"] = (c,)
        shapes[f"{prefix}.beta"] = (c,)

    def fc(prefix: str, d_in: int, d_out: int):
        shapes[f"{prefix}.w"] = (d_out, d_in)
        shapes[f"{prefix}.b"] = (d_out,)

    c_in = 1
    for i, c_out in enumerate(config.backbone_channels):
        conv(f"backbone.{i}.conv", c_in, c_out)
        bn(f"backbone.{i}.bn", c_out)
        c_in = c_out
    fch = config.feature_channels
    conv("ove.conv", fch, config.ove_channels)
    bn("ove.bn", config.ove_channels)
    fc("ove.fc", config.ove_channels, config.embedding_dim)

    conv("ior.conv", 2 * fch, config.ior_channels)
    bn("ior.bn", config.ior_channels)
    half = -(-config.feature_size // 2)
    fc("ior.fc1", config.ior_channels * half * half, config.ior_hidden)
    fc("ior.fc2", config.ior_hidden, 2)

    c1, c2 = config.ocv_channels
    conv("ocv.conv1", 2 * fch, c1)
    bn("ocv.bn1", c1)
    conv("ocv.conv2", c1, c2)
    bn("ocv.bn2", c2)
    fc("ocv.fc", c2, 1)
    return shapes


def stat_names(config: NetworkConfig) -> dict[str, int]:
    """BN 滑动统计量名称与通道数"""
    names = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            base = name[: -len(".gamma")]
            names[f"{base}.running_mean"] = shape[0]
            names[f"{base}.running_var"] = shape[0]
    return names


class TripletBatch(BaseModel):
    """堆叠后的训练批"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    v: np.ndarray
    v_theta: np.ndarray
    v_gamma: np.ndarray
    # 真值平面内单位向量 (B, 2)
    theta_vec: np.ndarray
    # 物体区域为正值的 V，用于平面内损失
    positive: np.ndarray

    @property
    def size(self) -> int:
        return len(self.v)

    def astype(self, dtype) -> "TripletBatch":
        return TripletBatch(**{k: getattr(self, k).astype(dtype) for k in ("v", "v_theta", "v_gamma", "theta_vec", "positive")})

    def rows(self, start: int, stop: int) -> "TripletBatch":
        return TripletBatch(**{k: getattr(self, k)[start:stop] for k in ("v", "v_theta", "v_gamma", "theta_vec", "positive")})


def stack_triplets(triplets: list[TrainingTriplet]) -> TripletBatch:
    if not triplets:
        raise InvalidArgumentError("训练批不能为空")
    return TripletBatch(
        v=np.stack([t.v for t in triplets]).astype(np.float32),
        v_theta=np.stack([t.v_theta for t in triplets]).astype(np.float32),
        v_gamma=np.stack([t.v_gamma for t in triplets]).astype(np.float32),
        theta_vec=np.stack([inplane_vector(t.theta_gt) for t in triplets]).astype(np.float32),
        positive=np.stack([positive_image(t.v, t.v != 0) for t in triplets]).astype(np.float32),
    )


class TripletLosses(BaseModel):
    """一次训练前向的结果"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: Tensor
    viewpoint: Tensor
    verification: Tensor
    inplane: Tensor
    new_stats: dict[str, np.ndarray]


class _Pass:
    """一次前向：持有本次调用的参数包装、模式、记录带与更新后的 BN 统计量"""

    def __init__(self, net: "Ove6dNetwork", params: dict[str, Tensor], train: bool, tape: Tape | None):
        self.net = net
        self.p = params
        self.train = train
        self.tape = tape
        self.stats: dict[str, np.ndarray] = {}

    def conv_bn_relu(self, x: Tensor, conv: str, bn: str, stride: int) -> Tensor:
        p = self.p
        y = F.conv2d(x, p[f"{conv}.w"], p[f"{conv}.b"], stride, tape=self.tape)
        y, new = F.batch_norm(
            y, p[f"{bn}.gamma"], p[f"{bn}.beta"],
            self.net.stats[f"{bn}.running_mean"], self.net.stats[f"{bn}.running_var"],
            self.train, tape=self.tape,
        )
        if new is not None:
            self.stats[f"{bn}.running_mean"], self.stats[f"{bn}.running_var"] = new
        return F.relu(y, tape=self.tape)

    def backbone(self, x: Tensor) -> Tensor:
        cfg = self.net.config
        for i, stride in enumerate(cfg.backbone_strides):
            y = self.conv_bn_relu(x, f"backbone.{i}.conv", f"backbone.{i}.bn", stride)
            # 形状相同的相邻特征图之间加跳跃连接
            x = F.add(y, x, tape=self.tape) if y.shape == x.shape else y
        return x

    def ove(self, feats: Tensor) -> Tensor:
        y = self.conv_bn_relu(feats, "ove.conv", "ove.bn", 1)
        y = F.global_avg_pool(y, tape=self.tape)
        y = F.linear(y, self.p["ove.fc.w"], self.p["ove.fc.b"], tape=self.tape)
        return F.l2_normalize(y, tape=self.tape)

    def ior(self, feat_a: Tensor, feat_b: Tensor) -> Tensor:
        y = F.concat_channels(feat_a, feat_b, tape=self.tape)
        y = self.conv_bn_relu(y, "ior.conv", "ior.bn", 2)
        y = F.flatten(y, tape=self.tape)
        y = F.relu(F.linear(y, self.p["ior.fc1.w"], self.p["ior.fc1.b"], tape=self.tape), tape=self.tape)
        y = F.linear(y, self.p["ior.fc2.w"], self.p["ior.fc2.b"], tape=self.tape)
        norms = np.linalg.norm(y.data.astype(np.float64), axis=1)
        if np.any(norms < DEGENERATE_NORM):
            raise DegenerateRegressionError(f"平面内回归输出范数过小: {norms.min():.3e}")
        return F.l2_normalize(y, tape=self.tape)

    def ocv(self, transformed: Tensor, other: Tensor) -> Tensor:
        y = F.concat_channels(transformed, other, tape=self.tape)
        y = self.conv_bn_relu(y, "ocv.conv1", "ocv.bn1", 1)
        y = self.conv_bn_relu(y, "ocv.conv2", "ocv.bn2", 2)
        y = F.global_avg_pool(y, tape=self.tape)
        y = F.linear(y, self.p["ocv.fc.w"], self.p["ocv.fc.b"], tape=self.tape)
        return F.reshape(y, (y.shape[0],), tape=self.tape)


class Ove6dNetwork:
    """
    参数与 BN 统计量都是只读快照：训练更新通过 with_state 产生新网络，
    推理期间同一个网络实例可以被多个线程共享。
    """

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray], stats: dict[str, np.ndarray]):
        shapes = parameter_shapes(config)
        stat_channels = stat_names(config)
        if set(params) != set(shapes):
            missing = sorted(set(shapes) - set(params))
            extra = sorted(set(params) - set(shapes))
            raise InvalidArgumentError(f"参数名称不匹配，缺少 {missing[:5]}，多余 {extra[:5]}")
        if set(stats) != set(stat_channels):
            raise InvalidArgumentError("BN 统计量名称与网络结构不匹配")
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=np.float32)
            if arr.shape != shape:
                raise InvalidArgumentError(f"参数 {name} 形状应为 {shape}，实际为 {arr.shape}")
            arr.setflags(write=False)
            self.params[name] = arr
        self.stats: dict[str, np.ndarray] = {}
        for name, channels in stat_channels.items():
            arr = np.array(stats[name], dtype=np.float32).reshape(-1)
            if arr.shape != (channels,):
                raise InvalidArgumentError(f"统计量 {name} 长度应为 {channels}")
            arr.setflags(write=False)
            self.stats[name] = arr

    # -------------------------------------------------------------------------
    # 构造与持久化
    # -------------------------------------------------------------------------
    @classmethod
    def init(cls, config: NetworkConfig | None = None, seed: int = 0) -> "Ove6dNetwork":
        """Kaiming 均匀初始化权重，偏置为 0，BN gamma=1 / beta=0，滑动均值 0 / 方差 1"""
        config = config or NetworkConfig()
        rng = make_rng(seed, "network_init")
        params = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".w"):
                fan_in = int(np.prod(shape[1:]))
                bound = math.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            elif name.endswith(".gamma"):
                params[name] = np.ones(shape, dtype=np.float32)
            else:
                params[name] = np.zeros(shape, dtype=np.float32)
        stats = {
            name: (np.ones(c, dtype=np.float32) if name.endswith("running_var") else np.zeros(c, dtype=np.float32))
            for name, c in stat_names(config).items()
        }
        return cls(config, params, stats)

    def with_state(self, params: dict[str, np.ndarray], stats: dict[str, np.ndarray] | None = None) -> "Ove6dNetwork":
        merged = dict(self.stats)
        merged.update(stats or {})
        return Ove6dNetwork(self.config, params, merged)

    @property
    def parameter_names(self) -> list[str]:
        return list(self.params)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def to_records(self) -> dict[str, np.ndarray]:
        """checkpoint 记录：结构配置（u8 JSON）+ 参数 + BN 统计量"""
        config_bytes = np.frombuffer(self.config.model_dump_json().encode("utf-8"), dtype=np.uint8)
        records = {CONFIG_RECORD: config_bytes}
        records.update(self.params)
        records.update(self.stats)
        return records

    @classmethod
    def from_records(cls, records: dict[str, np.ndarray]) -> "Ove6dNetwork":
        if CONFIG_RECORD not in records:
            raise CheckpointFormatError("checkpoint 缺少网络结构记录")
        try:
            config = NetworkConfig.model_validate_json(bytes(np.asarray(records[CONFIG_RECORD], dtype=np.uint8)))
        except (ValidationError, UnicodeDecodeError) as e:
            raise CheckpointFormatError(f"网络结构记录无法解析: {e}") from e
        shapes = parameter_shapes(config)
        stats = stat_names(config)
        try:
            return cls(
                config,
                {k: records[k] for k in shapes},
                {k: records[k] for k in stats},
            )
        except KeyError as e:
            raise CheckpointFormatError(f"checkpoint 缺少记录: {e}") from e
        except InvalidArgumentError as e:
            raise CheckpointFormatError(str(e)) from e

    def save(self, path: str) -> str:
        return save_checkpoint(self.to_records(), path)

    @classmethod
    def load(cls, path: str) -> "Ove6dNetwork":
        return cls.from_records(load_checkpoint(path))

    # -------------------------------------------------------------------------
    # 前向
    # -------------------------------------------------------------------------
    def bind(self, requires_grad: bool = False, dtype=np.float32) -> dict[str, Tensor]:
        """为一次前向创建参数包装；每次调用的梯度互不干扰"""
        return {
            name: Tensor(arr.astype(dtype), requires_grad=requires_grad, name=name)
            for name, arr in self.params.items()
        }

    def _input(self, crops, dtype=np.float32) -> Tensor:
        arr = np.asarray(crops)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim == 3:
            arr = arr[:, None]
        s = self.config.input_size
        if arr.ndim != 4 or arr.shape[1:] != (1, s, s):
            raise InvalidArgumentError(f"网络输入应为 (N, 1, {s}, {s})，实际为 {np.asarray(crops).shape}")
        return Tensor(arr, dtype=dtype)

    def _check_features(self, *maps: np.ndarray) -> list[Tensor]:
        expected = (self.config.feature_channels, self.config.feature_size, self.config.feature_size)
        tensors = []
        for m in maps:
            arr = np.asarray(m, dtype=np.float32)
            if arr.ndim == 3:
                arr = arr[None]
            if arr.ndim != 4 or arr.shape[1:] != expected:
                raise InvalidArgumentError(f"特征图形状应为 (N, {expected})，实际为 {arr.shape}")
            tensors.append(Tensor(arr))
        if len({t.shape for t in tensors}) > 1:
            raise InvalidArgumentError(f"特征图形状不一致: {[t.shape for t in tensors]}")
        return tensors

    def encode(self, crops) -> tuple[np.ndarray, np.ndarray]:
        """
        评估模式编码：返回 (N, 64) 单位嵌入与 (N, C, f, f) 骨干特征图。

        Raises:
            InvalidArgumentError: 输入尺寸与网络不一致
        """
        x = self._input(crops)
        fwd = _Pass(self, self.bind(), train=False, tape=None)
        feats = fwd.backbone(x)
        emb = fwd.ove(feats)
        return emb.data, feats.data

    def regress_inplane(self, feat_a, feat_b) -> np.ndarray:
        """回归使 a ≈ T_R(b) 的平面内旋转，返回 (N, 2) 单位向量 (ϑ1, ϑ2)"""
        a, b = self._check_features(feat_a, feat_b)
        return _Pass(self, self.bind(), train=False, tape=None).ior(a, b).data

    def verify_score(self, feat_real, feat_cand, r_theta) -> np.ndarray:
        """一致性打分 OCV([T_{R_θ}(z_cand); z_real])，越大越一致"""
        real, cand = self._check_features(feat_real, feat_cand)
        transformed = F.spatial_transform_2d(cand, r_theta)
        return _Pass(self, self.bind(), train=False, tape=None).ocv(transformed, real).data

    def forward_triplets(
            self,
            batch: TripletBatch,
            params: dict[str, Tensor] | None = None,
            tape: Tape | None = None,
            train: bool = True,
    ) -> TripletLosses:
        """
        训练前向：三组视图拼成一个 3B 批过骨干，
        ℓvp = rank(S(v, v_θ), S(v, v_γ))；
        ℓθ = -log((1 + S_cos(T_pred(V), T_gt(V))) / 2)，pred = IOR(z_θ, z_v)；
        ℓcss = rank(OCV[ẑ; z_θ], OCV[ẑ; z_γ])，ẑ = T_gt(z_v)。
        """
        params = params if params is not None else self.bind()
        dtype = next(iter(params.values())).data.dtype
        b = batch.size
        fwd = _Pass(self, params, train=train, tape=tape)

        x = self._input(np.concatenate([batch.v, batch.v_theta, batch.v_gamma]), dtype=dtype)
        feats = fwd.backbone(x)
        emb = fwd.ove(feats)
        e_v, e_t, e_g = (F.take_rows(emb, i * b, (i + 1) * b, tape=tape) for i in range(3))
        z_v, z_t, z_g = (F.take_rows(feats, i * b, (i + 1) * b, tape=tape) for i in range(3))
        l_vp = F.ranking_loss(F.cosine_rows(e_v, e_t, tape=tape), F.cosine_rows(e_v, e_g, tape=tape),
                              RANKING_MARGIN, tape=tape)

        gt = Tensor(batch.theta_vec, dtype=dtype)
        pred = fwd.ior(z_t, z_v)
        positive = Tensor(batch.positive[:, None], dtype=dtype)
        rotated_pred = F.flatten(F.rotate_2d(positive, pred, tape=tape), tape=tape)
        rotated_gt = F.flatten(F.rotate_2d(positive, gt), tape=None)
        l_theta = F.neg_log_cosine_loss(F.cosine_rows(rotated_pred, rotated_gt, tape=tape), tape=tape)

        z_hat = F.rotate_2d(z_v, gt, tape=tape)
        pairs = F.concat_rows([z_hat, z_hat], tape=tape)
        others = F.concat_rows([z_t, z_g], tape=tape)
        scores = fwd.ocv(pairs, others)
        s_pos = F.take_rows(scores, 0, b, tape=tape)
        s_neg = F.take_rows(scores, b, 2 * b, tape=tape)
        l_css = F.ranking_loss(s_pos, s_neg, RANKING_MARGIN, tape=tape)

        total = F.weighted_mean([l_vp, l_css, l_theta], list(LOSS_WEIGHTS), tape=tape)
        return TripletLosses(
            total=total, viewpoint=l_vp, verification=l_css, inplane=l_theta, new_stats=fwd.stats
        )


# =============================================================================
# 标量损失
# =============================================================================
def _hinge(pos: float, neg: float, margin: float) -> float:
    return max(float(neg) - float(pos) + margin, 0.0)


def viewpoint_loss(v, v_theta, v_gamma, margin: float = RANKING_MARGIN) -> float:
    """max(S(v, v_γ) - S(v, v_θ) + m, 0)"""
    return _hinge(F.cosine_similarity(v, v_theta), F.cosine_similarity(v, v_gamma), margin)


def verification_loss(s_theta: float, s_gamma: float, margin: float = RANKING_MARGIN) -> float:
    """max(s_γ - s_θ + m, 0)"""
    return _hinge(s_theta, s_gamma, margin)


def inplane_loss(depth_v, r_pred, r_gt) -> float:
    """
    -log((1 + S_cos) / 2)，S_cos 为 T_pred(V) 与 T_gt(V) 展平后的余弦相似度。

    Raises:
        InvalidArgumentError: 深度图全为 0 或不是方形
    """
    depth = depth_v.depth if isinstance(depth_v, DepthFrame) else np.asarray(depth_v)
    depth = depth.astype(np.float64)
    if depth.ndim != 2 or depth.shape[0] != depth.shape[1]:
        raise InvalidArgumentError(f"平面内损失需要方形深度图: {depth.shape}")
    if not np.any(depth != 0):
        raise InvalidArgumentError("平面内损失的深度图全为 0")
    x = Tensor(depth[None, None], dtype=np.float64)
    a = F.spatial_transform_2d(x, r_pred).data.reshape(-1)
    b = F.spatial_transform_2d(x, r_gt).data.reshape(-1)
    s = F.cosine_similarity(a, b)
    return float(-math.log((1.0 + max(s, F.COS_FLOOR)) / 2.0))


def combined_loss(viewpoint, verification, inplane, weights: tuple[float, float, float] = LOSS_WEIGHTS) -> float:
    """(1/bs) Σ (100·ℓvp + 10·ℓcss + 1·ℓθ)"""
    vp, css, th = (np.atleast_1d(np.asarray(x, dtype=np.float64)) for x in (viewpoint, verification, inplane))
    if vp.size == 0 or not (vp.shape == css.shape == th.shape):
        raise InvalidArgumentError("combined_loss 需要非空且长度一致的损失项")
    return float(np.mean(weights[0] * vp + weights[1] * css + weights[2] * th))


# =============================================================================
# 留出集评估
# =============================================================================
class HeldOutReport(BaseModel):
    n_triplets: int
    triplet_accuracy: float = Field(description="Pr[S(v, v_θ) > S(v, v_γ)]")
    inplane_median_error_deg: float
    identity_median_error_deg: float = Field(description="同一图像对的回归角度中位数")
    verification_accuracy: float = Field(description="Pr[OCV(匹配) > OCV(视点不同)]")


def _unit(vec: np.ndarray) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    return v / np.linalg.norm(v)


def evaluate_triplets(
        net: Ove6dNetwork, triplets: list[TrainingTriplet], batch_size: int = 32, min_gamma: float = 0.0
) -> HeldOutReport:
    """在留出物体的三元组上评估三个头；min_gamma 过滤视点差过小的三元组"""
    triplets = [t for t in triplets if t.gamma_angle >= min_gamma]
    if not triplets:
        raise InvalidArgumentError("没有可评估的三元组")
    ranking, verify, errors, identity = [], [], [], []
    for start in range(0, len(triplets), batch_size):
        chunk = triplets[start:start + batch_size]
        e_v, z_v = net.encode(np.stack([t.v for t in chunk]))
        e_t, z_t = net.encode(np.stack([t.v_theta for t in chunk]))
        e_g, z_g = net.encode(np.stack([t.v_gamma for t in chunk]))
        ranking.extend(np.einsum("ij,ij->i", e_v, e_t) > np.einsum("ij,ij->i", e_v, e_g))

        pred = net.regress_inplane(z_t, z_v)
        same = net.regress_inplane(z_v, z_v)
        for t, vec, vec_same in zip(chunk, pred, same):
            errors.append(geodesic_angle(inplane_matrix(_unit(vec)), t.theta_gt))
            identity.append(geodesic_angle(inplane_matrix(_unit(vec_same)), np.eye(3)))

        gts = np.stack([t.theta_gt for t in chunk])
        s_pos = net.verify_score(z_t, z_v, gts)
        s_neg = net.verify_score(z_g, z_v, gts)
        verify.extend(s_pos > s_neg)

    report = HeldOutReport(
        n_triplets=len(triplets),
        triplet_accuracy=float(np.mean(ranking)),
        inplane_median_error_deg=float(np.median(errors)),
        identity_median_error_deg=float(np.median(identity)),
        verification_accuracy=float(np.mean(verify)),
    )
    logger.info(f"留出集评估：{report.model_dump_json()}")
    return report


def network_summary(net: Ove6dNetwork) -> str:
    return json.dumps({"parameters": net.parameter_count, "config": net.config.model_dump()}, ensure_ascii=False)
