"""Distance-partitioned graph convolution and the 10-layer ST-GCN backbone.

The spatial step mixes joints through symmetrically normalized per-distance
adjacency matrices, each scaled by a learnable edge-importance matrix, then
mixes channels with a 1x1 weight per distance. A 1xL temporal convolution,
BatchNorm/ReLU/dropout and a residual connection complete one layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .errors import ConfigError
from .skeleton import SkeletonGraph

# Output channels and temporal strides of the 10 layers.
CHANNEL_SCHEDULE = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
STRIDE_SCHEDULE = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)


@dataclass(frozen=True)
class HyperParams:
    """Receptive-field and masking hyperparameters shared by all streams."""

    max_distance: int = 2      # D: largest graph distance with its own weights
    temporal_window: int = 5   # L: odd temporal kernel width
    cam_threshold: float = 0.3  # delta: activation-map cutoff in (0,1)
    streams: int = 1
    dropout: float = 0.5
    alpha: float = 1e-4        # degree regularizer against empty rows

    def __post_init__(self):
        if self.max_distance < 1:
            raise ConfigError("max_distance must be >= 1")
        if self.temporal_window < 3 or self.temporal_window % 2 == 0:
            raise ConfigError("temporal_window must be odd and >= 3")
        if not 0.0 < self.cam_threshold < 1.0:
            raise ConfigError("cam_threshold must lie in (0, 1)")
        if self.streams < 1:
            raise ConfigError("streams must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class PartitionedAdjacency:
    """Normalized per-distance joint-mixing matrices."""

    mats: list[np.ndarray]        # normalized, one per distance 0..D
    raw: list[np.ndarray]         # binary shortest-path-distance indicators
    max_distance: int
    alpha: float = 1e-4


def graph_distances(graph: SkeletonGraph) -> np.ndarray:
    """All-pairs shortest-path hop counts (BFS per joint; -1 = unreachable)."""
    v = graph.num_joints
    neighbors: list[list[int]] = [[] for _ in range(v)]
    for i, j in graph.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    dist = np.full((v, v), -1, dtype=np.int64)
    for s in range(v):
        dist[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for a in frontier:
                for b in neighbors[a]:
                    if dist[s, b] < 0:
                        dist[s, b] = d
                        nxt.append(b)
            frontier = nxt
    return dist


def partition_adjacency(graph: SkeletonGraph, max_distance: int) -> list[np.ndarray]:
    """Binary matrices A_d with A_d[i,j] = 1 iff hop distance(i,j) == d."""
    if max_distance < 1:
        raise ConfigError("max_distance must be >= 1")
    dist = graph_distances(graph)
    return [(dist == d).astype(np.float64) for d in range(max_distance + 1)]


def normalize_adjacency(a: np.ndarray, alpha: float = 1e-4) -> np.ndarray:
    """Symmetric degree normalization with additive regularizer alpha."""
    deg = a.sum(axis=1) + alpha
    inv_sqrt = deg ** -0.5
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_partitioned_adjacency(graph: SkeletonGraph, max_distance: int,
                                alpha: float = 1e-4) -> PartitionedAdjacency:
    raw = partition_adjacency(graph, max_distance)
    mats = [normalize_adjacency(a, alpha) for a in raw]
    return PartitionedAdjacency(mats=mats, raw=raw,
                                max_distance=max_distance, alpha=alpha)


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    stats: RunningStats

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
                   beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
                   stats=RunningStats.create(channels, dtype=dtype))


@dataclass
class StgcnLayerParams:
    """Weights of one ST-GCN layer."""

    spatial_weights: list[Tensor]    # per distance, [C_out, C_in]
    spatial_bias: Tensor             # [C_out]
    edge_importance: list[Tensor]    # per distance, [V, V], init all-ones
    spatial_bn: BatchNormParams
    temporal_kernel: Tensor          # [C_out, C_out, L]
    temporal_bias: Tensor
    temporal_bn: BatchNormParams
    stride: int
    residual_weight: Optional[Tensor] = None  # [C_out, C_in, 1] projection
    residual_bias: Optional[Tensor] = None
    residual_bn: Optional[BatchNormParams] = None


@dataclass
class BackboneParams:
    """One stream: input BN, 10 scheduled layers, pooled-feature classifier."""

    layers: list[StgcnLayerParams]
    head_weight: Tensor              # [256, num_classes]
    head_bias: Tensor
    input_bn: Optional[BatchNormParams]
    in_channels: int
    num_classes: int


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_layer(in_channels: int, out_channels: int, num_joints: int,
               num_partitions: int, window: int, stride: int,
               rng: np.random.Generator, dtype=np.float32) -> StgcnLayerParams:
    spatial_weights = [
        Tensor(_uniform(rng, (out_channels, in_channels), in_channels, dtype),
               requires_grad=True)
        for _ in range(num_partitions)
    ]
    edge_importance = [
        Tensor(np.ones((num_joints, num_joints), dtype=dtype), requires_grad=True)
        for _ in range(num_partitions)
    ]
    temporal_kernel = Tensor(
        _uniform(rng, (out_channels, out_channels, window),
                 out_channels * window, dtype),
        requires_grad=True)
    needs_projection = stride != 1 or in_channels != out_channels
    residual_weight = residual_bias = residual_bn = None
    if needs_projection:
        residual_weight = Tensor(
            _uniform(rng, (out_channels, in_channels, 1), in_channels, dtype),
            requires_grad=True)
        residual_bias = Tensor(np.zeros(out_channels, dtype=dtype),
                               requires_grad=True)
        residual_bn = BatchNormParams.create(out_channels, dtype)
    return StgcnLayerParams(
        spatial_weights=spatial_weights,
        spatial_bias=Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True),
        edge_importance=edge_importance,
        spatial_bn=BatchNormParams.create(out_channels, dtype),
        temporal_kernel=temporal_kernel,
        temporal_bias=Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True),
        temporal_bn=BatchNormParams.create(out_channels, dtype),
        stride=stride,
        residual_weight=residual_weight,
        residual_bias=residual_bias,
        residual_bn=residual_bn,
    )


def init_backbone(graph: SkeletonGraph, hyper: HyperParams, num_classes: int,
                  rng: np.random.Generator, in_channels: int = 9,
                  input_bn: bool = True, dtype=np.float32) -> BackboneParams:
    layers = []
    prev = in_channels
    for out_channels, stride in zip(CHANNEL_SCHEDULE, STRIDE_SCHEDULE):
        layers.append(init_layer(
            prev, out_channels, graph.num_joints, hyper.max_distance + 1,
            hyper.temporal_window, stride, rng, dtype))
        prev = out_channels
    head_weight = Tensor(_uniform(rng, (prev, num_classes), prev, dtype),
                         requires_grad=True)
    head_bias = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
    return BackboneParams(
        layers=layers,
        head_weight=head_weight,
        head_bias=head_bias,
        input_bn=BatchNormParams.create(in_channels, dtype) if input_bn else None,
        in_channels=in_channels,
        num_classes=num_classes,
    )


def spatial_graph_conv(f_in: Tensor, layer: StgcnLayerParams,
                       adj: PartitionedAdjacency) -> Tensor:
    """Sum over distances of per-distance joint mixing then channel mixing."""
    out = None
    for a, m, w in zip(adj.mats, layer.edge_importance, layer.spatial_weights):
        term = ad.channel_mix(ad.joint_mix(f_in, a, m), w)
        out = term if out is None else ad.add(out, term)
    return ad.channel_bias(out, layer.spatial_bias)


def stgcn_layer(f_in: Tensor, layer: StgcnLayerParams,
                adj: PartitionedAdjacency, mode: str,
                dropout_p: float = 0.5, rng=None) -> Tensor:
    """spatial conv > BN > ReLU > dropout > temporal conv > BN > +res > ReLU."""
    y = spatial_graph_conv(f_in, layer, adj)
    y = ad.batch_norm(y, layer.spatial_bn.gamma, layer.spatial_bn.beta,
                      layer.spatial_bn.stats, mode)
    y = ad.relu(y)
    y = ad.dropout(y, dropout_p, mode, rng if rng is not None else 0)
    window = layer.temporal_kernel.data.shape[2]
    y = ad.conv_time(y, layer.temporal_kernel, layer.stride, (window - 1) // 2)
    y = ad.channel_bias(y, layer.temporal_bias)
    y = ad.batch_norm(y, layer.temporal_bn.gamma, layer.temporal_bn.beta,
                      layer.temporal_bn.stats, mode)
    if layer.residual_weight is None:
        res = f_in
    else:
        res = ad.conv_time(f_in, layer.residual_weight, layer.stride, 0)
        res = ad.channel_bias(res, layer.residual_bias)
        res = ad.batch_norm(res, layer.residual_bn.gamma, layer.residual_bn.beta,
                            layer.residual_bn.stats, mode)
    return ad.relu(ad.add(y, res))


def backbone_forward(x: Tensor, params: BackboneParams,
                     adj: PartitionedAdjacency, mode: str,
                     dropout_p: float = 0.5, rng=None
                     ) -> tuple[Tensor, Tensor, Tensor]:
    """Run one stream; returns (pre-pool features, pooled vector, logits).

    x is [C_in, T, V] or channel-major batched [C_in, N, T, V]; features keep
    the frame/joint axes for class-activation scoring, pooled/logits are
    [N, 256] / [N, classes] (leading axis dropped for 3D input).
    """
    was3d = x.data.ndim == 3
    if was3d:
        shape = x.data.shape
        x = ad.reshape(x, (shape[0], 1) + shape[1:])
    if x.data.shape[0] != params.in_channels:
        raise ConfigError(
            f"backbone expects {params.in_channels} input channels, "
            f"got {x.data.shape[0]}"
        )
    y = x
    if params.input_bn is not None:
        y = ad.batch_norm(y, params.input_bn.gamma, params.input_bn.beta,
                          params.input_bn.stats, mode)
    for layer in params.layers:
        y = stgcn_layer(y, layer, adj, mode, dropout_p, rng)
    features = y
    pooled = ad.global_avg_pool(features)
    logits = ad.linear(pooled, params.head_weight, params.head_bias)
    if was3d:
        fs = features.data.shape
        features = ad.reshape(features, (fs[0],) + fs[2:])
        pooled = ad.reshape(pooled, pooled.data.shape[1:])
        logits = ad.reshape(logits, logits.data.shape[1:])
    return features, pooled, logits


def named_parameters(params: BackboneParams, prefix: str = ""
                     ) -> Iterator[tuple[str, Tensor]]:
    """Stable-order learnable parameters (used by SGD and checkpoints)."""
    if params.input_bn is not None:
        yield f"{prefix}input_bn.gamma", params.input_bn.gamma
        yield f"{prefix}input_bn.beta", params.input_bn.beta
    for i, layer in enumerate(params.layers):
        base = f"{prefix}layer{i}."
        for d, w in enumerate(layer.spatial_weights):
            yield f"{base}spatial_w{d}", w
        yield f"{base}spatial_bias", layer.spatial_bias
        for d, m in enumerate(layer.edge_importance):
            yield f"{base}edge_importance{d}", m
        yield f"{base}spatial_bn.gamma", layer.spatial_bn.gamma
        yield f"{base}spatial_bn.beta", layer.spatial_bn.beta
        yield f"{base}temporal_kernel", layer.temporal_kernel
        yield f"{base}temporal_bias", layer.temporal_bias
        yield f"{base}temporal_bn.gamma", layer.temporal_bn.gamma
        yield f"{base}temporal_bn.beta", layer.temporal_bn.beta
        if layer.residual_weight is not None:
            yield f"{base}residual_weight", layer.residual_weight
            yield f"{base}residual_bias", layer.residual_bias
            yield f"{base}residual_bn.gamma", layer.residual_bn.gamma
            yield f"{base}residual_bn.beta", layer.residual_bn.beta
    yield f"{prefix}head_weight", params.head_weight
    yield f"{prefix}head_bias", params.head_bias


def named_running_stats(params: BackboneParams, prefix: str = ""
                        ) -> Iterator[tuple[str, RunningStats]]:
    """Non-learnable BatchNorm state, needed to reproduce eval outputs."""
    if params.input_bn is not None:
        yield f"{prefix}input_bn", params.input_bn.stats
    for i, layer in enumerate(params.layers):
        base = f"{prefix}layer{i}."
        yield f"{base}spatial_bn", layer.spatial_bn.stats
        yield f"{base}temporal_bn", layer.temporal_bn.stats
        if layer.residual_bn is not None:
            yield f"{base}residual_bn", layer.residual_bn.stats


def count_parameters(params: BackboneParams) -> int:
    return sum(t.data.size for _, t in named_parameters(params))
