"""Multi-stream model: CAM scoring, threshold activation maps, cumulative
masks, masked per-stream forward and the fused classifier.

Stream s sees only the joints/frames no earlier stream activated: its input
is the preprocessed tensor times the running product of complements of the
previous streams' activation maps. Maps are built from detached score maps,
so no gradient flows through mask construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import (
    BackboneParams, HyperParams, PartitionedAdjacency,
    build_partitioned_adjacency, backbone_forward, init_backbone,
    named_parameters as backbone_named_parameters,
    named_running_stats as backbone_named_running_stats,
)
from .errors import BadClass, ConfigError, MissingLabel, ShapeMismatch
from .preprocess import FEATURE_MODES, preprocess_arrays
from .skeleton import SequenceTensor, SkeletonGraph

ACTIVATION_MODES = ("threshold", "softmax-legacy", "none")
CAM_CLASS_RULES = ("stream1", "per-stream")

# Score maps whose maximum is at or below this are treated as activating
# nothing (avoids normalizing by a vanishing max).
SCORE_FLOOR = 1e-8


@dataclass
class ActivationState:
    """Per-stream score maps, binary activation maps and cumulative masks.

    Arrays carry a leading batch axis ([N, T', V] / [N, T, V]); single-sample
    forwards return states with N == 1 squeezed away.
    """

    scores: list[np.ndarray] = field(default_factory=list)
    maps: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    class_ids: list[np.ndarray] = field(default_factory=list)
    delta: float = 0.3

    def activated_set(self, stream: int) -> np.ndarray:
        """Cells both visible to and activated by a stream (binary)."""
        return self.maps[stream] & self.masks[stream]


@dataclass
class RagcnParams:
    """All learnable state: S independent streams plus the fusion head."""

    streams: list[BackboneParams]
    fusion_weight: Tensor            # [256*S, num_classes]
    fusion_bias: Tensor
    hyper: HyperParams
    graph: SkeletonGraph
    num_classes: int
    feature_mode: str = "all"
    adjacency: Optional[PartitionedAdjacency] = None

    def __post_init__(self):
        if self.adjacency is None:
            self.adjacency = build_partitioned_adjacency(
                self.graph, self.hyper.max_distance, self.hyper.alpha)


def init_ragcn(graph: SkeletonGraph, hyper: HyperParams, num_classes: int,
               rng: np.random.Generator, feature_mode: str = "all",
               input_bn: bool = True, dtype=np.float32) -> RagcnParams:
    if feature_mode not in FEATURE_MODES:
        raise ConfigError(f"unknown feature mode {feature_mode!r}")
    in_channels = 9 if feature_mode == "all" else 3
    streams = [
        init_backbone(graph, hyper, num_classes, rng, in_channels=in_channels,
                      input_bn=input_bn, dtype=dtype)
        for _ in range(hyper.streams)
    ]
    fan_in = 256 * hyper.streams
    bound = 1.0 / np.sqrt(fan_in)
    fusion_weight = Tensor(
        rng.uniform(-bound, bound, size=(fan_in, num_classes)).astype(dtype),
        requires_grad=True)
    fusion_bias = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
    return RagcnParams(streams=streams, fusion_weight=fusion_weight,
                       fusion_bias=fusion_bias, hyper=hyper, graph=graph,
                       num_classes=num_classes, feature_mode=feature_mode)


def named_parameters(params: RagcnParams) -> Iterator[tuple[str, Tensor]]:
    for s, stream in enumerate(params.streams):
        yield from backbone_named_parameters(stream, prefix=f"stream{s}.")
    yield "fusion.weight", params.fusion_weight
    yield "fusion.bias", params.fusion_bias


def named_running_stats(params: RagcnParams):
    for s, stream in enumerate(params.streams):
        yield from backbone_named_running_stats(stream, prefix=f"stream{s}.")


def count_parameters(params: RagcnParams) -> int:
    return sum(t.data.size for _, t in named_parameters(params))


# ---------------------------------------------------------------------------
# activation module
# ---------------------------------------------------------------------------

def cam_scores(features: np.ndarray, class_weights: np.ndarray,
               class_id: int) -> np.ndarray:
    """Project pre-pooling features through one classifier column.

    features: [K, T', V]; class_weights: [K, num_classes] (the stream head's
    weight matrix); returns score[t, v] = sum_k w[k, c] * f[k, t, v].
    """
    if class_weights.ndim != 2 or class_weights.shape[0] != features.shape[0]:
        raise ShapeMismatch(
            f"features {features.shape} vs class weights {class_weights.shape}"
        )
    if not 0 <= class_id < class_weights.shape[1]:
        raise BadClass(f"class {class_id} outside [0, {class_weights.shape[1]})")
    return np.tensordot(class_weights[:, class_id], features, axes=(0, 0))


def _cam_scores_batch(features: np.ndarray, class_weights: np.ndarray,
                      class_ids: np.ndarray) -> np.ndarray:
    """features [K, N, T', V], class_ids [N] -> scores [N, T', V]."""
    if class_ids.min() < 0 or class_ids.max() >= class_weights.shape[1]:
        raise BadClass("class id outside classifier range")
    w = class_weights[:, class_ids]  # [K, N]
    return np.einsum("kntv,kn->ntv", features, w)


def activation_map(score: np.ndarray, delta: float, full_t: int) -> np.ndarray:
    """Binary T x V map: normalized score >= delta, upsampled along time.

    Normalization divides by the map's maximum (a cell at the maximum is
    always activated); a map whose maximum is <= SCORE_FLOOR activates
    nothing. Coarse frames are replicated to full_t by nearest-neighbor
    indexing. Accepts [T', V] or batched [N, T', V].
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta {delta} outside (0, 1)")
    single = score.ndim == 2
    s = score[None] if single else score
    mx = s.max(axis=(1, 2), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = np.where(mx > SCORE_FLOOR, s / mx, -1.0)
    coarse = (normalized >= delta).astype(np.uint8)
    t_coarse = coarse.shape[1]
    idx = np.minimum((np.arange(full_t) * t_coarse) // full_t, t_coarse - 1)
    fine = coarse[:, idx, :]
    return fine[0] if single else fine


def _legacy_softmax_map(score: np.ndarray, full_t: int) -> np.ndarray:
    """Earlier activation rule: softmax over joints of time-summed scores,
    joint activated when above the uniform level 1/V; constant over time."""
    single = score.ndim == 2
    s = score[None] if single else score
    per_joint = s.sum(axis=1)  # [N, V]
    shifted = per_joint - per_joint.max(axis=1, keepdims=True)
    soft = np.exp(shifted)
    soft /= soft.sum(axis=1, keepdims=True)
    v = s.shape[2]
    joints = (soft > 1.0 / v).astype(np.uint8)  # [N, V]
    fine = np.repeat(joints[:, None, :], full_t, axis=1)
    return fine[0] if single else fine


def next_mask(prev_masks: Sequence[np.ndarray],
              prev_map: Optional[np.ndarray],
              shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Cumulative mask: product of all previous masks times the complement
    of the previous stream's activation map; all-ones for the first stream
    (pass `shape` when there is no previous stream to copy it from)."""
    if not prev_masks:
        if prev_map is not None:
            raise ShapeMismatch("first stream cannot have a previous map")
        if shape is None:
            raise ValueError("shape is required for the first stream")
        return np.ones(shape, dtype=np.uint8)
    out = np.ones_like(prev_masks[0])
    for m in prev_masks:
        if m.shape != out.shape:
            raise ShapeMismatch("mask shapes disagree")
        out = out * m
    if prev_map is None or prev_map.shape != out.shape:
        raise ShapeMismatch("previous map missing or mis-shaped")
    return (out * (1 - prev_map)).astype(np.uint8)


def mask_input(x_prime: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Broadcast a T x V binary mask over the channel axis of [C', T, V]."""
    if x_prime.ndim != 3 or mask.shape != x_prime.shape[1:]:
        raise ShapeMismatch(
            f"x' {x_prime.shape} cannot take mask {mask.shape}"
        )
    return x_prime * mask.astype(x_prime.dtype)[None]


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def forward_batch(x_prep: np.ndarray, params: RagcnParams, mode: str,
                  labels: Optional[np.ndarray] = None, rng=None,
                  cam_class_rule: str = "stream1",
                  activation_mode: str = "threshold"
                  ) -> tuple[Tensor, list[Tensor], ActivationState]:
    """Run all streams on a preprocessed batch [N, C', T, V].

    Streams run in order; stream s's input is masked by the cumulative mask
    built from streams < s. The class used for scoring is the ground truth in
    train mode, and in eval mode the argmax of stream 1 (or of each stream
    itself under the "per-stream" rule). Returns fused logits [N, classes],
    per-stream logits, and the full activation state.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode {mode!r}")
    if cam_class_rule not in CAM_CLASS_RULES:
        raise ConfigError(f"unknown cam class rule {cam_class_rule!r}")
    if activation_mode not in ACTIVATION_MODES:
        raise ConfigError(f"unknown activation mode {activation_mode!r}")
    if mode == "train":
        if labels is None:
            raise MissingLabel("train-mode forward needs labels")
        labels = np.asarray(labels, dtype=np.int64)
    n, _, t, v = x_prep.shape
    state = ActivationState(delta=params.hyper.cam_threshold)
    pooled_parts: list[Tensor] = []
    stream_logits: list[Tensor] = []
    cam_class = labels if mode == "train" else None
    dropout_p = params.hyper.dropout
    for s, stream in enumerate(params.streams):
        if s == 0:
            mask = np.ones((n, t, v), dtype=np.uint8)
        elif activation_mode == "none":
            mask = state.masks[0]
        else:
            mask = _next_mask_batch(state.masks, state.maps[s - 1])
        xs = x_prep * mask.astype(x_prep.dtype)[:, None]
        xs_cm = np.ascontiguousarray(np.moveaxis(xs, 0, 1))  # channel-major
        feats, pooled, logits = backbone_forward(
            Tensor(xs_cm), stream, params.adjacency, mode, dropout_p, rng)
        if cam_class is None:
            cam_class = logits.data.argmax(axis=1)  # eval: stream-1 argmax
        if mode == "eval" and cam_class_rule == "per-stream":
            c_s = logits.data.argmax(axis=1)
        else:
            c_s = cam_class
        score = _cam_scores_batch(feats.data, stream.head_weight.data, c_s)
        if activation_mode == "none":
            amap = np.zeros((n, t, v), dtype=np.uint8)
        elif activation_mode == "softmax-legacy":
            amap = _legacy_softmax_map(score, t)
        else:
            amap = activation_map(score, params.hyper.cam_threshold, t)
        state.scores.append(score)
        state.maps.append(amap)
        state.masks.append(mask)
        state.class_ids.append(np.array(c_s, dtype=np.int64))
        pooled_parts.append(pooled)
        stream_logits.append(logits)
    fused = ad.linear(ad.concat(pooled_parts, axis=1),
                      params.fusion_weight, params.fusion_bias)
    return fused, stream_logits, state


def _next_mask_batch(prev_masks: list[np.ndarray],
                     prev_map: np.ndarray) -> np.ndarray:
    out = np.ones_like(prev_masks[0])
    for m in prev_masks:
        out = out * m
    return (out * (1 - prev_map)).astype(np.uint8)


def forward(x: SequenceTensor, params: RagcnParams, mode: str,
            label: Optional[int] = None, rng=None,
            cam_class_rule: str = "stream1",
            activation_mode: str = "threshold"
            ) -> tuple[Tensor, list[Tensor], ActivationState]:
    """Single-sample pipeline: preprocess, mask, run streams, fuse."""
    x_prep = preprocess_arrays(x.data, x.valid, params.graph.center_joint,
                               params.feature_mode)[None]
    labels = None if label is None else np.array([label])
    fused, stream_logits, state = forward_batch(
        x_prep, params, mode, labels, rng, cam_class_rule, activation_mode)
    fused = ad.reshape(fused, fused.data.shape[1:])
    stream_logits = [ad.reshape(l, l.data.shape[1:]) for l in stream_logits]
    squeezed = ActivationState(
        scores=[a[0] for a in state.scores],
        maps=[a[0] for a in state.maps],
        masks=[a[0] for a in state.masks],
        class_ids=[c[0] for c in state.class_ids],
        delta=state.delta,
    )
    return fused, stream_logits, squeezed


def total_loss(fused_logits: Tensor, stream_logits: Sequence[Tensor],
               labels) -> Tensor:
    """Cross-entropy of the fused output plus one term per stream."""
    loss = ad.softmax_cross_entropy(fused_logits, labels)
    for logits in stream_logits:
        loss = ad.add(loss, ad.softmax_cross_entropy(logits, labels))
    return loss
