"""Input feature construction: raw coordinates, coordinates relative to the
center joint, and frame-to-frame displacements, concatenated along channels.

All derived features are occlusion-aware: any feature touching an invalid
cell is zeroed, so the zero-under-mask invariant survives into every block.
Degradations must be applied before this stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import SequenceTensor, SkeletonGraph

FEATURE_MODES = ("all", "raw", "relative", "displacement")


@dataclass
class PreprocessedSequence:
    """3C x T x V feature tensor (blocks [raw | relative | displacement])."""

    data: np.ndarray
    valid: np.ndarray


def relative_coordinates(x: SequenceTensor, center: int) -> np.ndarray:
    """Per-frame offsets from the center joint, C x T x V.

    Zero wherever the joint or the center is invalid in that frame; an
    occluded center therefore blanks the whole frame (absolute positions
    must not leak through the difference).
    """
    return _relative(x.data, x.valid, center)


def temporal_displacements(x: SequenceTensor) -> np.ndarray:
    """Forward differences along time, C x T x V.

    out[:, t] = x[:, t+1] - x[:, t] where both frames' cells are valid,
    zero otherwise; the last frame has no successor and is zero.
    """
    return _displacement(x.data, x.valid)


def preprocess(x: SequenceTensor, graph: SkeletonGraph,
               feature_mode: str = "all") -> PreprocessedSequence:
    """Concatenate [raw | relative | displacement] along channels."""
    if graph.num_joints != x.num_joints:
        raise ValueError(
            f"graph has {graph.num_joints} joints, sequence has {x.num_joints}"
        )
    data = preprocess_arrays(x.data, x.valid, graph.center_joint, feature_mode)
    return PreprocessedSequence(data=data, valid=x.valid.copy())


def preprocess_arrays(data: np.ndarray, valid: np.ndarray, center: int,
                      feature_mode: str = "all") -> np.ndarray:
    """Array-level preprocessing; accepts leading batch axes.

    data: [..., C, T, V], valid: [..., T, V] -> [..., kC, T, V] where k
    depends on feature_mode (3 for "all", 1 otherwise).
    """
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    valid = np.asarray(valid, dtype=bool)
    if feature_mode == "raw":
        return np.array(data)
    if feature_mode == "relative":
        return _relative(data, valid, center)
    if feature_mode == "displacement":
        return _displacement(data, valid)
    return np.concatenate(
        [data, _relative(data, valid, center), _displacement(data, valid)],
        axis=-3,
    )


def _relative(data: np.ndarray, valid: np.ndarray, center: int) -> np.ndarray:
    mask = valid[..., None, :, :] & valid[..., None, :, center:center + 1]
    return np.where(mask, data - data[..., center:center + 1], data.dtype.type(0))


def _displacement(data: np.ndarray, valid: np.ndarray) -> np.ndarray:
    out = np.zeros_like(data)
    both = valid[..., :-1, :] & valid[..., 1:, :]
    out[..., :-1, :] = np.where(
        both[..., None, :, :],
        data[..., 1:, :] - data[..., :-1, :],
        data.dtype.type(0),
    )
    return out
