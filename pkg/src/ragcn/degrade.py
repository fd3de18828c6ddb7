"""Test-time skeleton degradations: frame / part / block / random occlusion
and Gaussian jitter. All are pure seeded functions applied to raw sequences
BEFORE preprocessing; models are never trained on degraded data.

Occlusions only shrink the valid set; jitter perturbs coordinates and leaves
the valid mask untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, SequenceTooShort, UnknownPart
from .skeleton import (
    LEFT_ARM_JOINTS, RIGHT_ARM_JOINTS, HAND_JOINTS, LEG_JOINTS, TORSO_JOINTS,
    SequenceTensor,
)

KINDS = ("none", "frame", "part", "block", "random", "jitter")

FRAME_LENGTHS = (10, 20, 30, 40, 50)

# Part ids follow the benchmark convention: 1 left arm, 2 right arm,
# 3 two hands, 4 two legs, 5 torso (0-based Kinect-v2 joint indices).
PART_JOINT_SETS: dict[int, tuple[int, ...]] = {
    1: LEFT_ARM_JOINTS,
    2: RIGHT_ARM_JOINTS,
    3: HAND_JOINTS,
    4: LEG_JOINTS,
    5: TORSO_JOINTS,
}

# Horizontal cut heights as fractions of the per-frame bounding-box height;
# range 3 sits mid-body.
BLOCK_LINE_FRACTIONS = (0.2, 0.35, 0.5, 0.65, 0.8)

VERTICAL_AXIS = 1  # y channel


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation protocol cell with its seed."""

    kind: str = "none"
    length: Optional[int] = None    # frame occlusion window
    part: Optional[int] = None      # part occlusion id, 1..5
    range_id: Optional[int] = None  # block occlusion height range, 1..5
    p: Optional[float] = None       # per-cell probability (random / jitter)
    sigma: Optional[float] = None   # jitter noise std, meters
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "frame" and self.length not in FRAME_LENGTHS:
            raise ConfigError(f"frame length must be one of {FRAME_LENGTHS}")
        if self.kind == "part" and self.part not in PART_JOINT_SETS:
            raise ConfigError("part must be in {1..5}")
        if self.kind == "block" and self.range_id not in range(1, 6):
            raise ConfigError("block range must be in {1..5}")
        if self.kind in ("random", "jitter"):
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ConfigError("p must lie in (0, 1)")
        if self.kind == "jitter":
            if self.sigma is None or self.sigma <= 0.0:
                raise ConfigError("jitter sigma must be positive")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed}
        for k in ("length", "part", "range_id", "p", "sigma"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DegradationSpec":
        known = {"kind", "length", "part", "range_id", "p", "sigma", "seed"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown degradation fields: {sorted(extra)}")
        return cls(**obj)


def _invalidate(x: SequenceTensor, cells: np.ndarray) -> SequenceTensor:
    """New sequence with the given T x V cells zeroed and marked invalid."""
    valid = x.valid & ~cells
    data = np.array(x.data)
    data[:, ~valid] = 0.0
    return SequenceTensor(data=data, valid=valid,
                          num_real_frames=x.num_real_frames)


def occlude_frames(x: SequenceTensor, length: int, seed: int = 0) -> SequenceTensor:
    """Zero a contiguous window of frames (all joints) inside the first
    min(100, num_real_frames) frames; the start is uniform over fits."""
    if x.num_real_frames < 1:
        raise SequenceTooShort("sequence has no real frames")
    limit = min(100, x.num_real_frames)
    if length > limit:
        raise SequenceTooShort(
            f"window of {length} frames does not fit into {limit} usable frames"
        )
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, limit - length, endpoint=True))
    cells = np.zeros_like(x.valid)
    cells[start:start + length, :] = True
    return _invalidate(x, cells)


def occlude_part(x: SequenceTensor, part: int) -> SequenceTensor:
    """Zero one named body part for the whole sequence (deterministic)."""
    joints = PART_JOINT_SETS.get(part)
    if joints is None:
        raise UnknownPart(f"part id {part} not in {{1..5}}")
    cells = np.zeros_like(x.valid)
    cells[:, list(joints)] = True
    return _invalidate(x, cells)


def occlude_block(x: SequenceTensor, range_id: int) -> SequenceTensor:
    """Zero all joints below a horizontal line per frame.

    The line sits at bounding-box bottom + fraction(range_id) * height,
    with the box computed over that frame's valid joints only. Frames with
    no valid joint are left unchanged.
    """
    if range_id not in range(1, 6):
        raise ConfigError("block range must be in {1..5}")
    frac = BLOCK_LINE_FRACTIONS[range_id - 1]
    heights = x.data[VERTICAL_AXIS]  # T x V
    cells = np.zeros_like(x.valid)
    for t in range(x.num_frames):
        vmask = x.valid[t]
        if not vmask.any():
            continue
        ys = heights[t, vmask]
        line = ys.min() + frac * (ys.max() - ys.min())
        cells[t] = vmask & (heights[t] < line)
    return _invalidate(x, cells)


def occlude_random(x: SequenceTensor, p: float, seed: int = 0) -> SequenceTensor:
    """Drop each valid cell independently with probability p.

    One uniform draw per cell is compared against p, so for a fixed seed the
    dropped set is nested across increasing p.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError("p must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    draws = rng.random(x.valid.shape)
    return _invalidate(x, x.valid & (draws < p))


def jitter_gaussian(x: SequenceTensor, p: float, sigma: float,
                    seed: int = 0) -> SequenceTensor:
    """Add N(0, sigma^2) to each coordinate of randomly selected valid cells.

    Selection draws and per-cell noise are generated for the full grid up
    front, so outputs are independent of iteration order and selections are
    coupled across p for a fixed seed. The valid mask is unchanged.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError("p must lie in (0, 1)")
    if sigma < 0.0:
        raise ConfigError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    select = rng.random(x.valid.shape) < p
    noise = rng.normal(0.0, sigma, size=x.data.shape).astype(x.data.dtype)
    hit = (x.valid & select)[None, :, :]
    data = np.where(hit, x.data + noise, x.data)
    return SequenceTensor(data=data, valid=x.valid.copy(),
                          num_real_frames=x.num_real_frames)


def apply(spec: DegradationSpec, x: SequenceTensor) -> SequenceTensor:
    """Dispatch a DegradationSpec; kind='none' returns the input unchanged."""
    if spec.kind == "none":
        return x
    if spec.kind == "frame":
        return occlude_frames(x, spec.length, spec.seed)
    if spec.kind == "part":
        return occlude_part(x, spec.part)
    if spec.kind == "block":
        return occlude_block(x, spec.range_id)
    if spec.kind == "random":
        return occlude_random(x, spec.p, spec.seed)
    if spec.kind == "jitter":
        return jitter_gaussian(x, spec.p, spec.sigma, spec.seed)
    raise ConfigError(f"unknown degradation kind {spec.kind!r}")
