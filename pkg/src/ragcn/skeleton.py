"""Skeleton domain types, the canonical 25-joint Kinect-v2 graph, and a
deterministic synthetic action dataset generator.

Sequences are dense C x T x V arrays (channels x frames x joints, meters)
with a boolean T x V validity mask; invalid cells carry exactly zero data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DisconnectedGraph, InvalidEdge, InvalidSpec

# Kinect-v2 joint order as released with the NTU recordings (0-based).
NTU_JOINT_NAMES = (
    "spine_base", "spine_mid", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right",
    "spine_shoulder",
    "handtip_left", "thumb_left", "handtip_right", "thumb_right",
)

# 24 bones of the Kinect-v2 skeleton tree (dataset-release convention).
NTU_BONES = (
    (0, 1), (1, 20), (2, 20), (3, 2),
    (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10),
    (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18),
    (21, 22), (22, 7), (23, 24), (24, 11),
)

NTU_CENTER_JOINT = 1  # spine_mid

# Body regions used by the synthetic generator and the part-occlusion sets.
LEFT_ARM_JOINTS = (4, 5, 6, 7, 21, 22)
RIGHT_ARM_JOINTS = (8, 9, 10, 11, 23, 24)
HAND_JOINTS = (21, 22, 23, 24)
LEG_JOINTS = (12, 13, 14, 15, 16, 17, 18, 19)
TORSO_JOINTS = (0, 1, 2, 3, 20)

_LEFT_LEG = (12, 13, 14, 15)
_RIGHT_LEG = (16, 17, 18, 19)
_HEAD_NECK = (2, 3)

# Fixed standing pose, meters, y up, x left(-)/right(+), z forward.
# Hips sit at 0.75 so a mid-body horizontal cut (block occlusion range 3)
# falls between hips and spine base.
BASE_POSE = np.array([
    (0.00, 0.85, 0.00),   # spine_base
    (0.00, 1.05, 0.00),   # spine_mid
    (0.00, 1.40, 0.00),   # neck
    (0.00, 1.55, 0.00),   # head
    (-0.20, 1.30, 0.00),  # shoulder_left
    (-0.26, 1.04, 0.00),  # elbow_left
    (-0.30, 0.80, 0.00),  # wrist_left
    (-0.31, 0.72, 0.00),  # hand_left
    (0.20, 1.30, 0.00),   # shoulder_right
    (0.26, 1.04, 0.00),   # elbow_right
    (0.30, 0.80, 0.00),   # wrist_right
    (0.31, 0.72, 0.00),   # hand_right
    (-0.10, 0.75, 0.00),  # hip_left
    (-0.11, 0.45, 0.00),  # knee_left
    (-0.12, 0.08, 0.00),  # ankle_left
    (-0.13, 0.02, 0.12),  # foot_left
    (0.10, 0.75, 0.00),   # hip_right
    (0.11, 0.45, 0.00),   # knee_right
    (0.12, 0.08, 0.00),   # ankle_right
    (0.13, 0.02, 0.12),   # foot_right
    (0.00, 1.30, 0.00),   # spine_shoulder
    (-0.32, 0.62, 0.00),  # handtip_left
    (-0.27, 0.70, 0.04),  # thumb_left
    (0.32, 0.62, 0.00),   # handtip_right
    (0.27, 0.70, 0.04),   # thumb_right
], dtype=np.float64)
BASE_POSE.setflags(write=False)


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected joint graph: V joints, bone list, center joint index."""

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int

    def adjacency(self) -> np.ndarray:
        """Binary V x V adjacency matrix (no self-loops)."""
        a = np.zeros((self.num_joints, self.num_joints), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a


@dataclass
class SequenceTensor:
    """One body's joint trajectory: data C x T x V, validity mask T x V.

    Invalid cells (occluded / absent / padding) hold exactly zero in every
    channel. Arrays are frozen after construction; derive modified copies.
    """

    data: np.ndarray
    valid: np.ndarray
    num_real_frames: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.data.ndim != 3:
            raise ValueError(f"data must be C x T x V, got shape {self.data.shape}")
        if self.valid.shape != self.data.shape[1:]:
            raise ValueError(
                f"valid mask {self.valid.shape} does not match data {self.data.shape}"
            )
        if not 0 <= self.num_real_frames <= self.data.shape[1]:
            raise ValueError("num_real_frames outside [0, T]")
        self.data.setflags(write=False)
        self.valid.setflags(write=False)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_joints(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabeledSample:
    sequence: SequenceTensor
    label: int
    sample_id: str


@dataclass
class Dataset:
    """A list of samples sharing one graph, frame count and class set."""

    samples: list[LabeledSample]
    num_classes: int
    graph: SkeletonGraph
    split: str = "train"

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic action generator."""

    num_classes: int = 4
    samples_per_class: int = 30
    frames: int = 16
    noise_std: float = 0.01
    seed: int = 0


@dataclass
class ValidationReport:
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def build_graph(num_joints: int, edges: Sequence[tuple[int, int]],
                center: int) -> SkeletonGraph:
    """Validate and build a SkeletonGraph.

    Rejects out-of-range endpoints, self-loops, duplicate bones (in either
    orientation) and disconnected graphs.
    """
    if num_joints < 1:
        raise InvalidEdge(f"num_joints must be positive, got {num_joints}")
    if not 0 <= center < num_joints:
        raise InvalidEdge(f"center joint {center} outside [0, {num_joints})")
    seen: set[tuple[int, int]] = set()
    normalized = []
    for i, j in edges:
        if not (0 <= i < num_joints and 0 <= j < num_joints):
            raise InvalidEdge(f"edge ({i},{j}) references a joint outside [0, {num_joints})")
        if i == j:
            raise InvalidEdge(f"self-loop at joint {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidEdge(f"duplicate edge ({i},{j})")
        seen.add(key)
        normalized.append((int(i), int(j)))
    graph = SkeletonGraph(num_joints=int(num_joints), edges=tuple(normalized),
                          center_joint=int(center))
    reached = _bfs_reachable(graph, 0)
    if len(reached) != num_joints:
        missing = sorted(set(range(num_joints)) - reached)
        raise DisconnectedGraph(f"joints unreachable from joint 0: {missing}")
    return graph


def _bfs_reachable(graph: SkeletonGraph, start: int) -> set[int]:
    adj: dict[int, list[int]] = {v: [] for v in range(graph.num_joints)}
    for i, j in graph.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    return seen


def ntu25_graph() -> SkeletonGraph:
    """The canonical 25-joint Kinect-v2 skeleton tree."""
    return build_graph(25, NTU_BONES, NTU_CENTER_JOINT)


def validate_sequence(seq: SequenceTensor) -> ValidationReport:
    """Check SequenceTensor invariants; findings are reported, not raised."""
    report = ValidationReport()
    if not np.isfinite(seq.data).all():
        bad = int(np.size(seq.data) - np.isfinite(seq.data).sum())
        report.findings.append(f"{bad} non-finite entries in data")
    invalid = ~seq.valid
    if invalid.any():
        leak = np.abs(seq.data[:, invalid]).sum()
        if leak != 0.0:
            report.findings.append(
                f"nonzero data under invalid mask (total abs {leak:g})"
            )
    if seq.num_real_frames < seq.num_frames:
        if seq.valid[seq.num_real_frames:, :].any():
            report.findings.append("padding frames marked valid")
    return report


# Per-class motion patterns: (primary joints, primary axis pair, secondary
# joints, secondary axis). Classes beyond the table are rejected.
_CLASS_MOTIONS: list[dict] = [
    {"name": "left_arm_swing", "primary": LEFT_ARM_JOINTS, "secondary": TORSO_JOINTS,
     "sec_axis": 0},
    {"name": "right_arm_swing", "primary": RIGHT_ARM_JOINTS, "secondary": TORSO_JOINTS,
     "sec_axis": 2},
    {"name": "leg_stepping", "primary": LEG_JOINTS, "secondary": LEFT_ARM_JOINTS + RIGHT_ARM_JOINTS,
     "sec_axis": 2},
    {"name": "torso_sway", "primary": TORSO_JOINTS, "secondary": LEG_JOINTS,
     "sec_axis": 0},
    {"name": "hand_shake", "primary": HAND_JOINTS, "secondary": TORSO_JOINTS,
     "sec_axis": 1},
    {"name": "left_leg_kick", "primary": _LEFT_LEG, "secondary": RIGHT_ARM_JOINTS,
     "sec_axis": 0},
    {"name": "right_leg_kick", "primary": _RIGHT_LEG, "secondary": LEFT_ARM_JOINTS,
     "sec_axis": 0},
    {"name": "head_nod", "primary": _HEAD_NECK, "secondary": HAND_JOINTS,
     "sec_axis": 1},
]

_PRIMARY_AMP = 0.25   # meters; dominates everything else
_SECONDARY_AMP = 0.05  # above noise, below primary
_PLACEMENT_RANGE = 0.4  # per-sample global offset, meters


def generate_synthetic_dataset(spec: SynthSpec, split: str = "train") -> Dataset:
    """Deterministic desk-scale action set on the 25-joint graph.

    Each class moves one primary body region with a large periodic swing and
    one other region with a small class-specific secondary motion, so part or
    cell occlusion removes most but not all class evidence. Per-sample phase,
    speed, amplitude and a global placement offset vary the clips (absolute
    positions alone identify nothing); Gaussian noise of spec.noise_std is
    added to every joint of every frame.
    """
    if spec.num_classes <= 0 or spec.samples_per_class <= 0 or spec.frames <= 0:
        raise InvalidSpec("counts must be positive")
    if spec.noise_std < 0:
        raise InvalidSpec("noise_std must be >= 0")
    if spec.num_classes > len(_CLASS_MOTIONS):
        raise InvalidSpec(
            f"at most {len(_CLASS_MOTIONS)} classes supported, got {spec.num_classes}"
        )
    graph = ntu25_graph()
    rng = np.random.default_rng(spec.seed)
    T, V = spec.frames, graph.num_joints
    t = np.arange(T, dtype=np.float64)
    samples: list[LabeledSample] = []
    for label in range(spec.num_classes):
        motion = _CLASS_MOTIONS[label]
        for i in range(spec.samples_per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            cycles = rng.uniform(1.5, 2.5)  # full swings over the clip
            amp = _PRIMARY_AMP * rng.uniform(0.7, 1.3)
            offset = rng.uniform(-_PLACEMENT_RANGE, _PLACEMENT_RANGE, size=3)
            wave = np.sin(2.0 * np.pi * cycles * t / T + phase)
            cowave = np.cos(2.0 * np.pi * cycles * t / T + phase)
            pose = np.repeat(BASE_POSE[None, :, :], T, axis=0)  # T x V x 3
            pose += offset[None, None, :]
            prim = list(motion["primary"])
            pose[:, prim, 0] += amp * wave[:, None]
            pose[:, prim, 2] += 0.6 * amp * cowave[:, None]
            sec = list(motion["secondary"])
            pose[:, sec, motion["sec_axis"]] += _SECONDARY_AMP * wave[:, None]
            pose += rng.normal(0.0, spec.noise_std, size=pose.shape)
            data = np.ascontiguousarray(pose.transpose(2, 0, 1), dtype=np.float32)
            seq = SequenceTensor(
                data=data,
                valid=np.ones((T, V), dtype=bool),
                num_real_frames=T,
            )
            samples.append(LabeledSample(
                sequence=seq, label=label,
                sample_id=f"synth-{motion['name']}-{i:03d}",
            ))
    return Dataset(samples=samples, num_classes=spec.num_classes,
                   graph=graph, split=split)
