"""Parser for Kinect-v2 `.skeleton` recordings and conversion to samples.

File layout (dataset-release convention): a frame-count line; per frame a
body-count line; per body one metadata line (body id plus 9 tracking reals),
a joint-count line, then one line of 12 reals per joint (x y z, depth x/y,
color x/y, orientation w/x/y/z, tracking state). Filenames follow
"SsssCcccPpppRrrrAaaa" (setup, camera, performer, replication, action).

Multi-body recordings become one sample per tracked body; recordings with
more than two bodies keep the two with the highest motion energy.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadFilename, CountMismatch, EmptySequence, MalformedHeader, TruncatedFile,
)
from .skeleton import LabeledSample, SequenceTensor, SkeletonGraph

JOINTS_PER_BODY = 25
VALUES_PER_JOINT = 12
BODY_META_VALUES = 9

# NTU 60 cross-subject training performers (dataset-release convention).
CS_TRAIN_PERFORMERS = frozenset({
    1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38,
})
# NTU 120 cross-subject adds these to the NTU 60 set.
CSUB_TRAIN_PERFORMERS = CS_TRAIN_PERFORMERS | frozenset({
    45, 46, 47, 49, 50, 52, 53, 54, 55, 56, 57, 58, 59, 70, 74, 78, 80, 81,
    82, 83, 84, 85, 86, 89, 91, 92, 93, 94, 95, 97, 98, 100, 103,
})
# Cross-view trains on cameras 2 and 3; cross-setup on even setup ids.
CV_TRAIN_CAMERAS = frozenset({2, 3})

_STEM_RE = re.compile(
    r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})$"
)


@dataclass(frozen=True)
class SampleId:
    """Decoded SsssCcccPpppRrrrAaaa recording identifier."""

    setup: int
    camera: int
    performer: int
    replication: int
    action: int

    @classmethod
    def from_filename(cls, filename: str) -> "SampleId":
        stem = filename
        if "/" in stem:
            stem = stem.rsplit("/", 1)[1]
        if "." in stem:
            stem = stem.split(".", 1)[0]
        m = _STEM_RE.match(stem)
        if not m:
            raise BadFilename(
                f"{filename!r} does not match SsssCcccPpppRrrrAaaa"
            )
        fields = [int(g) for g in m.groups()]
        if any(f <= 0 for f in fields):
            raise BadFilename(f"{filename!r} has a zero field")
        return cls(*fields)

    def stem(self) -> str:
        return (f"S{self.setup:03d}C{self.camera:03d}P{self.performer:03d}"
                f"R{self.replication:03d}A{self.action:03d}")

    def in_split(self, split: str, train: bool) -> bool:
        """Membership helper for the cs / cv / csub / cset benchmarks."""
        if split == "cs":
            member = self.performer in CS_TRAIN_PERFORMERS
        elif split == "csub":
            member = self.performer in CSUB_TRAIN_PERFORMERS
        elif split == "cv":
            member = self.camera in CV_TRAIN_CAMERAS
        elif split == "cset":
            member = self.setup % 2 == 0
        else:
            raise ValueError(f"unknown split {split!r}")
        return member if train else not member


@dataclass(frozen=True)
class NtuJoint:
    values: tuple[float, ...]  # 12 reals, x/y/z first

    @property
    def xyz(self) -> tuple[float, float, float]:
        return self.values[0], self.values[1], self.values[2]


@dataclass(frozen=True)
class NtuBody:
    body_id: str
    meta: tuple[float, ...]    # 9 tracking-state reals
    joints: tuple[NtuJoint, ...]


@dataclass(frozen=True)
class RawNtuSequence:
    frames: tuple[tuple[NtuBody, ...], ...]


class _LineReader:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        self._pos = 0

    def next_line(self, what: str) -> str:
        while self._pos < len(self._lines):
            line = self._lines[self._pos].strip()
            self._pos += 1
            if line:
                return line
        raise TruncatedFile(f"file ended while reading {what}")

    def exhausted(self) -> bool:
        return all(not l.strip() for l in self._lines[self._pos:])


def _parse_int(token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError as e:
        raise MalformedHeader(f"{what}: {token!r} is not an integer") from e


def _parse_floats(line: str, count: int, what: str) -> tuple[float, ...]:
    parts = line.split()
    if len(parts) != count:
        raise CountMismatch(f"{what}: expected {count} values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise CountMismatch(f"{what}: non-numeric value") from e


def parse_skeleton_text(text: str, filename: str
                        ) -> tuple[SampleId, RawNtuSequence]:
    """Parse one `.skeleton` file; every malformation raises a typed error."""
    sample_id = SampleId.from_filename(filename)
    reader = _LineReader(text)
    num_frames = _parse_int(reader.next_line("frame count"), "frame count")
    if num_frames < 0:
        raise MalformedHeader(f"negative frame count {num_frames}")
    frames = []
    for f in range(num_frames):
        num_bodies = _parse_int(
            reader.next_line(f"body count of frame {f}"),
            f"body count of frame {f}")
        if num_bodies < 0:
            raise MalformedHeader(f"negative body count in frame {f}")
        bodies = []
        for b in range(num_bodies):
            meta_line = reader.next_line(f"body {b} of frame {f}").split()
            if len(meta_line) != 1 + BODY_META_VALUES:
                raise CountMismatch(
                    f"body line of frame {f}: expected id + "
                    f"{BODY_META_VALUES} values, got {len(meta_line)} tokens"
                )
            body_id = meta_line[0]
            try:
                meta = tuple(float(tok) for tok in meta_line[1:])
            except ValueError as e:
                raise CountMismatch(
                    f"body line of frame {f}: non-numeric metadata") from e
            joint_count = _parse_int(
                reader.next_line(f"joint count of frame {f}"),
                f"joint count of frame {f}")
            if joint_count != JOINTS_PER_BODY:
                raise CountMismatch(
                    f"frame {f} declares {joint_count} joints, "
                    f"expected {JOINTS_PER_BODY}"
                )
            joints = []
            for j in range(joint_count):
                values = _parse_floats(
                    reader.next_line(f"joint {j} of frame {f}"),
                    VALUES_PER_JOINT, f"joint {j} of frame {f}")
                joints.append(NtuJoint(values=values))
            bodies.append(NtuBody(body_id=body_id, meta=meta,
                                  joints=tuple(joints)))
        frames.append(tuple(bodies))
    if not reader.exhausted():
        raise CountMismatch("trailing content after the declared frames")
    return sample_id, RawNtuSequence(frames=tuple(frames))


def format_skeleton_text(raw: RawNtuSequence) -> str:
    """Serialize back to the text layout; floats use repr so that
    parse(format(parse(x))) == parse(x) exactly."""
    lines = [str(len(raw.frames))]
    for bodies in raw.frames:
        lines.append(str(len(bodies)))
        for body in bodies:
            lines.append(" ".join([body.body_id]
                                  + [repr(v) for v in body.meta]))
            lines.append(str(len(body.joints)))
            for joint in body.joints:
                lines.append(" ".join(repr(v) for v in joint.values))
    return "\n".join(lines) + "\n"


def apply_blacklist(ids: Sequence[SampleId],
                    blacklist: Sequence[SampleId]) -> list[SampleId]:
    """Drop blacklisted recordings, preserving order."""
    bad = set(blacklist)
    return [i for i in ids if i not in bad]


def load_blacklist(text: str) -> list[SampleId]:
    """One filename stem per line; blank lines and '#' comments ignored."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(SampleId.from_filename(line))
    return out


def _motion_energy(track: dict[int, np.ndarray]) -> float:
    """Summed squared displacement between consecutive tracked frames."""
    frames = sorted(track)
    energy = 0.0
    for a, b in zip(frames, frames[1:]):
        if b == a + 1:
            energy += float(((track[b] - track[a]) ** 2).sum())
    return energy


def raw_to_samples(raw: RawNtuSequence, sample_id: SampleId, max_frames: int,
                   graph: SkeletonGraph) -> list[LabeledSample]:
    """One LabeledSample per tracked body (at most two, by motion energy).

    Channels are the x/y/z coordinates; frames where a body is missing are
    invalid and zero; frames beyond max_frames are dropped; shorter
    recordings are zero-padded. Label = action - 1.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    if graph.num_joints != JOINTS_PER_BODY:
        raise ValueError("NTU recordings carry 25 joints")
    tracks: dict[str, dict[int, np.ndarray]] = {}
    for t, bodies in enumerate(raw.frames):
        if t >= max_frames:
            break
        for body in bodies:
            xyz = np.array([j.xyz for j in body.joints], dtype=np.float32)
            tracks.setdefault(body.body_id, {})[t] = xyz.T  # 3 x V
    if not tracks:
        raise EmptySequence(f"{sample_id.stem()}: no bodies in any frame")
    ranked = sorted(tracks.items(),
                    key=lambda kv: (-_motion_energy(kv[1]), kv[0]))
    kept = ranked[:2]
    num_real = min(len(raw.frames), max_frames)
    samples = []
    for body_index, (body_id, track) in enumerate(kept):
        data = np.zeros((3, max_frames, JOINTS_PER_BODY), dtype=np.float32)
        valid = np.zeros((max_frames, JOINTS_PER_BODY), dtype=bool)
        for t, xyz in track.items():
            data[:, t, :] = xyz
            valid[t, :] = True
        seq = SequenceTensor(data=data, valid=valid, num_real_frames=num_real)
        samples.append(LabeledSample(
            sequence=seq,
            label=sample_id.action - 1,
            sample_id=f"{sample_id.stem()}:body{body_index}",
        ))
    return samples
