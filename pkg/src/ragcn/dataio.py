"""Single-file dataset container.

Layout (all little-endian):
  8 bytes   magic "RAGCNDS1"
  8 bytes   u64 length of the JSON header in bytes
  JSON      graph, class count, tensor dims, split tag, per-sample metadata
  blobs     per sample: C*T*V float32 (C-order), then T*V validity bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .skeleton import Dataset, LabeledSample, SequenceTensor, SkeletonGraph

MAGIC = b"RAGCNDS1"


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset to its single-file container format."""
    if not dataset.samples:
        raise DataError("refusing to write an empty dataset")
    first = dataset.samples[0].sequence
    c, t, v = first.data.shape
    for s in dataset.samples:
        if s.sequence.data.shape != (c, t, v):
            raise DataError(
                f"sample {s.sample_id} shape {s.sequence.data.shape} != {(c, t, v)}"
            )
    header = {
        "format_version": 1,
        "graph": {
            "num_joints": dataset.graph.num_joints,
            "edges": [list(e) for e in dataset.graph.edges],
            "center_joint": dataset.graph.center_joint,
        },
        "num_classes": dataset.num_classes,
        "channels": c,
        "frames": t,
        "joints": v,
        "split": dataset.split,
        "samples": [
            {"id": s.sample_id, "label": s.label,
             "num_real_frames": s.sequence.num_real_frames}
            for s in dataset.samples
        ],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for s in dataset.samples:
            f.write(np.ascontiguousarray(
                s.sequence.data, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(
                s.sequence.valid, dtype=np.uint8).tobytes())


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset container; raises DataError on any structural defect."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path}: not a RAGCNDS1 container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: bad JSON header: {e}") from e
    try:
        g = header["graph"]
        graph = SkeletonGraph(
            num_joints=int(g["num_joints"]),
            edges=tuple((int(a), int(b)) for a, b in g["edges"]),
            center_joint=int(g["center_joint"]),
        )
        c, t, v = int(header["channels"]), int(header["frames"]), int(header["joints"])
        metas = header["samples"]
        num_classes = int(header["num_classes"])
        split = str(header.get("split", "train"))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed header: {e}") from e
    sample_bytes = c * t * v * 4 + t * v
    expected = 16 + hlen + sample_bytes * len(metas)
    if len(raw) != expected:
        raise DataError(
            f"{path}: payload is {len(raw)} bytes, expected {expected}"
        )
    samples: list[LabeledSample] = []
    off = 16 + hlen
    for meta in metas:
        data = np.frombuffer(raw, dtype="<f4", count=c * t * v, offset=off)
        off += c * t * v * 4
        mask = np.frombuffer(raw, dtype=np.uint8, count=t * v, offset=off)
        off += t * v
        seq = SequenceTensor(
            data=data.reshape(c, t, v).copy(),
            valid=mask.reshape(t, v).astype(bool),
            num_real_frames=int(meta["num_real_frames"]),
        )
        samples.append(LabeledSample(
            sequence=seq, label=int(meta["label"]), sample_id=str(meta["id"]),
        ))
    return Dataset(samples=samples, num_classes=num_classes, graph=graph,
                   split=split)
