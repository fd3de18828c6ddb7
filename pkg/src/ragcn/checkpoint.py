"""Model checkpoint container.

Layout (little-endian):
  8 bytes   magic "RAGCNCK1"
  8 bytes   u64 length of the JSON metadata in bytes
  JSON      hyperparameters, graph, class count, named blob directory
  blobs     float32 arrays in directory order: learnable parameters first,
            then BatchNorm running mean/var pairs

Save/load round-trips are bit-exact for float32 parameters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .backbone import HyperParams
from .errors import DataError
from .model import (
    RagcnParams, init_ragcn, named_parameters, named_running_stats,
)
from .skeleton import SkeletonGraph

MAGIC = b"RAGCNCK1"


def _graph_meta(graph: SkeletonGraph) -> dict:
    return {
        "num_joints": graph.num_joints,
        "edges": [list(e) for e in graph.edges],
        "center_joint": graph.center_joint,
    }


def save_checkpoint(params: RagcnParams, path: str | Path) -> None:
    named = list(named_parameters(params))
    stats = list(named_running_stats(params))
    meta = {
        "format_version": 1,
        "hyper": {
            "max_distance": params.hyper.max_distance,
            "temporal_window": params.hyper.temporal_window,
            "cam_threshold": params.hyper.cam_threshold,
            "streams": params.hyper.streams,
            "dropout": params.hyper.dropout,
            "alpha": params.hyper.alpha,
        },
        "num_classes": params.num_classes,
        "feature_mode": params.feature_mode,
        "input_bn": params.streams[0].input_bn is not None,
        "graph": _graph_meta(params.graph),
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in named],
        "running_stats": [{"name": n, "channels": int(s.mean.shape[0])}
                          for n, s in stats],
    }
    blob = json.dumps(meta, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, t in named:
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        for _, s in stats:
            f.write(np.ascontiguousarray(s.mean, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.var, dtype="<f4").tobytes())


def read_metadata(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16 or head[:8] != MAGIC:
            raise DataError(f"{path}: not a RAGCNCK1 checkpoint")
        (hlen,) = struct.unpack("<Q", head[8:16])
        blob = f.read(hlen)
    if len(blob) != hlen:
        raise DataError(f"{path}: truncated metadata")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: bad metadata JSON: {e}") from e


def load_checkpoint(path: str | Path) -> RagcnParams:
    """Rebuild a model from its checkpoint; validates every blob size."""
    path = Path(path)
    meta = read_metadata(path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    off = 16 + hlen
    try:
        hyper = HyperParams(**meta["hyper"])
        g = meta["graph"]
        graph = SkeletonGraph(
            num_joints=int(g["num_joints"]),
            edges=tuple((int(a), int(b)) for a, b in g["edges"]),
            center_joint=int(g["center_joint"]),
        )
        num_classes = int(meta["num_classes"])
        feature_mode = str(meta["feature_mode"])
        input_bn = bool(meta["input_bn"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed metadata: {e}") from e
    params = init_ragcn(graph, hyper, num_classes, np.random.default_rng(0),
                        feature_mode=feature_mode, input_bn=input_bn)
    named = dict(named_parameters(params))
    if [p["name"] for p in meta["params"]] != list(named.keys()):
        raise DataError(f"{path}: parameter directory does not match model")
    for entry in meta["params"]:
        tensor = named[entry["name"]]
        shape = tuple(entry["shape"])
        if tensor.data.shape != shape:
            raise DataError(
                f"{path}: {entry['name']} shape {shape} != {tensor.data.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if off + 4 * count > len(raw):
            raise DataError(f"{path}: truncated at blob {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        tensor.data = arr.reshape(shape).copy()
        tensor.grad = np.zeros_like(tensor.data)
        off += 4 * count
    stats = dict(named_running_stats(params))
    if [s["name"] for s in meta["running_stats"]] != list(stats.keys()):
        raise DataError(f"{path}: running-stats directory does not match model")
    for entry in meta["running_stats"]:
        s = stats[entry["name"]]
        c = int(entry["channels"])
        if s.mean.shape != (c,):
            raise DataError(f"{path}: stats {entry['name']} channel mismatch")
        if off + 8 * c > len(raw):
            raise DataError(f"{path}: truncated at stats {entry['name']}")
        s.mean = np.frombuffer(raw, dtype="<f4", count=c, offset=off).copy()
        off += 4 * c
        s.var = np.frombuffer(raw, dtype="<f4", count=c, offset=off).copy()
        off += 4 * c
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return params
