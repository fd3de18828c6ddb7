"""Two-phase training protocol, evaluation and robustness sweeps.

Phase 1 pretrains a one-stream baseline on clean data; phase 2 initializes
every stream of a multi-stream model from that baseline and finetunes with
the joint loss (fused cross-entropy plus one term per stream). Degradations
are only ever applied at evaluation time; configs carrying a degradation are
rejected by both training entry points.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import degrade as dg
from .autodiff import OptimState, Tape
from .backbone import (
    HyperParams,
    named_parameters as backbone_named_parameters,
    named_running_stats as backbone_named_running_stats,
)
from .checkpoint import load_checkpoint, read_metadata, save_checkpoint
from .dataio import load_dataset
from .errors import (
    CheckpointMismatch, ConfigError, DatasetMissing, NumericalError,
)
from .model import (
    RagcnParams, forward_batch, init_ragcn, named_parameters, total_loss,
)
from .preprocess import FEATURE_MODES, preprocess_arrays
from .skeleton import Dataset


@dataclass
class TrainConfig:
    """Everything a training run needs; JSON-serializable, CLI-overridable."""

    dataset: str = ""
    seed: int = 0
    streams: int = 1
    epochs: int = 30
    batch_size: int = 16
    lr_init: float = 0.05
    lr_decay_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_distance: int = 2
    temporal_window: int = 5
    cam_threshold: float = 0.3
    dropout: float = 0.5
    alpha: float = 1e-4
    feature_mode: str = "all"
    activation_mode: str = "threshold"
    cam_class_rule: str = "stream1"
    input_bn: bool = True
    pretrain_checkpoint: Optional[str] = None
    degradation: Optional[dict] = None  # must stay None: training is clean

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")

    def hyper(self) -> HyperParams:
        return HyperParams(
            max_distance=self.max_distance,
            temporal_window=self.temporal_window,
            cam_threshold=self.cam_threshold,
            streams=self.streams,
            dropout=self.dropout,
            alpha=self.alpha,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**obj)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_accuracy: float


@dataclass
class SweepResult:
    """One protocol table: per-model accuracies over the parameter grid."""

    protocol: str
    parameter: str
    values: list
    rows: list[tuple[str, list[float]]]
    sigma: Optional[float] = None

    def difference(self) -> list[float]:
        """Last model minus first model, column-wise (multi-stream gain)."""
        first, last = self.rows[0][1], self.rows[-1][1]
        return [round(b - a, 4) for a, b in zip(first, last)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header = [self.parameter] + [str(v) for v in self.values]
            if self.sigma is not None:
                header[0] = f"{self.parameter} (sigma={self.sigma})"
            w.writerow(header)
            for name, accs in self.rows:
                w.writerow([name] + [f"{a:.2f}" for a in accs])
            w.writerow(["difference"] + [f"{d:.2f}" for d in self.difference()])


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Step decay: divide the initial rate by 10 every `lr_decay_every`."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return config.lr_init * 10.0 ** (-(epoch // config.lr_decay_every))


def _require_clean(config: TrainConfig) -> None:
    if config.degradation is not None:
        raise ConfigError(
            "training runs on standard skeletons only; degradations are "
            "evaluation-time transforms"
        )


def _dataset_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.stack([s.sequence.data for s in dataset.samples])
    valid = np.stack([s.sequence.valid for s in dataset.samples])
    labels = dataset.labels()
    return data, valid, labels


def _load_dataset_checked(path: str) -> Dataset:
    if not path or not Path(path).exists():
        raise DatasetMissing(f"dataset path not found: {path!r}")
    return load_dataset(path)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _train(params: RagcnParams, dataset: Dataset, config: TrainConfig,
           ) -> list[EpochStats]:
    """Shared training loop; returns per-epoch loss/accuracy history."""
    data, valid, labels = _dataset_arrays(dataset)
    x_prep = preprocess_arrays(data, valid, dataset.graph.center_joint,
                               config.feature_mode)
    n = len(dataset)
    seq = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = [np.random.default_rng(s) for s in seq.spawn(2)]
    plist = [t for _, t in named_parameters(params)]
    opt = OptimState(lr=config.lr_init, momentum=config.momentum,
                     weight_decay=config.weight_decay)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        opt.lr = lr_schedule(epoch, config)
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            ad.zero_grad(plist)
            with Tape() as tape:
                fused, stream_logits, _ = forward_batch(
                    x_prep[idx], params, "train", labels[idx], dropout_rng,
                    config.cam_class_rule, config.activation_mode)
                loss = total_loss(fused, stream_logits, labels[idx])
                ad.backward(tape, loss)
            ad.sgd_step(plist, opt)
            epoch_loss += float(loss.data) * len(idx)
            correct += int((fused.data.argmax(axis=1) == labels[idx]).sum())
        mean_loss = epoch_loss / n
        if not np.isfinite(mean_loss):
            raise NumericalError(f"loss diverged at epoch {epoch}")
        history.append(EpochStats(epoch=epoch, lr=opt.lr, loss=mean_loss,
                                  train_accuracy=100.0 * correct / n))
    return history


def _write_run_artifacts(params: RagcnParams, config: TrainConfig,
                         history: list[EpochStats], out_checkpoint: str,
                         phase: str) -> None:
    save_checkpoint(params, out_checkpoint)
    log_path = Path(out_checkpoint).with_suffix(".log.csv")
    with open(log_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "loss", "train_accuracy"])
        for row in history:
            w.writerow([row.epoch, f"{row.lr:.6g}", f"{row.loss:.6f}",
                        f"{row.train_accuracy:.2f}"])
    manifest = {
        "phase": phase,
        "config": config.to_json(),
        "dataset_sha256": file_sha256(config.dataset),
        "final_loss": history[-1].loss,
        "final_train_accuracy": history[-1].train_accuracy,
    }
    with open(Path(out_checkpoint).with_suffix(".manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def pretrain_baseline(config: TrainConfig, out_checkpoint: Optional[str] = None
                      ) -> tuple[RagcnParams, list[EpochStats]]:
    """Train the one-stream baseline on clean data."""
    _require_clean(config)
    if config.streams != 1:
        raise ConfigError("the baseline is a one-stream model; set streams=1")
    dataset = _load_dataset_checked(config.dataset)
    rng = np.random.default_rng(config.seed)
    params = init_ragcn(dataset.graph, config.hyper(), dataset.num_classes,
                        rng, feature_mode=config.feature_mode,
                        input_bn=config.input_bn)
    history = _train(params, dataset, config)
    if out_checkpoint:
        _write_run_artifacts(params, config, history, out_checkpoint,
                             "pretrain")
    return params, history


def _check_compatible(meta: dict, config: TrainConfig, dataset: Dataset) -> None:
    g = meta["graph"]
    if (g["num_joints"] != dataset.graph.num_joints
            or g["center_joint"] != dataset.graph.center_joint
            or [tuple(e) for e in g["edges"]] != list(dataset.graph.edges)):
        raise CheckpointMismatch("checkpoint graph differs from dataset graph")
    if meta["num_classes"] != dataset.num_classes:
        raise CheckpointMismatch(
            f"checkpoint has {meta['num_classes']} classes, dataset "
            f"{dataset.num_classes}"
        )
    h = meta["hyper"]
    if (h["max_distance"] != config.max_distance
            or h["temporal_window"] != config.temporal_window):
        raise CheckpointMismatch("checkpoint hyperparameters differ from config")
    if meta["feature_mode"] != config.feature_mode:
        raise CheckpointMismatch("checkpoint feature mode differs from config")


def finetune_multistream(config: TrainConfig,
                         baseline_checkpoint: Optional[str] = None,
                         out_checkpoint: Optional[str] = None
                         ) -> tuple[RagcnParams, list[EpochStats]]:
    """Finetune an S-stream model, every stream starting from the baseline.

    `baseline_checkpoint=None` trains from random init (the "no pretraining"
    ablation); the fusion classifier is always freshly initialized.
    """
    _require_clean(config)
    if config.streams < 2:
        raise ConfigError("finetuning needs streams >= 2")
    dataset = _load_dataset_checked(config.dataset)
    rng = np.random.default_rng(config.seed)
    params = init_ragcn(dataset.graph, config.hyper(), dataset.num_classes,
                        rng, feature_mode=config.feature_mode,
                        input_bn=config.input_bn)
    if baseline_checkpoint is not None:
        meta = read_metadata(baseline_checkpoint)
        _check_compatible(meta, config, dataset)
        base = load_checkpoint(baseline_checkpoint)
        base_named = dict(backbone_named_parameters(base.streams[0]))
        base_stats = dict(backbone_named_running_stats(base.streams[0]))
        for stream_params in params.streams:
            for name, t in backbone_named_parameters(stream_params):
                t.data = base_named[name].data.copy()
            for name, s in backbone_named_running_stats(stream_params):
                src = base_stats[name]
                s.mean = src.mean.copy()
                s.var = src.var.copy()
    history = _train(params, dataset, config)
    if out_checkpoint:
        _write_run_artifacts(params, config, history, out_checkpoint,
                             "finetune")
    return params, history


def _derive_seed(base: int, index: int) -> int:
    """Per-sample degradation seed (splitmix64 of base and index)."""
    mask = (1 << 64) - 1
    z = (base + 0x9E3779B97F4A7C15 * (index + 1)) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return (z ^ (z >> 31)) & mask


def evaluate(params: RagcnParams, dataset: Dataset,
             degradation: Optional[dg.DegradationSpec] = None,
             batch_size: int = 64, dump_activations: Optional[str] = None,
             cam_class_rule: str = "stream1",
             activation_mode: str = "threshold") -> float:
    """Top-1 accuracy (%) with an optional test-time degradation.

    Each sample gets its own seed derived from the spec seed and the sample
    index, so results are reproducible and samples are degraded
    independently.
    """
    sequences = []
    for i, sample in enumerate(dataset.samples):
        seq = sample.sequence
        if degradation is not None and degradation.kind != "none":
            per_sample = replace(degradation,
                                 seed=_derive_seed(degradation.seed, i))
            seq = dg.apply(per_sample, seq)
        sequences.append(seq)
    data = np.stack([s.data for s in sequences])
    valid = np.stack([s.valid for s in sequences])
    labels = dataset.labels()
    x_prep = preprocess_arrays(data, valid, dataset.graph.center_joint,
                               params.feature_mode)
    correct = 0
    dump_rows = []
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        fused, _, state = forward_batch(
            x_prep[start:stop], params, "eval", None, None,
            cam_class_rule, activation_mode)
        ad.assert_finite(fused.data, "in fused logits")
        preds = fused.data.argmax(axis=1)
        correct += int((preds == labels[start:stop]).sum())
        if dump_activations:
            for j in range(stop - start):
                streams = []
                for s in range(len(params.streams)):
                    active = state.maps[s][j] & state.masks[s][j]
                    ts, vs = np.nonzero(active)
                    streams.append([[int(a), int(b)] for a, b in zip(ts, vs)])
                dump_rows.append({
                    "id": dataset.samples[start + j].sample_id,
                    "label": int(labels[start + j]),
                    "predicted": int(preds[j]),
                    "streams": streams,
                })
    if dump_activations:
        payload = {"delta": params.hyper.cam_threshold, "samples": dump_rows}
        with open(dump_activations, "w") as f:
            json.dump(payload, f)
    return 100.0 * correct / len(dataset)


# Parameter grids of the robustness protocols; the leading 0/None column is
# the clean reference.
PROTOCOLS: dict[str, tuple[str, list]] = {
    "frame": ("occluded frames", [0, 10, 20, 30, 40, 50]),
    "part": ("occluded part", [None, 1, 2, 3, 4, 5]),
    "block": ("block range", [None, 1, 2, 3, 4, 5]),
    "random": ("occlusion probability", [0.0, 0.2, 0.3, 0.4, 0.5, 0.6]),
    "jitter": ("jitter probability", [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]),
}

JITTER_SIGMAS = (0.1, 0.05)


def _cell_spec(protocol: str, value, seed: int,
               sigma: Optional[float] = None) -> dg.DegradationSpec:
    if value in (None, 0, 0.0):
        return dg.DegradationSpec(kind="none", seed=seed)
    if protocol == "frame":
        return dg.DegradationSpec(kind="frame", length=int(value), seed=seed)
    if protocol == "part":
        return dg.DegradationSpec(kind="part", part=int(value), seed=seed)
    if protocol == "block":
        return dg.DegradationSpec(kind="block", range_id=int(value), seed=seed)
    if protocol == "random":
        return dg.DegradationSpec(kind="random", p=float(value), seed=seed)
    if protocol == "jitter":
        return dg.DegradationSpec(kind="jitter", p=float(value),
                                  sigma=float(sigma), seed=seed)
    raise ConfigError(f"unknown protocol {protocol!r}")


def robustness_sweep(models: Sequence[tuple[str, RagcnParams]], protocol: str,
                     dataset: Dataset, seed: int = 0) -> list[SweepResult]:
    """Evaluate every model on every protocol cell.

    Returns one table, or two for the jitter protocol (one per noise level).
    The difference row of each table is the last model minus the first, so
    order models baseline-first.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(
            f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}"
        )
    if not models:
        raise ConfigError("need at least one model")
    parameter, values = PROTOCOLS[protocol]
    sigmas: tuple[Optional[float], ...] = (
        JITTER_SIGMAS if protocol == "jitter" else (None,))
    results = []
    for sigma in sigmas:
        rows = []
        for name, params in models:
            accs = []
            for value in values:
                spec = _cell_spec(protocol, value, seed, sigma)
                accs.append(evaluate(params, dataset, spec))
            rows.append((name, accs))
        results.append(SweepResult(protocol=protocol, parameter=parameter,
                                   values=values, rows=rows, sigma=sigma))
    return results
