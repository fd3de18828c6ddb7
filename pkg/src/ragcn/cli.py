"""Command-line interface.

Verbs: gen-data, parse-ntu, degrade, gradcheck, pretrain, finetune, eval,
sweep, dump-activations. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import degrade as dg
from .checkpoint import load_checkpoint
from .dataio import load_dataset, save_dataset
from .errors import ConfigError, DataError, NumericalError, RagcnError
from .gradcheck import format_table, run_suite
from .harness import (
    PROTOCOLS, TrainConfig, evaluate, finetune_multistream, pretrain_baseline,
    robustness_sweep,
)
from .skeleton import (
    Dataset, LabeledSample, SequenceTensor, SynthSpec,
    generate_synthetic_dataset, ntu25_graph,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--data", help="training dataset (RAGCNDS1 container)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, dest="lr_init")
    p.add_argument("--lr-decay-every", type=int)
    p.add_argument("--max-distance", type=int)
    p.add_argument("--temporal-window", type=int)
    p.add_argument("--delta", type=float, dest="cam_threshold",
                   help="activation-map threshold")
    p.add_argument("--dropout", type=float)
    p.add_argument("--features", dest="feature_mode",
                   choices=("all", "raw", "relative", "displacement"))
    p.add_argument("--activation", dest="activation_mode",
                   choices=("threshold", "softmax-legacy", "none"))
    p.add_argument("--cam-class-rule", choices=("stream1", "per-stream"))
    p.add_argument("--no-input-bn", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint output path")


def _build_config(args, streams: int) -> TrainConfig:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        base = json.loads(path.read_text())
    cfg = TrainConfig.from_json(base) if base else TrainConfig()
    overrides = {
        "dataset": args.data, "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "lr_init": args.lr_init,
        "lr_decay_every": args.lr_decay_every,
        "max_distance": args.max_distance,
        "temporal_window": args.temporal_window,
        "cam_threshold": args.cam_threshold, "dropout": args.dropout,
        "feature_mode": args.feature_mode,
        "activation_mode": args.activation_mode,
        "cam_class_rule": args.cam_class_rule,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    if args.no_input_bn:
        fields["input_bn"] = False
    fields["streams"] = streams
    merged = {**cfg.to_json(), **fields}
    return TrainConfig.from_json(merged)


def cmd_gen_data(args) -> int:
    spec = SynthSpec(num_classes=args.classes, samples_per_class=args.per_class,
                     frames=args.frames, noise_std=args.noise_std,
                     seed=args.seed)
    dataset = generate_synthetic_dataset(spec, split=args.split)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples ({args.classes} classes, "
          f"T={args.frames}) to {args.out}")
    return 0


def cmd_parse_ntu(args) -> int:
    from .ntu import (SampleId, apply_blacklist, load_blacklist,
                      parse_skeleton_text, raw_to_samples)
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise DataError(f"not a directory: {in_dir}")
    files = sorted(in_dir.glob("*.skeleton"))
    if not files:
        raise DataError(f"no .skeleton files under {in_dir}")
    blacklist = []
    if args.blacklist:
        blacklist = load_blacklist(Path(args.blacklist).read_text())
    ids = [SampleId.from_filename(f.name) for f in files]
    keep = set(apply_blacklist(ids, blacklist))
    graph = ntu25_graph()
    samples: list[LabeledSample] = []
    max_action = 0
    for f, sid in zip(files, ids):
        if sid not in keep:
            continue
        if not sid.in_split(args.split, train=not args.eval_split):
            continue
        _, raw = parse_skeleton_text(f.read_text(), f.name)
        samples.extend(raw_to_samples(raw, sid, args.max_frames, graph))
        max_action = max(max_action, sid.action)
    if not samples:
        raise DataError("no samples selected (split/blacklist removed all)")
    num_classes = args.classes or max_action
    dataset = Dataset(samples=samples, num_classes=num_classes, graph=graph,
                      split="eval" if args.eval_split else "train")
    save_dataset(dataset, args.out)
    print(f"wrote {len(samples)} samples from {len(files)} files to {args.out}")
    return 0


def cmd_degrade(args) -> int:
    spec = dg.DegradationSpec.from_json(json.loads(Path(args.spec).read_text())
                                        if Path(args.spec).exists()
                                        else json.loads(args.spec))
    dataset = load_dataset(args.in_path)
    out_samples = []
    for i, s in enumerate(dataset.samples):
        from .harness import _derive_seed
        per_sample = dg.DegradationSpec.from_json(
            {**spec.to_json(), "seed": _derive_seed(spec.seed, i)})
        out_samples.append(LabeledSample(
            sequence=dg.apply(per_sample, s.sequence),
            label=s.label, sample_id=s.sample_id))
    out = Dataset(samples=out_samples, num_classes=dataset.num_classes,
                  graph=dataset.graph, split=dataset.split)
    save_dataset(out, args.out)
    print(f"degraded {len(out_samples)} samples ({spec.kind}) -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} checks failed")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return 0


def cmd_pretrain(args) -> int:
    config = _build_config(args, streams=1)
    _, history = pretrain_baseline(config, out_checkpoint=args.out)
    last = history[-1]
    print(f"pretrained baseline: {len(history)} epochs, final loss "
          f"{last.loss:.4f}, train accuracy {last.train_accuracy:.1f}% "
          f"-> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    config = _build_config(args, streams=args.streams)
    baseline = None if args.scratch else args.from_ckpt
    if baseline is None and not args.scratch:
        raise ConfigError("finetune needs --from CHECKPOINT (or --scratch)")
    _, history = finetune_multistream(config, baseline, out_checkpoint=args.out)
    last = history[-1]
    print(f"finetuned {args.streams}-stream model: final loss {last.loss:.4f},"
          f" train accuracy {last.train_accuracy:.1f}% -> {args.out}")
    return 0


def _degradation_from_args(args) -> dg.DegradationSpec | None:
    if not args.degrade:
        return None
    obj = json.loads(Path(args.degrade).read_text()
                     if Path(args.degrade).exists() else args.degrade)
    return dg.DegradationSpec.from_json(obj)


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    spec = _degradation_from_args(args)
    acc = evaluate(params, dataset, spec,
                   dump_activations=args.dump_activations,
                   cam_class_rule=args.cam_class_rule or "stream1",
                   activation_mode=args.activation or "threshold")
    kind = spec.kind if spec else "none"
    print(f"top-1 accuracy ({kind}): {acc:.2f}%")
    return 0


def cmd_sweep(args) -> int:
    models = []
    for item in args.models:
        name, _, path = item.partition("=")
        if not path:
            name, path = Path(item).stem, item
        models.append((name, load_checkpoint(path)))
    dataset = load_dataset(args.data)
    results = robustness_sweep(models, args.protocol, dataset, seed=args.seed)
    for result in results:
        out = Path(args.out)
        if result.sigma is not None and len(results) > 1:
            out = out.with_name(f"{out.stem}-sigma{result.sigma}{out.suffix}")
        result.write_csv(out)
        print(f"wrote {result.protocol} sweep ({len(result.rows)} models) "
              f"to {out}")
    return 0


def cmd_dump_activations(args) -> int:
    params = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    acc = evaluate(params, dataset, None, dump_activations=args.out,
                   cam_class_rule=args.cam_class_rule or "stream1")
    print(f"dumped activated joints for {len(dataset)} samples to {args.out} "
          f"(clean accuracy {acc:.2f}%)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ragcn",
        description="Multi-stream spatio-temporal GCN for occlusion-robust "
                    "skeleton action recognition",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=24)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--noise-std", type=float, default=0.01)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--split", default="train", choices=("train", "eval"))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    n = sub.add_parser("parse-ntu", help="parse .skeleton files to a container")
    n.add_argument("--in", dest="in_dir", required=True)
    n.add_argument("--blacklist")
    n.add_argument("--split", required=True,
                   choices=("cs", "cv", "csub", "cset"))
    n.add_argument("--eval-split", action="store_true",
                   help="select the evaluation side of the split")
    n.add_argument("--max-frames", type=int, default=300)
    n.add_argument("--classes", type=int)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_parse_ntu)

    d = sub.add_parser("degrade", help="apply a degradation to a dataset")
    d.add_argument("--spec", required=True,
                   help="JSON file or literal JSON DegradationSpec")
    d.add_argument("--in", dest="in_path", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_degrade)

    c = sub.add_parser("gradcheck", help="finite-difference verification suite")
    c.add_argument("--seed", type=int, default=1234)
    c.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("pretrain", help="train the one-stream baseline")
    _add_train_flags(t)
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="finetune a multi-stream model")
    _add_train_flags(f)
    f.add_argument("--streams", type=int, default=3)
    f.add_argument("--from", dest="from_ckpt", help="baseline checkpoint")
    f.add_argument("--scratch", action="store_true",
                   help="random init instead of a baseline (ablation)")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--degrade", help="JSON file or literal DegradationSpec")
    e.add_argument("--dump-activations", help="write activated joints JSON")
    e.add_argument("--cam-class-rule", choices=("stream1", "per-stream"))
    e.add_argument("--activation",
                   choices=("threshold", "softmax-legacy", "none"))
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="robustness sweep over a protocol")
    s.add_argument("--protocol", required=True, choices=sorted(PROTOCOLS))
    s.add_argument("--models", nargs="+", required=True,
                   metavar="NAME=CKPT", help="baseline first")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV output path")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("dump-activations",
                       help="export per-sample activated joint sets")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--cam-class-rule", choices=("stream1", "per-stream"))
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_dump_activations)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except RagcnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
