import numpy as np, time, tempfile, os, json, sys
from ragcn.skeleton import SynthSpec, generate_synthetic_dataset
from ragcn.dataio import save_dataset
from ragcn.harness import TrainConfig, pretrain_baseline, finetune_multistream, evaluate
from ragcn.degrade import DegradationSpec

per_class, epochs, lr, decay, ft_epochs, ft_lr, ft_decay = (
    int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4]),
    int(sys.argv[5]), float(sys.argv[6]), int(sys.argv[7]))
tmp = tempfile.mkdtemp()
train = generate_synthetic_dataset(SynthSpec(samples_per_class=per_class, seed=100), split="train")
test = generate_synthetic_dataset(SynthSpec(samples_per_class=16, seed=200), split="eval")
train_path = os.path.join(tmp, "train.ds"); save_dataset(train, train_path)

gaps = []
for seed in (1, 2, 3):
    t0 = time.perf_counter()
    cfg = TrainConfig(dataset=train_path, seed=seed, epochs=epochs, batch_size=16,
                      lr_init=lr, lr_decay_every=decay)
    ck = os.path.join(tmp, f"b{seed}.ckpt")
    p1, hist = pretrain_baseline(cfg, out_checkpoint=ck)
    clean1 = evaluate(p1, test)
    cfg3 = TrainConfig(dataset=train_path, seed=seed, epochs=ft_epochs, batch_size=16,
                       streams=3, lr_init=ft_lr, lr_decay_every=ft_decay)
    p3, h3 = finetune_multistream(cfg3, ck)
    clean3 = evaluate(p3, test)
    spec = DegradationSpec(kind="random", p=0.4, seed=9)
    a1, a3 = evaluate(p1, test, spec), evaluate(p3, test, spec)
    dump = os.path.join(tmp, f"a{seed}.json")
    evaluate(p3, test, None, dump_activations=dump)
    act = json.load(open(dump))
    bigger = sum(1 for s in act["samples"]
                 if len(set().union(*[set(map(tuple, st)) for st in s["streams"]])) > len(set(map(tuple, s["streams"][0]))))
    frac = bigger / len(act["samples"])
    print(f"seed {seed}: clean {clean1:.0f}/{clean3:.0f} | p04 {a1:.1f}/{a3:.1f} gap {a3-a1:+.1f} | union {frac*100:.0f}% | {time.perf_counter()-t0:.0f}s", flush=True)
    gaps.append(a3 - a1)
print("MEAN GAP:", np.mean(gaps))
