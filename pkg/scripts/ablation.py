"""Train every ablation variant on the synthetic blobs and print a results table.

    python scripts/ablation.py --seeds 0 1 2 --epochs 30
"""

import argparse
import time

import numpy as np

from ordnet.harness import EvalConfig, TrainConfig, evaluate, evaluate_multiscale, synth_dataset, train
from ordnet.network import VARIANTS, OrdNetConfig

ORDER = ["fcn", "basic_sa", "sa_mr", "sa_rlr", "ordnet"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--data-seed", type=int, default=3)
    ap.add_argument("--holdout", type=int, default=20, help="extra images for a held-out split")
    ap.add_argument("--variants", nargs="+", default=ORDER, choices=sorted(VARIANTS))
    args = ap.parse_args()

    data = synth_dataset(args.data_seed, args.n + args.holdout)
    train_set, test_set = data[:args.n], data[args.n:]
    print(f"{'variant':<10} {'train mIoU':>11} {'test mIoU':>10} {'test MS':>8} {'pixAcc':>7} {'sec':>5}")
    for name in args.variants:
        rows = []
        t0 = time.perf_counter()
        for seed in args.seeds:
            cfg = TrainConfig(base_lr=args.lr, epochs=args.epochs, seed=seed,
                              model=OrdNetConfig().variant(name))
            model = train(cfg, train_set).model
            tr = evaluate(model, train_set, 4)
            te = evaluate(model, test_set, 4) if test_set else tr
            ms = evaluate_multiscale(model, test_set, EvalConfig()) if test_set else tr
            rows.append((tr["miou"], te["miou"], ms["miou"], te["pix_acc"]))
        m = np.mean(rows, axis=0)
        print(f"{name:<10} {m[0]:>11.4f} {m[1]:>10.4f} {m[2]:>8.4f} {m[3]:>7.4f} "
              f"{time.perf_counter() - t0:>5.0f}")


if __name__ == "__main__":
    main()
