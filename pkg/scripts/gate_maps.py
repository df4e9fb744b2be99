"""Train a small ORDNet briefly and dump RLR gate maps for a few images as OTNS1 files."""

import argparse
from pathlib import Path

import numpy as np

from ordnet import otns
from ordnet.harness import TrainConfig, synth_dataset, train
from ordnet.rlr_branch import RLRConfig, reweighed_long_range
from ordnet.tensor import Tensor, no_grad


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="gate_maps")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--images", type=int, default=4)
    args = ap.parse_args()

    data = synth_dataset(3, 50)
    model = train(TrainConfig(epochs=args.epochs), data).model
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (image, label) in enumerate(data[:args.images]):
        with no_grad():
            x = model.features(Tensor(image))
            for direction in ("attention_out", "attention_in"):
                _, cmap = reweighed_long_range(x, model.lr_attn, RLRConfig(direction))
                otns.save(out / f"img{i}_{direction}.otns", cmap.gate.data)
                with np.printoptions(precision=3, suppress=True):
                    print(f"image {i} {direction} gate:\n{cmap.gate.data}")
        otns.save(out / f"img{i}_label.otns", label)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
