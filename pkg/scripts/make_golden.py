"""Regenerate the golden fixtures under tests/golden/.

Only rerun this when a change to initialisation or the generator is
intentional; the tests compare against the committed files.
"""

import json
from pathlib import Path

import numpy as np

from ordnet import otns
from ordnet.harness import synth_dataset
from ordnet.network import OrdNet, OrdNetConfig
from ordnet.tensor import Tensor, no_grad

OUT = Path(__file__).resolve().parent.parent / "tests" / "golden"


def ramp_image(size=8):
    return np.arange(size * size * 3, dtype=np.float64).reshape(size, size, 3) / (size * size * 3)


def head_input(c):
    return np.random.default_rng(1).normal(size=(4, 4, c))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    model = OrdNet(OrdNetConfig(), seed=1)
    with no_grad():
        otns.save(OUT / "backbone_seed1_ramp8.otns", model.features(Tensor(ramp_image())).data)
        otns.save(OUT / "head_seed1.otns", model.head(Tensor(head_input(model.cfg.channels))).data)
    labels = np.stack([lab for _, lab in synth_dataset(3, 20)])
    hist = np.bincount(labels.reshape(-1), minlength=4).tolist()
    (OUT / "synth_seed3_hist.json").write_text(json.dumps({"seed": 3, "n": 20, "size": 32, "k": 4,
                                                           "histogram": hist}) + "\n")
    print(f"wrote golden files to {OUT}")


if __name__ == "__main__":
    main()
