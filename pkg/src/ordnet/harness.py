"""Synthetic data, SGD training with a polynomial schedule, multi-scale evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ordnet import tensor as T
from ordnet.errors import ArgumentError, FormatError
from ordnet.losses import LossConfig, confusion_matrix, full_loss, iou_from_confusion
from ordnet.network import STRIDE, OrdNet, OrdNetConfig
from ordnet.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

DEFAULT_SCALES = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75)

# class colours for the synthetic generator; background is class 0
PALETTE = np.array([
    [0.45, 0.45, 0.45],
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.80, 0.20, 0.85],
    [0.10, 0.85, 0.85],
    [0.98, 0.55, 0.15],
])


# --------------------------------------------------------------------- data


def _blob_cells(rng: np.random.Generator, g: int) -> np.ndarray:
    """Boolean ``g x g`` occupancy of one rectangle or ellipse on the cell grid."""
    yy, xx = np.mgrid[0:g, 0:g]
    if rng.random() < 0.5:
        bh, bw = rng.integers(1, max(2, g // 2 + 1), size=2)
        top, left = rng.integers(0, g - bh + 1), rng.integers(0, g - bw + 1)
        return (yy >= top) & (yy < top + bh) & (xx >= left) & (xx < left + bw)
    cy, cx = rng.uniform(0, g - 1, size=2)
    ry, rx = rng.uniform(0.6, max(0.7, g / 3), size=2)
    cells = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if not cells.any():
        cells[int(round(cy)), int(round(cx))] = True
    return cells


def synth_sample(rng: np.random.Generator, size: int, k: int, cell: int = STRIDE) -> tuple:
    if size % cell:
        raise ArgumentError(f"image size {size} must be a multiple of the cell size {cell}")
    g = size // cell
    cells = np.zeros((g, g), dtype=np.int64)
    for cls in rng.permutation(np.arange(1, k)):
        cells[_blob_cells(rng, g)] = cls
    label = np.kron(cells, np.ones((cell, cell), dtype=np.int64))
    yy, xx = np.mgrid[0:size, 0:size] / size
    freq, phase = rng.uniform(2, 6), rng.uniform(0, 2 * np.pi)
    texture = 0.08 * np.sin(2 * np.pi * freq * (xx + yy) + phase)
    image = PALETTE[label % len(PALETTE)] + texture[..., None] + rng.normal(0, 0.05, size=(size, size, 3))
    return image, label


def synth_dataset(seed: int, n: int, size: int = 32, k: int = 4, cell: int = STRIDE) -> list:
    """``n`` (image, label) pairs: ``k-1`` coloured blobs over a textured background.

    Blob geometry lives on a ``cell``-pixel grid so labels stay resolvable
    at the network's output stride. Same seed, same bytes.
    """
    if k < 2 or k > len(PALETTE):
        raise ArgumentError(f"k must lie in [2, {len(PALETTE)}], got {k}")
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, size, k, cell) for _ in range(n)]


# ----------------------------------------------------------------- training


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 4
    total_iter: Optional[int] = None  # defaults to epochs * batches per epoch
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: OrdNetConfig = field(default_factory=OrdNetConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.model, dict):
            self.model = OrdNetConfig(**self.model)
        if self.base_lr < 0:
            raise ArgumentError("base_lr must be non-negative")
        if self.power <= 0:
            raise ArgumentError("power must be positive")
        if self.total_iter is not None and self.total_iter < 1:
            raise ArgumentError("total_iter must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ArgumentError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ArgumentError(f"bad config field: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def poly_lr(it: int, base_lr: float, total_iter: int, power: float = 0.9) -> float:
    """``base_lr * (1 - it/total_iter) ** power``."""
    if not 0 <= it <= total_iter:
        raise ArgumentError(f"iteration {it} outside [0, {total_iter}]")
    return base_lr * (1.0 - it / total_iter) ** power


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros(p.shape) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for k, p in self.params.items():
            g = np.zeros(p.shape) if p.grad is None else p.grad
            d = g + self.weight_decay * p.data
            v = self.velocity[k]
            v *= self.momentum
            v += d
            p.data -= lr * v


@dataclass
class TrainResult:
    model: OrdNet
    history: list  # one dict per epoch
    diverged: bool = False


def predict(model: Callable, image) -> np.ndarray:
    with no_grad():
        return np.argmax(model(Tensor(image)).data, axis=-1)


def evaluate(model: Callable, data: Sequence, k: int, ignore_label: int = 255) -> dict:
    """Single-forward mIoU / pixAcc over a dataset."""
    cm = np.zeros((k, k), dtype=np.int64)
    for image, label in data:
        cm += confusion_matrix(predict(model, image), label, k, ignore_label)
    return _metrics(cm)


def _metrics(cm: np.ndarray) -> dict:
    iou, miou = iou_from_confusion(cm)
    total = cm.sum()
    return {"miou": miou, "pix_acc": float(np.trace(cm) / total) if total else float("nan"), "iou": iou}


def batch_loss(model: OrdNet, batch: Sequence, loss_cfg: LossConfig) -> Tensor:
    total = None
    for image, label in batch:
        term = full_loss(model(Tensor(image)), label, loss_cfg)
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(batch))


def train(cfg: TrainConfig, data: Sequence, on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train an :class:`OrdNet` on ``data``; deterministic for a fixed ``cfg.seed``.

    A non-finite loss stops training and restores the parameters from
    before the offending step.
    """
    if not data:
        raise ArgumentError("training data is empty")
    model = OrdNet(cfg.model, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    per_epoch = math.ceil(len(data) / cfg.batch_size)
    total_iter = cfg.total_iter or max(1, cfg.epochs * per_epoch)
    opt = SGD(model.params, cfg.momentum, cfg.weight_decay)
    history = []
    it = 0
    last_good = model.state_dict()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for b in range(per_epoch):
            if it >= total_iter:
                break
            batch = [data[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            opt.zero_grad()
            loss = batch_loss(model, batch, cfg.loss)
            val = float(loss.data)
            if not math.isfinite(val):
                log.warning("non-finite loss at iter %d; restoring last good parameters", it)
                model.load_state_dict(last_good)
                return TrainResult(model, history, diverged=True)
            last_good = model.state_dict()
            loss.backward()
            opt.step(poly_lr(it, cfg.base_lr, total_iter, cfg.power))
            losses.append(val)
            it += 1
        metrics = evaluate(model, data, cfg.model.num_classes, cfg.loss.ignore_label)
        rec = {"epoch": epoch + 1, "iter": it, "loss": float(np.mean(losses)) if losses else float("nan"),
               "miou": metrics["miou"], "pix_acc": metrics["pix_acc"]}
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
    return TrainResult(model, history)


# --------------------------------------------------------------- evaluation


@dataclass
class EvalConfig:
    scales: tuple = DEFAULT_SCALES
    flip: bool = False

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if not self.scales or min(self.scales) <= 0:
            raise ArgumentError("scales must be a non-empty list of positive numbers")


def _pad_multiple(model) -> int:
    cfg = getattr(model, "cfg", None)
    if cfg is not None and cfg.use_mr and cfg.mr.padding == "strict":
        return STRIDE * cfg.mr.patches
    return STRIDE


def multiscale_logits(model: Callable, image: np.ndarray, cfg: EvalConfig) -> np.ndarray:
    """Average of logits over scales (and horizontal flips), at native resolution.

    Each rescaled image is zero-padded bottom/right to a multiple of the
    output stride (times the patch grid for strict MR models); the padded
    logits are cropped before resizing back.
    """
    h, w = image.shape[:2]
    mult = _pad_multiple(model)
    acc = None
    count = 0
    with no_grad():
        for s in cfg.scales:
            sh, sw = max(1, round(h * s)), max(1, round(w * s))
            scaled = T.resize_bilinear(Tensor(image), sh, sw)
            views = [(scaled, False)]
            if cfg.flip:
                views.append((Tensor(scaled.data[:, ::-1].copy()), True))
            for view, flipped in views:
                padded = T.pad2d(view, 0, (-sh) % mult, 0, (-sw) % mult)
                logits = T.crop(model(padded), sh, sw)
                if flipped:
                    logits = Tensor(logits.data[:, ::-1].copy())
                out = T.resize_bilinear(logits, h, w).data
                acc = out.copy() if acc is None else acc + out
                count += 1
    return acc / count


def evaluate_multiscale(model: Callable, data: Sequence, cfg: EvalConfig = EvalConfig(),
                        k: Optional[int] = None, ignore_label: int = 255) -> dict:
    if k is None:
        k = model.cfg.num_classes
    cm = np.zeros((k, k), dtype=np.int64)
    for image, label in data:
        pred = np.argmax(multiscale_logits(model, image, cfg), axis=-1)
        cm += confusion_matrix(pred, label, k, ignore_label)
    return _metrics(cm)
