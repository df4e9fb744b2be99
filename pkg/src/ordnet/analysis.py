"""Patch-correlation statistics of label maps and analytic attention FLOPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ordnet import otns
from ordnet.errors import ArgumentError, FormatError, PartitionError
from ordnet.losses import IGNORE_LABEL

UNDEFINED = -1.0


@dataclass
class CorrelationAccumulator:
    """Running pair counts; merging two accumulators is order-independent."""

    patches: int
    same: np.ndarray = None  # label-agreeing pairs per (m, n)
    pairs: np.ndarray = None  # all pairs per (m, n)

    def __post_init__(self):
        n = self.patches * self.patches
        if self.same is None:
            self.same = np.zeros((n, n), dtype=np.int64)
        if self.pairs is None:
            self.pairs = np.zeros((n, n), dtype=np.int64)

    def add(self, mask, ignore_label: int = IGNORE_LABEL, strict: bool = False) -> "CorrelationAccumulator":
        same, pairs = _pair_counts(np.asarray(mask), self.patches, ignore_label, strict)
        self.same += same
        self.pairs += pairs
        return self

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        if other.patches != self.patches:
            raise ArgumentError("cannot merge accumulators with different patch grids")
        return CorrelationAccumulator(self.patches, self.same + other.same, self.pairs + other.pairs)

    def matrix(self) -> np.ndarray:
        out = np.full(self.same.shape, UNDEFINED)
        ok = self.pairs > 0
        out[ok] = self.same[ok] / self.pairs[ok]
        return out


def _patch_views(mask: np.ndarray, p: int, strict: bool) -> list:
    if mask.ndim != 2:
        raise ArgumentError(f"label map must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    if h % p or w % p:
        if strict:
            raise PartitionError(f"mask {h}x{w} is not divisible by patch grid {p}")
        h, w = h - h % p, w - w % p
        if h == 0 or w == 0:
            raise PartitionError(f"mask {mask.shape} is smaller than the patch grid {p}")
    ph, pw = h // p, w // p
    return [mask[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw] for r in range(p) for c in range(p)]


def _pair_counts(mask: np.ndarray, p: int, ignore_label: int, strict: bool) -> tuple:
    # Corr(m, n) = <hist_m, hist_n> / (|m| |n|): counting equal-label pairs via histograms
    views = _patch_views(mask, p, strict)
    valid = [v[v != ignore_label].astype(np.int64).reshape(-1) for v in views]
    if any(len(v) and v.min() < 0 for v in valid):
        raise ArgumentError("labels must be non-negative")
    n_labels = max((int(v.max()) + 1 for v in valid if len(v)), default=1)
    hist = np.stack([np.bincount(v, minlength=n_labels) for v in valid])
    sizes = hist.sum(axis=1)
    return hist @ hist.T, np.outer(sizes, sizes)


def patch_correlation(mask, patches: int = 2, ignore_label: int = IGNORE_LABEL,
                      strict: bool = False) -> np.ndarray:
    """``P^2 x P^2`` fraction of same-label pixel pairs between patches.

    Patches are ordered by rows. Entries with no valid pixels on one side are
    set to ``-1``. Non-divisible masks lose their bottom/right remainder
    unless ``strict``.
    """
    return CorrelationAccumulator(patches).add(mask, ignore_label, strict).matrix()


def patch_correlation_bruteforce(mask, patches: int = 2, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """O(n^2) reference: explicit label comparison of every cross-patch pixel pair."""
    views = _patch_views(np.asarray(mask), patches, strict=False)
    flat = [v.reshape(-1) for v in views]
    flat = [v[v != ignore_label] for v in flat]
    n = len(flat)
    out = np.full((n, n), UNDEFINED)
    for m in range(n):
        for k in range(n):
            a, b = flat[m], flat[k]
            if len(a) and len(b):
                out[m, k] = (a[:, None] == b[None, :]).sum() / (len(a) * len(b))
    return out


def aggregate_correlation(masks: Iterable, patches: int = 2, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """Pixel-pair-weighted mean of per-mask correlation matrices."""
    acc = CorrelationAccumulator(patches)
    for m in masks:
        acc.add(m, ignore_label)
    return acc.matrix()


def diagonal_gap(corr: np.ndarray) -> float:
    """Mean intra-patch minus mean inter-patch correlation (defined entries only)."""
    ok = corr >= 0
    diag = np.eye(len(corr), dtype=bool)
    return float(corr[ok & diag].mean() - corr[ok & ~diag].mean())


# -------------------------------------------------------------------- FLOPs


@dataclass
class FlopsReport:
    """Multiply-add counts per stage of one attention module."""

    projections: int
    attention_map: int
    aggregation: int
    output_projection: int
    total: int = field(init=False)

    def __post_init__(self):
        self.total = self.projections + self.attention_map + self.aggregation + self.output_projection

    @property
    def quadratic(self) -> int:
        return self.attention_map + self.aggregation

    def records(self) -> list:
        return [f"{k}={getattr(self, k)}" for k in
                ("projections", "attention_map", "aggregation", "output_projection", "total")]


def flops_estimate(h: int, w: int, c: int, cq: int, ck: int, cv: int, patches: int = 1) -> FlopsReport:
    """Closed-form multiply-adds for (patch-restricted) self-attention.

    Non-divisible extents are counted at their zero-padded size.
    """
    for name, v in dict(h=h, w=w, c=c, cq=cq, ck=ck, cv=cv, patches=patches).items():
        if v < 1:
            raise ArgumentError(f"{name} must be positive, got {v}")
    hw = h * w
    ph, pw = math.ceil(h / patches), math.ceil(w / patches)
    n = patches * patches
    seg = ph * pw
    return FlopsReport(
        projections=hw * c * (cq + ck + cv),
        attention_map=n * seg * seg * ck,
        aggregation=n * seg * seg * cv,
        output_projection=hw * cv * c,
    )


# --------------------------------------------------------------------- I/O


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM with 8- or 16-bit samples as an int64 array."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i:i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(buf[start:i])
    i += 1  # single whitespace byte before raster
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} out of range")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(buf) - i < need:
        raise FormatError(f"{path}: raster has {len(buf) - i} bytes, expected {need}")
    return np.frombuffer(buf, dtype=dtype, count=w * h, offset=i).reshape(h, w).astype(np.int64)


def write_pgm(path, mask) -> None:
    mask = np.asarray(mask)
    maxval = 255 if mask.max(initial=0) < 256 else 65535
    dtype = "u1" if maxval == 255 else ">u2"
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + mask.astype(dtype).tobytes())


def load_mask(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        return read_pgm(path)
    arr = otns.load(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: mask must be rank 2, got {arr.shape}")
    return arr.astype(np.int64)


def mask_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix in (".pgm", ".otns"))


def matrix_to_csv(corr: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in corr) + "\n"
