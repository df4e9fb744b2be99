"""Middle-range branch: self-attention restricted to a P x P grid of patches."""

from __future__ import annotations

from dataclasses import dataclass

from ordnet import tensor as T
from ordnet.attention import AttentionParams, attend_flat
from ordnet.errors import ArgumentError
from ordnet.tensor import Tensor


@dataclass
class MRConfig:
    patches: int = 2
    padding: str = "strict"  # or "pad": zero-fill bottom/right, crop afterwards

    def __post_init__(self):
        if self.patches < 1:
            raise ArgumentError(f"patch grid must be >= 1, got {self.patches}")
        if self.padding not in ("strict", "pad"):
            raise ArgumentError(f"padding must be 'strict' or 'pad', got {self.padding!r}")


def middle_range(x: Tensor, params: AttentionParams, cfg: MRConfig = MRConfig()) -> Tensor:
    """Run one shared attention module inside every patch and stitch the results.

    Patches go through as a single batch; nothing crosses a patch boundary.
    """
    h, w, c = x.shape
    p = cfg.patches
    xp = T.partition_patches(x, p, mode=cfg.padding)
    n, ph, pw, _ = xp.shape
    y, _ = attend_flat(T.reshape(xp, (n, ph * pw, c)), params)
    return T.reassemble_patches(T.reshape(y, (n, ph, pw, c)), p, out_hw=(h, w))
