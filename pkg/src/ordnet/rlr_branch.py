"""Reweighed long-range branch: gate attended features by attention contribution."""

from __future__ import annotations

from dataclasses import dataclass

from ordnet import tensor as T
from ordnet.attention import AttentionParams, self_attention
from ordnet.errors import ArgumentError
from ordnet.tensor import Tensor

DIRECTIONS = ("attention_out", "attention_in")
NORMALIZERS = ("sigmoid", "softmax")


@dataclass
class RLRConfig:
    direction: str = "attention_out"
    normalizer: str = "sigmoid"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ArgumentError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.normalizer not in NORMALIZERS:
            raise ArgumentError(f"normalizer must be one of {NORMALIZERS}, got {self.normalizer!r}")


@dataclass
class ContributionMap:
    gate: Tensor  # H x W


def contribution_gate(attn: Tensor, hw: tuple, cfg: RLRConfig = RLRConfig()) -> Tensor:
    """Per-position gate from an ``HW x HW`` attention map, shaped ``H x W``.

    attention_out sums column i (what position i gives to everyone);
    attention_in sums row i. The softmax variant is rescaled by HW so the
    mean gate is 1 regardless of resolution.
    """
    # always reduce rows of a contiguous map, so gate(A, out) == gate(A^T, in) bit for bit
    rows = T.transpose(attn) if cfg.direction == "attention_out" else attn
    logits = T.sum_(rows, axis=1)
    if cfg.normalizer == "sigmoid":
        g = T.sigmoid(logits)
    else:
        g = T.scale(T.softmax(logits, axis=0), float(logits.shape[0]))
    return T.reshape(g, hw)


def apply_gate(y: Tensor, gate: Tensor) -> Tensor:
    h, w = gate.shape
    return T.mul(y, T.reshape(gate, (h, w, 1)))


def reweighed_long_range(x: Tensor, params: AttentionParams, cfg: RLRConfig = RLRConfig()):
    """Returns ``(Z_l, ContributionMap)`` with ``Z_l = Y_l * gate`` broadcast over channels."""
    out = self_attention(x, params)
    gate = contribution_gate(out.attn, x.shape[:2], cfg)
    return apply_gate(out.y, gate), ContributionMap(gate)
