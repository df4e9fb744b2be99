"""Dot-product self-attention over the spatial positions of a feature map."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from ordnet import tensor as T
from ordnet.errors import ArgumentError, DimensionError
from ordnet.tensor import Tensor

ORACLE_MAX_POSITIONS = 1024


@dataclass
class AttentionParams:
    """Query/key/value projections plus the output map back to ``C`` channels."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wout: Tensor
    bout: Tensor

    def __post_init__(self):
        c = self.wq.shape[0]
        if self.wq.shape[1] != self.wk.shape[1]:
            raise DimensionError(f"query dim {self.wq.shape[1]} != key dim {self.wk.shape[1]}")
        if self.wk.shape[0] != c or self.wv.shape[0] != c or self.wout.shape != (self.wv.shape[1], c):
            raise DimensionError("projection shapes disagree on the channel count")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def dims(self) -> tuple:
        """``(C_q, C_k, C_v)``."""
        return self.wq.shape[1], self.wk.shape[1], self.wv.shape[1]

    def named_parameters(self, prefix: str = "") -> dict:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    @classmethod
    def init(cls, c: int, cq: int, cv: int, rng: np.random.Generator, ck: Optional[int] = None,
             zero_bias: bool = True) -> "AttentionParams":
        ck = cq if ck is None else ck
        if ck != cq:
            raise DimensionError(f"C_q ({cq}) must equal C_k ({ck})")

        def w(n_in, n_out):
            return Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)), requires_grad=True)

        def b(n):
            data = np.zeros(n) if zero_bias else rng.normal(0.0, 0.1, size=n)
            return Tensor(data, requires_grad=True)

        return cls(w(c, cq), b(cq), w(c, ck), b(ck), w(c, cv), b(cv), w(cv, c), b(c))


@dataclass
class AttentionOutput:
    y: Tensor  # H x W x C
    attn: Tensor  # HW x HW, un-normalized query-key products
    n: float


def attend_flat(xf: Tensor, params: AttentionParams) -> tuple:
    """Attention on ``B x L x C`` position batches; returns ``(Y, Attn)``.

    Shared by the global and patch-restricted paths so that a one-patch grid
    runs exactly the same arithmetic as plain self-attention.
    """
    if xf.shape[-1] != params.channels:
        raise DimensionError(f"input has {xf.shape[-1]} channels, params expect {params.channels}")
    q = T.add(T.matmul(xf, params.wq), params.bq)
    k = T.add(T.matmul(xf, params.wk), params.bk)
    v = T.add(T.matmul(xf, params.wv), params.bv)
    attn = T.matmul(q, T.transpose(k, (0, 2, 1)))
    agg = T.scale(T.matmul(attn, v), 1.0 / xf.shape[1])
    y = T.add(T.matmul(agg, params.wout), params.bout)
    return y, attn


def self_attention(x: Tensor, params: AttentionParams) -> AttentionOutput:
    """``y_i = (1/HW) sum_j (q_i . k_j) v_j``, projected back to ``C`` channels."""
    if x.ndim != 3:
        raise DimensionError(f"expected an H x W x C tensor, got shape {x.shape}")
    h, w, c = x.shape
    y, attn = attend_flat(T.reshape(x, (1, h * w, c)), params)
    return AttentionOutput(T.reshape(y, (h, w, c)), T.reshape(attn, (h * w, h * w)), float(h * w))


def attention_oracle(x, params: AttentionParams) -> np.ndarray:
    """Loop-only reference for :func:`self_attention` (test use; HW <= 1024)."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    h, w, c = xd.shape
    hw = h * w
    if hw > ORACLE_MAX_POSITIONS:
        raise ArgumentError(f"oracle limited to {ORACLE_MAX_POSITIONS} positions, got {hw}")
    pos = [xd[i // w, i % w].tolist() for i in range(hw)]
    P = {name: t.data.tolist() for name, t in params.named_parameters().items()}
    cq, _, cv = params.dims

    def project(vec, wname, bname, n_out):
        return [P[bname][o] + sum(vec[ci] * P[wname][ci][o] for ci in range(c)) for o in range(n_out)]

    qs = [project(p, "wq", "bq", cq) for p in pos]
    ks = [project(p, "wk", "bk", cq) for p in pos]
    vs = [project(p, "wv", "bv", cv) for p in pos]
    out = np.zeros((h, w, c))
    for i in range(hw):
        acc = [0.0] * cv
        for j in range(hw):
            a = sum(qs[i][t] * ks[j][t] for t in range(cq))
            for t in range(cv):
                acc[t] += a * vs[j][t]
        acc = [v / hw for v in acc]
        for o in range(c):
            out[i // w, i % w, o] = P["bout"][o] + sum(acc[t] * P["wout"][t][o] for t in range(cv))
    return out
