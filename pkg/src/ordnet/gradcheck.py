"""Central-difference verification of tape gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ordnet.errors import ArgumentError, EvaluationError
from ordnet.tensor import Tensor

# coordinates whose gradients are both below this are compared absolutely
REL_FLOOR = 1e-6


@dataclass
class GradReport:
    max_abs_diff: float
    max_rel_diff: float
    per_parameter: list = field(default_factory=list)  # (name, rel_diff)
    n_checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_diff < tol

    def records(self) -> list:
        lines = [f"max_abs_diff={self.max_abs_diff:.3e}", f"max_rel_diff={self.max_rel_diff:.3e}",
                 f"n_checked={self.n_checked}"]
        lines += [f"param={name} rel_diff={rel:.3e}" for name, rel in self.per_parameter]
        return lines


def _eval(f: Callable[[], Tensor]) -> float:
    val = float(f().data)
    if not math.isfinite(val):
        raise EvaluationError(f"function under check returned {val}")
    return val


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    ``f`` closes over ``params`` and is re-evaluated with one coordinate
    nudged at a time. ``max_coords`` caps the coordinates sampled per
    parameter (all of them by default).
    """
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps}")
    for p in params.values():
        p.grad = None
    out = f()
    if not math.isfinite(float(out.data)):
        raise EvaluationError(f"function under check returned {float(out.data)}")
    out.backward()

    rng = np.random.default_rng(seed)
    max_abs = max_rel = 0.0
    per_param = []
    n = 0
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.flat
        coords = np.arange(p.data.size)
        if max_coords is not None and p.data.size > max_coords:
            coords = rng.choice(p.data.size, size=max_coords, replace=False)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = _eval(f)
            flat[idx] = orig - eps
            fm = _eval(f)
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic.reshape(-1)[idx]
            diff = abs(a - numeric)
            rel = diff / max(abs(a), abs(numeric), REL_FLOOR)
            max_abs = max(max_abs, diff)
            worst = max(worst, rel)
            n += 1
        per_param.append((name, worst))
        max_rel = max(max_rel, worst)
    return GradReport(max_abs, max_rel, per_param, n)
