"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    """Per-element comparison of autodiff and finite-difference gradients."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tolerance: float
    indices: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __bool__(self) -> bool:
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps gradients that are zero up to roundoff from dominating:
    with the default step a central difference of an exactly-flat direction
    still reads ~1e-10.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor] | Tensor,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    sample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-5,
    refinements: int = 3,
) -> GradCheckReport:
    """Compare ``backward`` against central differences.

    ``fn`` rebuilds the graph on every call and returns a scalar tensor.
    ``params`` are the tensors whose gradients are checked; they are perturbed
    in place and restored. ``sample`` limits the check to that many randomly
    chosen elements (across all params).

    Piecewise-linear ops (relu, maxpool) have kinks; a central difference
    whose interval straddles one measures neither one-sided slope, and strongly
    curved directions carry truncation error. Each estimate D(h) is therefore
    compared with D(h/10); unless they agree to a tenth of ``tolerance`` the
    finer estimate takes its place and is checked the same way, up to
    ``refinements`` times.

    Raises:
        RuntimeError: if two evaluations at the same point disagree.
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    for p in params:
        p.grad = None
        p.requires_grad = True

    loss = fn()
    base = float(loss.data)
    backward(loss)
    again = float(fn().data)
    if again != base:
        raise RuntimeError(f"function is not deterministic: {base!r} != {again!r}")
    analytic_all = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(k, idx) for k, p in enumerate(params) for idx in np.ndindex(p.shape)]
    if sample is not None and sample < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def central(p, idx, h):
        orig = p.data[idx]
        p.data[idx] = orig + h
        plus = float(fn().data)
        p.data[idx] = orig - h
        minus = float(fn().data)
        p.data[idx] = orig
        return (plus - minus) / (2.0 * h)

    analytic = np.empty(len(coords))
    numeric = np.empty(len(coords))
    for i, (k, idx) in enumerate(coords):
        p = params[k]
        h = step
        est = central(p, idx, h)
        for _ in range(refinements):
            h /= 10.0
            finer = central(p, idx, h)
            # agreement ten times tighter than the verdict, plus an absolute
            # allowance for roundoff, which grows like 1/h
            slack = 0.1 * tolerance * max(abs(est), abs(finer)) + tolerance * floor * step / h
            if abs(est - finer) <= slack:
                break
            est = finer
        numeric[i] = est
        analytic[i] = analytic_all[k][idx]
    return GradCheckReport(analytic, numeric, relative_error(analytic, numeric, floor), tolerance, coords)
