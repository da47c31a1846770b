"""RMSprop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 2.5e-4
    decay: float = 0.99
    eps: float = 1e-8
    square_avg: list[np.ndarray] = field(default_factory=list)


def rmsprop_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimizerState) -> None:
    """One in-place RMSprop update.

    ``acc <- decay * acc + (1 - decay) * g**2``;
    ``p <- p - lr * g / (sqrt(acc) + eps)``.
    A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.square_avg:
        state.square_avg = [np.zeros_like(p.data) for p in params]
    if len(state.square_avg) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    for p, g, acc in zip(params, grads, state.square_avg):
        if acc.shape != p.data.shape:
            raise ValueError(f"accumulator shape {acc.shape} does not match parameter {p.data.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p.data -= state.lr * g / (np.sqrt(acc) + state.eps)


class RMSprop:
    """Thin stateful wrapper: ``opt.step()`` reads ``p.grad`` from each param."""

    def __init__(self, params: Iterable[Tensor], lr: float = 2.5e-4, decay: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, decay=decay, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        rmsprop_step(self.params, [p.grad for p in self.params], self.state)
