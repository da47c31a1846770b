"""Residual units, hourglass residual units (HRU) and the hourglass module.

Residual branch topology (``F``)::

    conv1x1 -> BN -> ReLU -> conv3x3 -> BN -> ReLU -> conv1x1 -> BN

and the unit returns ``x + F(x)`` with no trailing activation, so the
identity path stays purely additive. The HRU adds a third branch ``P``::

    maxpool2x2 -> conv3x3 -> BN -> ReLU -> conv3x3 -> ReLU -> upsample2x

and returns ``(x + F(x)) + P(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor

BlockKind = Literal["residual", "hru"]


class ResidualUnit(Module):
    """Bottleneck residual unit. ``mid`` defaults to ``out_ch // 2``.

    A 1x1 projection replaces the identity when ``in_ch != out_ch``.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, mid: Optional[int] = None):
        super().__init__()
        mid = mid or max(out_ch // 2, 1)
        self.in_ch, self.out_ch, self.mid = in_ch, out_ch, mid
        self.conv1 = Conv2d(in_ch, mid, 1, rng)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, rng)
        self.bn2 = BatchNorm2d(mid)
        self.conv3 = Conv2d(mid, out_ch, 1, rng)
        self.bn3 = BatchNorm2d(out_ch)
        self.project = Conv2d(in_ch, out_ch, 1, rng) if in_ch != out_ch else None

    def residual(self, x: Tensor) -> Tensor:
        """The residual branch F(x) alone."""
        y = T.relu(self.bn1(self.conv1(x)))
        y = T.relu(self.bn2(self.conv2(y)))
        return self.bn3(self.conv3(y))

    def shortcut(self, x: Tensor) -> Tensor:
        return x if self.project is None else self.project(x)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"residual unit expects {self.in_ch} input channels, got {x.shape}")
        return T.add(self.shortcut(x), self.residual(x))

    def zero_residual_(self) -> None:
        """Make F identically zero (all convs and the last BN affine zeroed)."""
        for conv in (self.conv1, self.conv2, self.conv3):
            conv.zero_()
        self.bn3.gamma.data[...] = 0.0
        self.bn3.beta.data[...] = 0.0


class HourglassResidualUnit(Module):
    """Residual unit with an extra pooled two-conv branch.

    Branch C keeps the unit's output channel count in both 3x3 convs so the
    three-way sum is shape-consistent.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, mid: Optional[int] = None):
        super().__init__()
        self.unit = ResidualUnit(in_ch, out_ch, rng, mid)
        self.pconv1 = Conv2d(in_ch, out_ch, 3, rng)
        self.pbn1 = BatchNorm2d(out_ch)
        self.pconv2 = Conv2d(out_ch, out_ch, 3, rng)

    @property
    def in_ch(self) -> int:
        return self.unit.in_ch

    @property
    def out_ch(self) -> int:
        return self.unit.out_ch

    def pooled_branch(self, x: Tensor) -> Tensor:
        """Branch C: pool, two 3x3 convs with ReLU, upsample back."""
        h, w = x.shape[2:]
        if h % 2 or w % 2:
            raise ValueError(f"hourglass residual unit needs even spatial extent, got {h}x{w}")
        y = T.maxpool2x2(x)
        y = T.relu(self.pbn1(self.pconv1(y)))
        y = T.relu(self.pconv2(y))
        return T.upsample_nearest_2x(y)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"hourglass residual unit expects {self.in_ch} input channels, got {x.shape}")
        return T.add(self.unit(x), self.pooled_branch(x))

    def zero_pooled_branch_(self) -> None:
        self.pconv2.zero_()


def make_block(kind: BlockKind, in_ch: int, out_ch: int, rng: np.random.Generator) -> Module:
    if kind == "residual":
        return ResidualUnit(in_ch, out_ch, rng)
    if kind == "hru":
        return HourglassResidualUnit(in_ch, out_ch, rng)
    raise ValueError(f"unknown block kind {kind!r}")


class Hourglass(Module):
    """Recursive hourglass.

    Each level has one block on the skip path (``block`` kind, so the HRU
    ablation swaps exactly these), one on the pooled down path and one on the
    path back up. ``forward`` returns the output and a ladder
    ``{resolution: features}`` with one entry per level, where the lower
    entries are the up-path features just before upsampling.
    """

    def __init__(self, depth: int, channels: int, rng: np.random.Generator, block: BlockKind = "residual"):
        super().__init__()
        if depth < 1:
            raise ValueError("hourglass depth must be >= 1")
        self.depth, self.channels, self.block = depth, channels, block
        self.skip = make_block(block, channels, channels, rng)
        self.down = ResidualUnit(channels, channels, rng)
        self.inner = (
            Hourglass(depth - 1, channels, rng, block) if depth > 1 else ResidualUnit(channels, channels, rng)
        )
        self.up = ResidualUnit(channels, channels, rng)

    def forward(self, x: Tensor) -> tuple[Tensor, dict[int, Tensor]]:
        h, w = x.shape[2:]
        step = 2**self.depth
        if h % step or w % step:
            raise ValueError(f"hourglass of depth {self.depth} needs spatial extent divisible by {step}, got {h}x{w}")
        upper = self.skip(x)
        low = self.down(T.maxpool2x2(x))
        if isinstance(self.inner, Hourglass):
            low, ladder = self.inner(low)
        else:
            low, ladder = self.inner(low), {}
        low = self.up(low)
        ladder[h // 2] = low
        out = T.add(upper, T.upsample_nearest_2x(low))
        ladder[h] = out
        return out, ladder


# ---------------------------------------------------------------------------
# receptive field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    """A layer descriptor for receptive-field analysis.

    kind is "conv", "pool" or "upsample"; ``kernel``/``stride`` are ignored
    for "upsample" (``stride`` is then the upsampling factor).
    """

    kind: str
    kernel: int = 1
    stride: int = 1
    pad: int = 0


def conv(k: int, stride: int = 1, pad: Optional[int] = None) -> Layer:
    return Layer("conv", k, stride, k // 2 if pad is None else pad)


def pool(k: int = 2) -> Layer:
    return Layer("pool", k, k, 0)


def upsample(factor: int = 2) -> Layer:
    return Layer("upsample", 1, factor, 0)


@dataclass(frozen=True)
class ReceptiveField:
    size: float
    stride: float
    offset: float

    def __str__(self) -> str:
        return f"{self.size:g}x{self.size:g} (stride {self.stride:g}, offset {self.offset:g})"


def receptive_field_of(layers: Sequence[Layer]) -> ReceptiveField:
    """Footprint of one output unit on the input, per axis.

    Each k-kernel layer grows the size by ``(k - 1) * jump`` where ``jump``
    is the accumulated input-pixel spacing of the units feeding it. Nearest
    upsampling copies one unit, so it adds nothing to the size and divides
    the jump.
    """
    size, jump, offset = 1.0, 1.0, 0.0
    for layer in layers:
        if layer.kind in ("conv", "pool"):
            size += (layer.kernel - 1) * jump
            offset += ((layer.kernel - 1) / 2 - layer.pad) * jump
            jump *= layer.stride
        elif layer.kind == "upsample":
            jump /= layer.stride
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return ReceptiveField(size, jump, offset)


RESIDUAL_BRANCH = (conv(1), conv(3), conv(1))
POOLED_BRANCH = (pool(2), conv(3), conv(3), upsample(2))
