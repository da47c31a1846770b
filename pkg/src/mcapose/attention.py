"""Spatial attention: Softmax, CRF mean-field, multi-resolution and per-part.

An attention map is a one-channel ``N x 1 x H x W`` tensor that reweights
every channel of a feature map (``apply_attention``). The summary map that
feeds the map generator is a 1x1 convolution with identity activation, so
the CRF unary can go negative and attention can drop below 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor

Mode = Literal["crf", "softmax"]


@dataclass
class AttentionMap:
    values: Tensor
    mode: str
    resolution: int

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class CRFSettings:
    """Mean-field settings.

    ``include_unary=False`` runs the recursion that re-applies the shared
    kernel to the previous map only; ``True`` adds the unary term back in at
    every step.
    """

    kernel: int = 3
    steps: int = 3
    include_unary: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("CRF needs at least one mean-field step")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"CRF kernel extent must be odd, got {self.kernel}")


def summarize_features(f: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Collapse channels into one summary map: ``s = W * f + b``."""
    k = weight.shape[-1]
    return T.conv2d(f, weight, bias, 1, k // 2)


def softmax_attention(s: Tensor) -> AttentionMap:
    return AttentionMap(T.spatial_softmax(s), "softmax", s.shape[-1])


def crf_attention(s: Tensor, weight: Tensor, bias: Tensor | None = None, settings: CRFSettings = CRFSettings()) -> AttentionMap:
    """Mean-field attention with one spatial kernel shared by every step.

    Writing ``K(.)`` for the kernel convolution (same padding, with bias)::

        phi_0 = sigmoid(K(s))
        phi_t = sigmoid(K(phi_{t-1}))            t = 1..steps
        phi_t = sigmoid(K(s) + K(phi_{t-1}))     with include_unary

    The first convolution is what turns ``s`` into the unary term, so the
    unary-inclusive variant reuses ``K(s)`` rather than ``s`` itself.
    """
    k = weight.shape[-1]
    if weight.shape[:2] != (1, 1) or k % 2 == 0 or weight.shape[-2] != k:
        raise ValueError(f"CRF kernel must be 1 x 1 x k x k with odd k, got {weight.shape}")
    if s.ndim != 4 or s.shape[1] != 1:
        raise ValueError(f"CRF input must be N x 1 x H x W, got {s.shape}")
    pad = k // 2
    unary = T.conv2d(s, weight, bias, 1, pad)
    phi = T.sigmoid(unary)
    for _ in range(settings.steps):
        message = T.conv2d(phi, weight, bias, 1, pad)
        phi = T.sigmoid(T.add(unary, message) if settings.include_unary else message)
    return AttentionMap(phi, "crf", s.shape[-1])


def apply_attention(f: Tensor, amap: AttentionMap | Tensor) -> Tensor:
    values = amap.values if isinstance(amap, AttentionMap) else amap
    return T.hadamard_broadcast(f, values)


def upsample_to(x: Tensor, size: int) -> Tensor:
    r = x.shape[-1]
    while r < size:
        x = T.upsample_nearest_2x(x)
        r *= 2
    if r != size:
        raise ValueError(f"cannot upsample resolution {x.shape[-1]} to {size} by doubling")
    return x


class AttentionGenerator(Module):
    """Summarizer plus map generator (CRF kernel or spatial Softmax)."""

    def __init__(self, channels: int, rng: np.random.Generator, mode: Mode = "crf", crf: CRFSettings = CRFSettings()):
        super().__init__()
        if mode not in ("crf", "softmax"):
            raise ValueError(f"unknown attention mode {mode!r}")
        self.mode, self.crf = mode, crf
        self.summarizer = Conv2d(channels, 1, 1, rng)
        self.kernel = Conv2d(1, 1, crf.kernel, rng) if mode == "crf" else None

    def summary(self, f: Tensor) -> Tensor:
        return summarize_features(f, self.summarizer.weight, self.summarizer.bias)

    def forward(self, f: Tensor) -> AttentionMap:
        s = self.summary(f)
        if self.mode == "softmax":
            return softmax_attention(s)
        return crf_attention(s, self.kernel.weight, self.kernel.bias, self.crf)

    def zero_(self) -> None:
        self.summarizer.zero_()
        if self.kernel is not None:
            self.kernel.zero_()


def multi_resolution_attention(
    ladder: Mapping[int, Tensor], f: Tensor, generators: Mapping[int, AttentionGenerator]
) -> tuple[Tensor, Tensor, dict[int, AttentionMap]]:
    """Generate a map per ladder resolution, upsample each to the top
    resolution and sum them; the fused map reweights ``f``.

    Returns ``(fused_map, h1, per_resolution_maps)``. The fused map is left
    unnormalized and may exceed 1.
    """
    rs = sorted(ladder)
    if not rs:
        raise ValueError("empty resolution ladder")
    for lo, hi in zip(rs, rs[1:]):
        if hi != 2 * lo:
            raise ValueError(f"ladder resolutions {rs} do not form a doubling chain")
    top = rs[-1]
    if f.shape[-1] != top:
        raise ValueError(f"features at {f.shape[-1]} do not match ladder top {top}")
    missing = set(rs) - set(generators)
    if missing:
        raise ValueError(f"no attention parameters for resolutions {sorted(missing)}")
    maps = {r: generators[r](ladder[r]) for r in rs}
    up = [upsample_to(maps[r].values, top) for r in rs]
    fused = up[0] if len(up) == 1 else T.add_n(up)
    return fused, apply_attention(f, fused), maps


def refine_attention(h1: Tensor, generator: AttentionGenerator) -> tuple[AttentionMap, Tensor]:
    amap = generator(h1)
    return amap, apply_attention(h1, amap)


class PartAttentionBank(Module):
    """Independent summarizer, CRF kernel and 1x1 classifier for each part."""

    def __init__(self, channels: int, parts: int, rng: np.random.Generator, mode: Mode = "crf", crf: CRFSettings = CRFSettings()):
        super().__init__()
        self.parts = parts
        self.generators = [AttentionGenerator(channels, rng, mode, crf) for _ in range(parts)]
        self.classifiers = [Conv2d(channels, 1, 1, rng) for _ in range(parts)]

    def forward(self, h1: Tensor) -> tuple[list[AttentionMap], list[Tensor], Tensor]:
        maps, feats = part_attention(h1, self)
        heat = T.concat([part_heatmap(h, cls) for h, cls in zip(feats, self.classifiers)], axis=1)
        return maps, feats, heat


def part_attention(h1: Tensor, bank: PartAttentionBank, parts: int | None = None) -> tuple[list[AttentionMap], list[Tensor]]:
    if parts is not None and parts != bank.parts:
        raise ValueError(f"part bank holds {bank.parts} parts, config asks for {parts}")
    maps, feats = [], []
    for p, gen in enumerate(bank.generators):
        with T.scope(f"part{p}"):
            amap = gen(h1)
            maps.append(amap)
            feats.append(apply_attention(h1, amap))
    return maps, feats


def part_heatmap(h_p: Tensor, classifier: Conv2d) -> Tensor:
    """One-channel heatmap from a part-refined feature (1x1 conv)."""
    if classifier.weight.shape[0] != 1 or classifier.kernel != 1:
        raise ValueError("part classifier must be a 1x1 conv to a single channel")
    return classifier(h_p)


def stack_heatmaps(heatmaps: Sequence[Tensor]) -> Tensor:
    return T.concat(list(heatmaps), axis=1)
