"""The stacked multi-context attention network.

Per stack::

    hourglass -> head (residual unit + 1x1 conv/BN/ReLU) = f
    BL:            heatmaps = cls(f)
    MS (holistic): phi = M(summary(f))            (or fused multi-resolution map with MR)
                   h1 = f * phi;  phi' = M(summary(h1));  h2 = h1 * phi'
                   heatmaps = cls(h2)
    MS+HP (part):  h1 as above; for each part p: h_p = h1 * M_p(summary_p(h1))
                   heatmap_p = cls_p(h_p)

Between stacks the next input is ``x + remap_f(f) + remap_y(heatmaps)``.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import (
    AttentionGenerator,
    AttentionMap,
    CRFSettings,
    PartAttentionBank,
    apply_attention,
    multi_resolution_attention,
    refine_attention,
)
from .blocks import Hourglass, ResidualUnit
from .nn import Conv2d, ConvBNReLU, Module
from .optim import RMSprop
from .tensor import NonFiniteError, Tensor

VARIANTS = ("BL", "BL+MS", "BL+MS+HRU", "BL+MS+HRU+MR", "BL+MS+HRU+MR+HP")


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    stacks: int = 2
    parts: int = 4
    input_size: int = 64
    channels: int = 32
    depth: int = 2
    block: str = "residual"
    ms: bool = False
    mr: bool = False
    hp: bool = False
    part_start: Optional[int] = None
    attention_mode: str = "crf"
    crf_kernel: int = 3
    crf_steps: int = 3
    crf_include_unary: bool = False
    seed: int = 0

    @property
    def heatmap_size(self) -> int:
        return self.input_size // 4

    @property
    def ladder(self) -> list[int]:
        return [self.heatmap_size // 2**k for k in range(self.depth, -1, -1)]

    @property
    def crf(self) -> CRFSettings:
        return CRFSettings(self.crf_kernel, self.crf_steps, self.crf_include_unary)

    @property
    def first_part_stack(self) -> int:
        """1-based index of the first part-attention stack (stacks + 1: none)."""
        if not self.hp:
            return self.stacks + 1
        if self.part_start is not None:
            return self.part_start
        return min(math.ceil(self.stacks / 2) + 1, self.stacks)

    @property
    def variant(self) -> str:
        name = "BL"
        for flag, tag in ((self.ms, "MS"), (self.block == "hru", "HRU"), (self.mr, "MR"), (self.hp, "HP")):
            if flag:
                name += "+" + tag
        return name

    def violations(self) -> list[str]:
        bad = []
        if self.stacks < 1:
            bad.append("stacks must be >= 1")
        if self.parts < 1:
            bad.append("parts must be >= 1")
        if self.channels < 2 or self.channels % 2:
            bad.append("channels must be an even number >= 2")
        if not 1 <= self.depth <= 3:
            bad.append("hourglass depth must be in 1..3")
        if self.input_size % (4 * 2**self.depth) or self.input_size <= 0:
            bad.append(f"input_size must be a positive multiple of {4 * 2**self.depth}")
        if self.block not in ("residual", "hru"):
            bad.append(f"block must be 'residual' or 'hru', got {self.block!r}")
        if self.attention_mode not in ("crf", "softmax"):
            bad.append(f"attention_mode must be 'crf' or 'softmax', got {self.attention_mode!r}")
        if self.hp and not self.ms:
            bad.append("HP requires MS")
        if self.mr and not self.ms:
            bad.append("MR requires MS")
        if self.part_start is not None and not 1 <= self.part_start <= self.stacks + 1:
            bad.append(f"part_start must be in 1..{self.stacks + 1}")
        if self.crf_steps < 1:
            bad.append("crf_steps must be >= 1")
        if self.crf_kernel < 1 or self.crf_kernel % 2 == 0:
            bad.append("crf_kernel must be odd")
        return bad

    def validate(self) -> "NetworkConfig":
        bad = self.violations()
        if bad:
            raise ConfigError("invalid network config: " + "; ".join(bad))
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)


def ablation_matrix(base: NetworkConfig) -> list[NetworkConfig]:
    """The five cumulative ablation variants, BL through BL+MS+HRU+MR+HP."""
    bl = base.replace(ms=False, mr=False, hp=False, block="residual")
    return [
        bl,
        bl.replace(ms=True),
        bl.replace(ms=True, block="hru"),
        bl.replace(ms=True, block="hru", mr=True),
        bl.replace(ms=True, block="hru", mr=True, hp=True),
    ]


def variant_config(base: NetworkConfig, name: str) -> NetworkConfig:
    for cfg in ablation_matrix(base):
        if cfg.variant == name:
            return cfg
    raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")


@dataclass
class StackOutput:
    heatmaps: Tensor
    holistic: dict[str, Any] = field(default_factory=dict)
    part_maps: list[AttentionMap] = field(default_factory=list)


class Stem(Module):
    """Input resolution down to heatmap resolution (factor 4)."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        half = channels // 2
        self.conv = ConvBNReLU(3, half, 7, rng, stride=2)
        self.res1 = ResidualUnit(half, channels, rng)
        self.res2 = ResidualUnit(channels, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.res1(self.conv(x))
        return self.res2(T.maxpool2x2(y))


class Stack(Module):
    def __init__(self, cfg: NetworkConfig, index: int, rng: np.random.Generator):
        super().__init__()
        c, p = cfg.channels, cfg.parts
        self.index = index
        self.part_stage = cfg.ms and cfg.hp and index + 1 >= cfg.first_part_stack
        self.ms, self.mr = cfg.ms, cfg.mr
        self.hourglass = Hourglass(cfg.depth, c, rng, cfg.block)
        self.head_res = ResidualUnit(c, c, rng)
        self.head_lin = ConvBNReLU(c, c, 1, rng)
        self.attention: list[AttentionGenerator] = []
        self.refine: Optional[AttentionGenerator] = None
        self.bank: Optional[PartAttentionBank] = None
        self.classifier: Optional[Conv2d] = None
        if cfg.ms:
            n_maps = len(cfg.ladder) if cfg.mr else 1
            self.attention = [AttentionGenerator(c, rng, cfg.attention_mode, cfg.crf) for _ in range(n_maps)]
            self.resolutions = cfg.ladder if cfg.mr else [cfg.heatmap_size]
            if self.part_stage:
                self.bank = PartAttentionBank(c, p, rng, cfg.attention_mode, cfg.crf)
            else:
                self.refine = AttentionGenerator(c, rng, cfg.attention_mode, cfg.crf)
        if self.bank is None:
            self.classifier = Conv2d(c, p, 1, rng)

    def forward(self, x: Tensor) -> tuple[StackOutput, Tensor]:
        hg, ladder = self.hourglass(x)
        f = self.head_lin(self.head_res(hg))
        out = StackOutput(heatmaps=None)  # type: ignore[arg-type]
        if not self.ms:
            out.heatmaps = self.classifier(f)
            return out, f
        ladder = dict(ladder)
        ladder[f.shape[-1]] = f
        if self.mr:
            gens = dict(zip(self.resolutions, self.attention))
            fused, h1, maps = multi_resolution_attention({r: ladder[r] for r in self.resolutions}, f, gens)
            out.holistic["fused"] = fused
            out.holistic["multires"] = maps
        else:
            phi = self.attention[0](f)
            h1 = apply_attention(f, phi)
            out.holistic["phi"] = phi
        if self.bank is not None:
            maps, _, heat = self.bank(h1)
            out.part_maps = maps
            out.heatmaps = heat
        else:
            refined, h2 = refine_attention(h1, self.refine)
            out.holistic["refined"] = refined
            out.heatmaps = self.classifier(h2)
        return out, f


class MCANet(Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        c, p = cfg.channels, cfg.parts
        self.stem = Stem(c, rng)
        self.stacks = [Stack(cfg, i, rng) for i in range(cfg.stacks)]
        self.remap_features = [Conv2d(c, c, 1, rng) for _ in range(cfg.stacks - 1)]
        self.remap_heatmaps = [Conv2d(p, c, 1, rng) for _ in range(cfg.stacks - 1)]

    def forward(self, images: Tensor) -> list[StackOutput]:
        images = T.as_tensor(images)
        cfg = self.config
        expected = (3, cfg.input_size, cfg.input_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ValueError(f"expected images N x {expected[0]} x {expected[1]} x {expected[2]}, got {images.shape}")
        with T.scope("stem"):
            x = self.stem(images)
        outputs = []
        for i, stack in enumerate(self.stacks):
            with T.scope(f"stack{i + 1}"):
                out, f = stack(x)
                outputs.append(out)
                if i < len(self.stacks) - 1:
                    x = T.add_n([x, self.remap_features[i](f), self.remap_heatmaps[i](out.heatmaps)])
        return outputs

    def predict(self, images) -> np.ndarray:
        """Last-stack heatmaps as a numpy array."""
        return self.forward(images)[-1].heatmaps.data


def build_network(config: NetworkConfig) -> MCANet:
    return MCANet(config)


def stack_losses(outputs: Sequence[StackOutput], target) -> list[Tensor]:
    if not outputs:
        raise ValueError("no stack outputs")
    losses = []
    for i, out in enumerate(outputs):
        if out is None or out.heatmaps is None:
            raise ValueError(f"stack {i + 1} produced no heatmaps")
        with T.scope(f"stack{i + 1}"):
            losses.append(T.mse_loss(out.heatmaps, target))
    return losses


def total_loss(outputs: Sequence[StackOutput], target) -> Tensor:
    """Heatmap MSE summed over stacks (every stack is supervised)."""
    losses = stack_losses(outputs, target)
    return losses[0] if len(losses) == 1 else T.add_n(losses)


def grad_norm(params: Sequence[Tensor]) -> float:
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)))


def train_step(net: MCANet, images, targets, optimizer: RMSprop) -> dict[str, Any]:
    """Forward, loss, backward and one RMSprop update."""
    net.train()
    optimizer.zero_grad()
    outputs = net(images)
    losses = stack_losses(outputs, targets)
    for i, l in enumerate(losses):
        if not np.isfinite(l.data):
            raise NonFiniteError(f"non-finite loss at stack {i + 1}")
    loss = losses[0] if len(losses) == 1 else T.add_n(losses)
    loss.backward()
    gnorm = grad_norm(optimizer.params)
    if not np.isfinite(gnorm):
        raise NonFiniteError("non-finite gradient norm")
    optimizer.step()
    return {
        "loss": float(loss.data),
        "stack_losses": [float(l.data) for l in losses],
        "grad_norm": gnorm,
    }


class MetricsWriter:
    """Append-only CSV: step, total loss, per-stack losses, grad norm.

    Wall-clock times go to a separate ``timing.csv`` so the metrics file
    stays byte-identical between runs with the same seed.
    """

    def __init__(self, path, stacks: int, timing_path=None):
        self.path = path
        self.timing_path = timing_path
        self.start = time.perf_counter()
        header = ["step", "loss"] + [f"stack{i + 1}_loss" for i in range(stacks)] + ["grad_norm"]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
        if timing_path is not None:
            with open(timing_path, "w", newline="") as fh:
                fh.write("step,wall_time\n")

    def write(self, step: int, metrics: dict[str, Any]) -> None:
        row = [str(step), repr(metrics["loss"])] + [repr(v) for v in metrics["stack_losses"]] + [repr(metrics["grad_norm"])]
        with open(self.path, "a", newline="") as fh:
            fh.write(",".join(row) + "\n")
        if self.timing_path is not None:
            with open(self.timing_path, "a", newline="") as fh:
                fh.write(f"{step},{time.perf_counter() - self.start:.3f}\n")


def save_network(net: MCANet, path, extra: Optional[dict[str, Any]] = None) -> None:
    from .checkpoint import save_checkpoint

    config = {"network": net.config.to_dict()}
    if extra:
        config.update(extra)
    save_checkpoint(path, net.state_dict(), config)


def load_network(path) -> tuple[MCANet, dict[str, Any]]:
    from .checkpoint import load_checkpoint

    arrays, config = load_checkpoint(path)
    net = build_network(NetworkConfig.from_dict(config["network"]))
    net.load_state_dict(arrays)
    return net, config
