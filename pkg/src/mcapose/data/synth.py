"""Procedural stick-figure images with exact keypoint annotations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import PoseAnnotation

JOINTS = (
    "head", "head_top", "neck", "pelvis",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)  # fmt: skip

LIMBS = (
    ("neck", "pelvis"), ("l_shoulder", "r_shoulder"), ("l_hip", "r_hip"),
    ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"), ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"),
    ("l_hip", "l_knee"), ("l_knee", "l_ankle"), ("r_hip", "r_knee"), ("r_knee", "r_ankle"),
)  # fmt: skip

MARKED = ("neck", "pelvis", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
          "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle")  # fmt: skip

DEFAULT_PARTS = ("head", "neck", "l_wrist", "r_wrist")

LIMB_COLOR = np.array([0.95, 0.85, 0.55])
MARKER_COLOR = np.array([0.2, 0.95, 0.95])
HEAD_COLOR = np.array([0.95, 0.55, 0.45])


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    image_size: int = 64
    height_range: tuple[float, float] = (0.65, 0.75)  # body height / image size
    arm_range: tuple[float, float] = (10.0, 170.0)  # upper arm, degrees out from hanging down
    bend_range: tuple[float, float] = (-90.0, 90.0)
    leg_range: tuple[float, float] = (0.0, 30.0)
    tilt_range: tuple[float, float] = (-15.0, 15.0)
    clutter_density: float = 0.5  # clutter strokes per 16x16 patch; 0 also disables distractors
    distractor_prob: float = 0.5
    parts: tuple[str, ...] = DEFAULT_PARTS
    limb_width: float = 1.0  # half-thickness in pixels
    marker_radius: float = 1.2
    head_radius: float = 0.07  # fraction of body height

    def __post_init__(self):
        for name in ("height_range", "arm_range", "bend_range", "leg_range", "tilt_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi, got {(lo, hi)}")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.clutter_density < 0 or not 0 <= self.distractor_prob <= 1:
            raise ValueError("clutter density must be >= 0 and distractor probability in [0, 1]")
        unknown = [p for p in self.parts if p not in JOINTS]
        if unknown:
            raise ValueError(f"unknown part names {unknown}")


def part_pairs(parts: Sequence[str]) -> list[tuple[int, int]]:
    idx = {p: i for i, p in enumerate(parts)}
    pairs = []
    for p, i in idx.items():
        if p.startswith("l_") and "r_" + p[2:] in idx:
            pairs.append((i, idx["r_" + p[2:]]))
    return pairs


def _unit(deg: float) -> np.ndarray:
    """Direction for an angle measured from straight down, positive toward +x."""
    a = np.deg2rad(deg)
    return np.array([np.sin(a), np.cos(a)])


def sample_skeleton(spec: SynthSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Joint positions (x, y) in pixels for one figure, centered on its box."""
    s = spec.image_size
    height = rng.uniform(*spec.height_range) * s
    tilt = rng.uniform(*spec.tilt_range)
    down = _unit(tilt)
    right = np.array([down[1], -down[0]])  # +x when upright
    j: dict[str, np.ndarray] = {}
    j["neck"] = np.zeros(2)
    j["pelvis"] = j["neck"] + 0.32 * height * down
    j["head"] = j["neck"] - 0.11 * height * down
    j["head_top"] = j["head"] - spec.head_radius * height * down
    # the figure faces the camera, so its left side is on the image right
    for side, sign in (("l", 1.0), ("r", -1.0)):
        j[f"{side}_shoulder"] = j["neck"] + sign * 0.11 * height * right
        j[f"{side}_hip"] = j["pelvis"] + sign * 0.08 * height * right
        upper = tilt + sign * rng.uniform(*spec.arm_range)
        lower = upper + sign * rng.uniform(*spec.bend_range)
        j[f"{side}_elbow"] = j[f"{side}_shoulder"] + 0.16 * height * _unit(upper)
        j[f"{side}_wrist"] = j[f"{side}_elbow"] + 0.14 * height * _unit(lower)
        thigh = tilt + sign * rng.uniform(*spec.leg_range)
        shin = thigh + sign * rng.uniform(-10.0, 10.0)
        j[f"{side}_knee"] = j[f"{side}_hip"] + 0.24 * height * _unit(thigh)
        j[f"{side}_ankle"] = j[f"{side}_knee"] + 0.24 * height * _unit(shin)
    pts = np.array(list(j.values()))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mid = (lo + hi) / 2.0
    return {k: v - mid for k, v in j.items()}


def _segment_coverage(xx, yy, a, b, radius) -> np.ndarray:
    d = b - a
    length2 = float(d @ d)
    if length2 == 0.0:
        t = np.zeros_like(xx)
    else:
        t = np.clip(((xx - a[0]) * d[0] + (yy - a[1]) * d[1]) / length2, 0.0, 1.0)
    dist = np.hypot(xx - (a[0] + t * d[0]), yy - (a[1] + t * d[1]))
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _paint(img: np.ndarray, cov: np.ndarray, color: np.ndarray) -> None:
    img *= 1.0 - cov
    img += color[:, None, None] * cov


def render_figure(img: np.ndarray, joints: dict[str, np.ndarray], spec: SynthSpec, height: float) -> None:
    s = img.shape[-1]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    for a, b in LIMBS:
        _paint(img, _segment_coverage(xx, yy, joints[a], joints[b], spec.limb_width), LIMB_COLOR)
    head_r = float(np.hypot(*(joints["head_top"] - joints["head"])))
    _paint(img, _segment_coverage(xx, yy, joints["head"], joints["head"], head_r), HEAD_COLOR)
    for name in MARKED:
        p = joints[name]
        _paint(img, _segment_coverage(xx, yy, p, p, spec.marker_radius), MARKER_COLOR)


def render_clutter(img: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> None:
    s = img.shape[-1]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    if spec.clutter_density == 0:
        return
    n = int(rng.poisson(spec.clutter_density * (s / 16) ** 2))
    for _ in range(n):
        a = rng.uniform(0, s, 2)
        b = a + rng.normal(0, s / 6, 2)
        color = rng.uniform(0.0, 0.7, 3)
        _paint(img, _segment_coverage(xx, yy, a, b, rng.uniform(0.5, 1.5)) * 0.8, color)
    if rng.random() < spec.distractor_prob:
        # a limb-coloured stray segment, like a second person's arm
        a = rng.uniform(0, s, 2)
        b = a + _unit(rng.uniform(0, 360)) * rng.uniform(0.15, 0.3) * s
        _paint(img, _segment_coverage(xx, yy, a, b, spec.limb_width), LIMB_COLOR)


def synth_sample(spec: SynthSpec, index: int) -> tuple[np.ndarray, PoseAnnotation]:
    """Sample ``index`` of the dataset defined by ``spec`` (pure function)."""
    rng = np.random.default_rng([spec.seed, index])
    s = spec.image_size
    for _ in range(1000):
        joints = sample_skeleton(spec, rng)
        offset = (s - 1) / 2.0 + rng.uniform(-0.05, 0.05, 2) * s
        joints = {k: v + offset for k, v in joints.items()}
        pts = np.array(list(joints.values()))
        margin = 2.0
        if pts.min() >= margin and pts.max() <= s - 1 - margin:
            break
    else:  # pragma: no cover - ranges are sized so this never happens
        raise RuntimeError("could not place a figure inside the image")
    pts = np.array(list(joints.values()))
    height = float(pts[:, 1].max() - pts[:, 1].min())
    bg = rng.uniform(0.05, 0.35, 3)
    img = np.broadcast_to(bg[:, None, None], (3, s, s)).copy()
    render_clutter(img, spec, rng)
    render_figure(img, joints, spec, height)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ann = PoseAnnotation(
        image_id=f"{index:06d}",
        keypoints=np.array([joints[p] for p in spec.parts]),
        visible=np.ones(len(spec.parts), dtype=bool),
        center=(lo + hi) / 2.0,
        scale=float(max(hi - lo) / 0.75),
        part_names=tuple(spec.parts),
        pairs=part_pairs(spec.parts),
        head_size=float(np.hypot(*(joints["head_top"] - joints["neck"]))),
        torso_size=float(np.hypot(*(joints["l_shoulder"] - joints["r_hip"]))),
    )
    return np.clip(img, 0.0, 1.0), ann


def synth_generate(spec: SynthSpec, count: int) -> list[tuple[np.ndarray, PoseAnnotation]]:
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    return [synth_sample(spec, i) for i in range(count)]
