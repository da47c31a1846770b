"""Heatmap decoding, PCK / PCKh and test-time augmentation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data.annotations import PoseAnnotation
from .data.transforms import HEATMAP_STRIDE, rotate_scale_about, warp_image

DESK_SCALES = (0.9, 1.0, 1.1)
PYRAMID_SCALES = (0.75, 0.85, 0.95, 1.05, 1.15, 1.25)  # six-scale pyramid preset
TTA_PRESETS = {
    "none": ((1.0,), False),
    "flip": ((1.0,), True),
    "desk": (DESK_SCALES, True),
    "pyramid": (PYRAMID_SCALES, True),
}


@dataclass
class Prediction:
    keypoints: np.ndarray  # P x 2, input-image pixels
    confidence: np.ndarray  # P


def decode_heatmap(heatmaps: np.ndarray, stride: int = HEATMAP_STRIDE) -> Prediction:
    """Argmax per part, a quarter-pixel nudge toward the larger horizontal and
    vertical neighbour, then scaling to input pixels.

    Ties in the argmax go to the smallest row-major index.
    """
    hm = np.asarray(heatmaps, dtype=np.float64)
    if hm.ndim != 3:
        raise ValueError(f"expected P x H x W heatmaps, got {hm.shape}")
    p, h, w = hm.shape
    flat = hm.reshape(p, -1)
    idx = flat.argmax(axis=1)
    ys, xs = np.divmod(idx, w)
    coords = np.stack([xs, ys], axis=1).astype(np.float64)
    for k in range(p):
        x, y = xs[k], ys[k]
        if 0 < x < w - 1:
            coords[k, 0] += 0.25 * np.sign(hm[k, y, x + 1] - hm[k, y, x - 1])
        if 0 < y < h - 1:
            coords[k, 1] += 0.25 * np.sign(hm[k, y + 1, x] - hm[k, y - 1, x])
    return Prediction(coords * stride, flat[np.arange(p), idx])


@dataclass
class MetricReport:
    rates: np.ndarray  # per part; NaN where no visible instance was evaluated
    counts: np.ndarray  # evaluated instances per part
    threshold: float
    normalizer: str
    part_names: tuple[str, ...] = ()
    skipped: int = 0

    @property
    def mean(self) -> float:
        ok = self.counts > 0
        return float(self.rates[ok].mean())

    def to_csv(self) -> str:
        names = self.part_names or tuple(f"part{i}" for i in range(len(self.rates)))
        lines = ["part,rate,count"]
        for name, rate, n in zip(names, self.rates, self.counts):
            lines.append(f"{name},{'' if n == 0 else repr(float(rate))},{int(n)}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return f"{self.normalizer}@{self.threshold:g} mean={self.mean:.4f} over {int((self.counts > 0).sum())} parts"


def _correct(preds, gts: Sequence[PoseAnnotation], threshold: float, norms: np.ndarray, keep: np.ndarray):
    p = gts[0].parts
    hits = np.zeros(p)
    counts = np.zeros(p, dtype=int)
    for pred, gt, norm, k in zip(preds, gts, norms, keep):
        if not k:
            continue
        kp = pred.keypoints if isinstance(pred, Prediction) else np.asarray(pred)
        d = np.hypot(*(kp - gt.keypoints).T)
        vis = gt.visible
        hits += (d <= threshold * norm) & vis
        counts += vis
    return hits, counts


def _report(preds, gts, threshold, norms, normalizer, keep=None) -> MetricReport:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} annotations")
    if not gts:
        raise ValueError("empty evaluation set")
    keep = np.ones(len(gts), dtype=bool) if keep is None else keep
    hits, counts = _correct(preds, gts, threshold, norms, keep)
    if counts.sum() == 0:
        raise ValueError("no visible keypoints to evaluate")
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return MetricReport(rates, counts, threshold, normalizer, tuple(gts[0].part_names), int((~keep).sum()))


def pck(preds, gts: Sequence[PoseAnnotation], threshold: float = 0.2) -> MetricReport:
    """Fraction of visible keypoints within ``threshold`` torso diagonals."""
    norms = np.array([g.torso_size for g in gts])
    return _report(preds, gts, threshold, norms, "PCK")


def pckh(preds, gts: Sequence[PoseAnnotation], threshold: float = 0.5) -> MetricReport:
    """Fraction of visible keypoints within ``threshold`` head-segment lengths.

    Figures with a non-positive head length are skipped with a warning.
    """
    norms = np.array([g.head_size for g in gts])
    keep = np.isfinite(norms) & (norms > 0)
    if not keep.all():
        warnings.warn(f"skipping {int((~keep).sum())} figure(s) with degenerate head size", stacklevel=2)
    return _report(preds, gts, threshold, norms, "PCKh", keep)


# ---------------------------------------------------------------------------
# test-time augmentation
# ---------------------------------------------------------------------------

def _zoom(arr: np.ndarray, factor: float) -> np.ndarray:
    size = arr.shape[-1]
    c = (size - 1) / 2.0
    return warp_image(arr, rotate_scale_about((c, c), 0.0, factor))


def predict_heatmaps(net, images: np.ndarray) -> np.ndarray:
    net.eval()
    return net.predict(images)


def tta_heatmaps(net, image: np.ndarray, scales: Sequence[float] = DESK_SCALES, flip: bool = True,
                 flip_perm: Optional[Sequence[int]] = None) -> np.ndarray:
    """Average last-stack heatmaps over zoomed and mirrored copies of one image.

    Each copy's heatmaps are mapped back to the reference frame before
    averaging. A zoom factor of exactly 1 is not resampled.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("TTA needs at least one scale")
    if any(not s > 0 for s in scales):
        raise ValueError(f"TTA scales must be positive, got {scales}")
    batch, undo = [], []
    for s in scales:
        zoomed = image if s == 1.0 else _zoom(image, s)
        batch.append(zoomed)
        undo.append((s, False))
        if flip:
            batch.append(zoomed[:, :, ::-1])
            undo.append((s, True))
    hms = predict_heatmaps(net, np.stack(batch))
    parts = hms.shape[1]
    perm = list(range(parts)) if flip_perm is None else list(flip_perm)
    acc = np.zeros(hms.shape[1:])
    for hm, (s, flipped) in zip(hms, undo):
        if flipped:
            hm = hm[perm][:, :, ::-1]
        if s != 1.0:
            hm = _zoom(hm, 1.0 / s)
        acc += hm
    return acc / len(undo)


def tta_predict(net, image: np.ndarray, scales: Sequence[float] = DESK_SCALES, flip: bool = True,
                flip_perm: Optional[Sequence[int]] = None) -> Prediction:
    return decode_heatmap(tta_heatmaps(net, image, scales, flip, flip_perm))


def predict(net, images: np.ndarray) -> list[Prediction]:
    """Plain single-pass inference on an N x 3 x H x W batch."""
    return [decode_heatmap(hm) for hm in predict_heatmaps(net, images)]
