"""Ground-truth heatmaps and the affine augmentation pipeline.

Coordinates are (x, y) in pixels with pixel centers on integers. All warps
are expressed as 2x3 forward matrices acting on (x, y, 1); images are
resampled bilinearly with zero fill through the inverse map, and keypoints
go through the forward map, so both see the same transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotations import PoseAnnotation

HEATMAP_STRIDE = 4


def to_heatmap_coords(xy, stride: int = HEATMAP_STRIDE) -> np.ndarray:
    return np.asarray(xy, dtype=np.float64) / stride


def to_image_coords(xy, stride: int = HEATMAP_STRIDE) -> np.ndarray:
    return np.asarray(xy, dtype=np.float64) * stride


def render_gt_heatmaps(ann: PoseAnnotation, size: int, sigma: float = 1.0, stride: int = HEATMAP_STRIDE) -> np.ndarray:
    """P x size x size peak-normalized Gaussians at the rounded heatmap-space
    keypoints; invisible or off-map parts get an all-zero channel."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    out = np.zeros((ann.parts, size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    for p, (xy, vis) in enumerate(zip(ann.keypoints, ann.visible)):
        if not vis:
            continue
        cx, cy = np.rint(to_heatmap_coords(xy, stride)).astype(int)
        if not (0 <= cx < size and 0 <= cy < size):
            continue
        out[p] = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))
    return out


# ---------------------------------------------------------------------------
# affine machinery
# ---------------------------------------------------------------------------

def _h(m: np.ndarray) -> np.ndarray:
    return np.vstack([m, [0.0, 0.0, 1.0]])


def compose(*mats: np.ndarray) -> np.ndarray:
    """``compose(A, B)`` applies B first, then A."""
    out = np.eye(3)
    for m in mats:
        out = out @ _h(m)
    return out[:2]


def invert(m: np.ndarray) -> np.ndarray:
    return np.linalg.inv(_h(m))[:2]


def rotate_scale_about(center, degrees: float, scale: float) -> np.ndarray:
    """Rotation (counter-clockwise on screen) and isotropic scale about ``center``."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a) * scale, np.sin(a) * scale
    # y points down on screen, so a visually counter-clockwise turn uses +s for x<-y
    lin = np.array([[c, s], [-s, c]])
    cx, cy = center
    t = np.array([cx, cy]) - lin @ np.array([cx, cy])
    return np.hstack([lin, t[:, None]])


def hflip_matrix(width: int) -> np.ndarray:
    return np.array([[-1.0, 0.0, width - 1.0], [0.0, 1.0, 0.0]])


def transform_points(m: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def warp_image(image: np.ndarray, m: np.ndarray, out_size: int | tuple[int, int] | None = None) -> np.ndarray:
    """Resample a C x H x W image under the forward map ``m`` (bilinear, zero fill)."""
    c, h, w = image.shape
    oh, ow = (h, w) if out_size is None else (out_size, out_size) if isinstance(out_size, int) else out_size
    if (oh, ow) == (h, w) and np.array_equal(m, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])):
        return image.copy()
    inv = invert(m)
    # ndimage works in (row, col) = (y, x)
    mat = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    off = np.array([inv[1, 2], inv[0, 2]])
    return np.stack(
        [ndimage.affine_transform(ch, mat, off, output_shape=(oh, ow), order=1, mode="constant", cval=0.0) for ch in image]
    )


def apply_affine(image: np.ndarray, ann: PoseAnnotation, m: np.ndarray, out_size=None, flipped: bool = False):
    """Warp ``image`` and ``ann`` together.

    ``flipped`` says the map contains a horizontal mirror, in which case the
    left-right part channels are swapped. Keypoints leaving the output frame
    become invisible (never clamped).
    """
    out = warp_image(image, m, out_size)
    _, oh, ow = out.shape
    new = ann.copy()
    new.keypoints = transform_points(m, ann.keypoints)
    new.center = transform_points(m, ann.center[None])[0]
    zoom = float(np.sqrt(abs(np.linalg.det(m[:, :2]))))
    new.scale = ann.scale * zoom
    new.head_size = ann.head_size * zoom
    new.torso_size = ann.torso_size * zoom
    if flipped:
        perm = ann.flip_perm
        new.keypoints = new.keypoints[perm]
        new.visible = new.visible[perm]
    x, y = new.keypoints[:, 0], new.keypoints[:, 1]
    inside = (x >= 0) & (x <= ow - 1) & (y >= 0) & (y <= oh - 1)
    new.visible = new.visible & inside
    return out, new


def flip(image: np.ndarray, ann: PoseAnnotation):
    return apply_affine(image, ann, hflip_matrix(image.shape[-1]), flipped=True)


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 30.0  # degrees, symmetric range
    scale: tuple[float, float] = (0.75, 1.25)
    flip: float = 0.5
    jitter: float = 0.2  # per-channel multiplicative amplitude

    def __post_init__(self):
        if self.rotation < 0 or not 0 < self.scale[0] <= self.scale[1] or not 0 <= self.flip <= 1 or self.jitter < 0:
            raise ValueError(f"invalid augmentation parameters {self}")


NO_AUGMENT = AugmentParams(rotation=0.0, scale=(1.0, 1.0), flip=0.0, jitter=0.0)


def augment_matrix(center, size: int, degrees: float, scale: float, flipped: bool) -> np.ndarray:
    m = rotate_scale_about(center, degrees, scale)
    return compose(hflip_matrix(size), m) if flipped else m


def augment(image: np.ndarray, ann: PoseAnnotation, params: AugmentParams, rng: np.random.Generator):
    """Random rotation and rescale about the person center, optional mirror,
    and per-channel color jitter."""
    degrees = rng.uniform(-params.rotation, params.rotation) if params.rotation else 0.0
    scale = rng.uniform(*params.scale) if params.scale[0] != params.scale[1] else params.scale[0]
    flipped = bool(rng.random() < params.flip) if params.flip else False
    factors = rng.uniform(1 - params.jitter, 1 + params.jitter, 3) if params.jitter else np.ones(3)
    m = augment_matrix(ann.center, image.shape[-1], degrees, scale, flipped)
    out, new = apply_affine(image, ann, m, flipped=flipped)
    if params.jitter:
        out = np.clip(out * factors[:, None, None], 0.0, 1.0)
    return out, new


def crop_matrix(center, scale: float, out_size: int) -> np.ndarray:
    """Map the square box of side ``scale`` around ``center`` onto an
    ``out_size`` square image."""
    if not scale > 0 or not np.isfinite(scale):
        raise ValueError(f"degenerate person scale {scale!r}")
    z = out_size / scale
    c = (out_size - 1) / 2.0
    cx, cy = center
    return np.array([[z, 0.0, c - z * cx], [0.0, z, c - z * cy]])


def crop_warp(image: np.ndarray, ann: PoseAnnotation, out_size: int):
    return apply_affine(image, ann, crop_matrix(ann.center, ann.scale, out_size), out_size)
