"""Dataset-level training and evaluation loops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data.annotations import PoseAnnotation
from .data.transforms import NO_AUGMENT, AugmentParams, augment, crop_warp, render_gt_heatmaps
from .evaluation import MetricReport, pck, pckh, predict, tta_predict
from .network import MCANet, MetricsWriter, train_step
from .optim import RMSprop

Sample = tuple[np.ndarray, PoseAnnotation]


def prepare(image: np.ndarray, ann: PoseAnnotation, input_size: int, params: AugmentParams = NO_AUGMENT,
            rng: Optional[np.random.Generator] = None, sigma: float = 1.0):
    """Crop to the network input, optionally augment, and render targets."""
    img, a = crop_warp(image, ann, input_size)
    if params != NO_AUGMENT:
        img, a = augment(img, a, params, rng or np.random.default_rng(0))
    return img, a, render_gt_heatmaps(a, input_size // 4, sigma)


def prepare_all(dataset: Sequence[Sample], input_size: int, sigma: float = 1.0):
    imgs, anns, targets = zip(*(prepare(img, ann, input_size, sigma=sigma) for img, ann in dataset))
    return np.stack(imgs), list(anns), np.stack(targets)


@dataclass
class TrainSettings:
    steps: int = 300
    batch_size: int = 4
    lr: float = 2.5e-4
    seed: int = 0
    augment: AugmentParams = NO_AUGMENT
    sigma: float = 1.0
    val_every: int = 0
    checkpoint_every: int = 0


def fit(
    net: MCANet,
    dataset: Sequence[Sample],
    settings: TrainSettings,
    writer: Optional[MetricsWriter] = None,
    on_validate: Optional[Callable[[int, MetricReport, MetricReport], None]] = None,
    on_checkpoint: Optional[Callable[[int], None]] = None,
) -> list[dict]:
    """RMSprop training from a fixed seed.

    Batches are drawn by walking a fresh permutation of the dataset each
    epoch. Without augmentation the cropped inputs and targets are computed
    once up front.
    """
    rng = np.random.default_rng(settings.seed)
    size = net.config.input_size
    opt = RMSprop(net.parameters(), lr=settings.lr)
    fixed = prepare_all(dataset, size, settings.sigma) if settings.augment == NO_AUGMENT else None
    order: list[int] = []
    history = []
    for step in range(1, settings.steps + 1):
        batch = []
        while len(batch) < min(settings.batch_size, len(dataset)):
            if not order:
                order = list(rng.permutation(len(dataset)))
            batch.append(order.pop(0))
        if fixed is not None:
            images, targets = fixed[0][batch], fixed[2][batch]
        else:
            prepared = [prepare(*dataset[i], size, settings.augment, rng, settings.sigma) for i in batch]
            images = np.stack([p[0] for p in prepared])
            targets = np.stack([p[2] for p in prepared])
        metrics = train_step(net, images, targets, opt)
        history.append(metrics)
        if writer is not None:
            writer.write(step, metrics)
        if settings.val_every and on_validate and step % settings.val_every == 0:
            pck_report, pckh_report, _ = evaluate(net, dataset)
            on_validate(step, pck_report, pckh_report)
            net.train()
        if settings.checkpoint_every and on_checkpoint and step % settings.checkpoint_every == 0:
            on_checkpoint(step)
    return history


def evaluate(net: MCANet, dataset: Sequence[Sample], pck_threshold: float = 0.2, pckh_threshold: float = 0.5,
             scales: Sequence[float] = (1.0,), flip: bool = False, batch_size: int = 16):
    """PCK and PCKh of ``net`` on ``dataset`` (cropped, no augmentation)."""
    images, anns, _ = prepare_all(dataset, net.config.input_size)
    net.eval()
    if tuple(scales) == (1.0,) and not flip:
        preds = []
        for i in range(0, len(images), batch_size):
            preds.extend(predict(net, images[i : i + batch_size]))
    else:
        preds = [tta_predict(net, img, scales, flip, ann.flip_perm) for img, ann in zip(images, anns)]
    return pck(preds, anns, pck_threshold), pckh(preds, anns, pckh_threshold), preds
