"""Tour of the synthetic stick-figure data.

Generates a few figures, writes them as an annotated dataset, and shows what
the training pipeline feeds the network: a crop, an augmentation and the
ground-truth heatmaps.

    python demos/01_synthetic_data.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from mcapose.data import AugmentParams, SynthSpec, augment, crop_warp, render_gt_heatmaps, save_annotations, synth_generate
from mcapose.pnm import write_pgm, write_ppm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/data")
spec = SynthSpec(seed=0, clutter_density=0.5)
data = synth_generate(spec, 4)
save_annotations(data, out)
print(f"wrote 4 figures to {out}")

image, ann = data[0]
for name, (x, y) in zip(ann.part_names, ann.keypoints):
    print(f"  {name:8s} at ({x:5.1f}, {y:5.1f})")
print(f"  head size {ann.head_size:.2f} px, torso diagonal {ann.torso_size:.2f} px, box {ann.scale:.1f} px")

# the network sees a 64x64 crop of the person box
crop, crop_ann = crop_warp(image, ann, 64)

# one random augmentation: rotation, rescale, maybe a mirror, colour jitter
rng = np.random.default_rng(5)
aug, aug_ann = augment(crop, crop_ann, AugmentParams(), rng)
write_ppm(out / "augmented.ppm", aug)
print("augmented keypoints:", np.round(aug_ann.keypoints, 1).tolist(), "visible:", aug_ann.visible.tolist())

# targets live on a 16x16 grid (stride 4); one Gaussian per part
hm = render_gt_heatmaps(aug_ann, 16)
for p, name in enumerate(aug_ann.part_names):
    write_pgm(out / f"target_{name}.pgm", hm[p])
    row, col = np.unravel_index(np.argmax(hm[p]), hm[p].shape)
    print(f"  target {name:8s} peak at heatmap cell ({col}, {row})")
