from .annotations import (
    AnnotationError,
    PoseAnnotation,
    flip_permutation,
    load_annotations,
    save_annotations,
)
from .synth import SynthSpec, synth_generate, synth_sample
from .transforms import (
    NO_AUGMENT,
    AugmentParams,
    apply_affine,
    augment,
    crop_matrix,
    crop_warp,
    flip,
    render_gt_heatmaps,
    to_heatmap_coords,
    to_image_coords,
)

__all__ = [
    "AnnotationError",
    "AugmentParams",
    "NO_AUGMENT",
    "PoseAnnotation",
    "SynthSpec",
    "apply_affine",
    "augment",
    "crop_matrix",
    "crop_warp",
    "flip",
    "flip_permutation",
    "load_annotations",
    "render_gt_heatmaps",
    "save_annotations",
    "synth_generate",
    "synth_sample",
    "to_heatmap_coords",
    "to_image_coords",
]
