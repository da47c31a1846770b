"""Pose annotations and their on-disk format.

Annotation file (UTF-8 JSON)::

    {
      "format": "mcapose-annotations",
      "version": 1,
      "parts": ["head", "neck", "l_wrist", "r_wrist"],
      "pairs": [[2, 3]],
      "records": [
        {"id": "000000",
         "keypoints": [[x, y, visible], ...],   # one row per part, pixels
         "center": [x, y],
         "scale": s,                            # side of the person crop box, pixels
         "head_size": h,                        # head-segment length, pixels
         "torso_size": t}                       # torso diagonal, pixels
      ]
    }

Images live next to it as ``images/<id>.ppm``. Floats are written with full
precision, so a save/load round trip is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..pnm import read_ppm, write_ppm

FORMAT = "mcapose-annotations"
VERSION = 1


class AnnotationError(ValueError):
    pass


def flip_permutation(pairs: Sequence[Sequence[int]], parts: int) -> list[int]:
    perm = list(range(parts))
    for i, j in pairs:
        perm[i], perm[j] = j, i
    if any(perm[perm[i]] != i for i in range(parts)):
        raise AnnotationError(f"left-right pairs {pairs} are not an involution")
    return perm


@dataclass
class PoseAnnotation:
    image_id: str
    keypoints: np.ndarray  # P x 2, (x, y) pixels
    visible: np.ndarray  # P, bool
    center: np.ndarray  # 2
    scale: float
    part_names: tuple[str, ...]
    pairs: list[tuple[int, int]] = field(default_factory=list)
    head_size: float = 0.0
    torso_size: float = 0.0

    @property
    def parts(self) -> int:
        return len(self.part_names)

    @property
    def flip_perm(self) -> list[int]:
        return flip_permutation(self.pairs, self.parts)

    def copy(self) -> "PoseAnnotation":
        return PoseAnnotation(
            self.image_id,
            self.keypoints.copy(),
            self.visible.copy(),
            self.center.copy(),
            float(self.scale),
            tuple(self.part_names),
            list(self.pairs),
            float(self.head_size),
            float(self.torso_size),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoseAnnotation):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and np.array_equal(self.keypoints, other.keypoints)
            and np.array_equal(self.visible, other.visible)
            and np.array_equal(self.center, other.center)
            and self.scale == other.scale
            and tuple(self.part_names) == tuple(other.part_names)
            and [tuple(p) for p in self.pairs] == [tuple(p) for p in other.pairs]
            and self.head_size == other.head_size
            and self.torso_size == other.torso_size
        )


def _record(ann: PoseAnnotation) -> dict:
    return {
        "id": ann.image_id,
        "keypoints": [[float(x), float(y), bool(v)] for (x, y), v in zip(ann.keypoints, ann.visible)],
        "center": [float(c) for c in ann.center],
        "scale": float(ann.scale),
        "head_size": float(ann.head_size),
        "torso_size": float(ann.torso_size),
    }


def dumps_annotations(anns: Sequence[PoseAnnotation], parts: Sequence[str] = (), pairs=()) -> str:
    if anns:
        parts, pairs = anns[0].part_names, anns[0].pairs
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "parts": list(parts),
        "pairs": [list(p) for p in pairs],
        "records": [_record(a) for a in anns],
    }
    return json.dumps(doc, indent=1) + "\n"


def _fail(where: str, msg: str):
    raise AnnotationError(f"{where}: {msg}")


def loads_annotations(text: str, source: str = "<string>") -> list[PoseAnnotation]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        _fail(source, f"not an {FORMAT} file")
    if doc.get("version") != VERSION:
        _fail(source, f"unsupported version {doc.get('version')!r}")
    try:
        parts = tuple(str(p) for p in doc["parts"])
        pairs = [(int(i), int(j)) for i, j in doc["pairs"]]
        records = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        _fail(source, f"bad header: {exc!r}")
    flip_permutation(pairs, len(parts))
    out = []
    for k, rec in enumerate(records):
        where = f"{source}: record {k}"
        try:
            kps = np.array([[float(x), float(y)] for x, y, _ in rec["keypoints"]], dtype=np.float64).reshape(-1, 2)
            vis = np.array([bool(v) for _, _, v in rec["keypoints"]], dtype=bool)
            center = np.array([float(c) for c in rec["center"]], dtype=np.float64)
            ann = PoseAnnotation(
                str(rec["id"]),
                kps,
                vis,
                center,
                float(rec["scale"]),
                parts,
                list(pairs),
                float(rec.get("head_size", 0.0)),
                float(rec.get("torso_size", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            _fail(where, f"malformed record ({exc!r})")
        if len(kps) != len(parts):
            _fail(where, f"{len(kps)} keypoints for {len(parts)} parts")
        if center.shape != (2,):
            _fail(where, "center must have two coordinates")
        out.append(ann)
    return out


def save_annotations(dataset, path) -> None:
    """Write ``dataset`` (a sequence of ``(image, annotation)`` pairs) to a
    directory: ``annotations.json`` plus ``images/<id>.ppm``."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    anns = []
    for image, ann in dataset:
        write_ppm(root / "images" / f"{ann.image_id}.ppm", image)
        anns.append(ann)
    (root / "annotations.json").write_text(dumps_annotations(anns))


def load_annotations(path, with_images: bool = True):
    """Inverse of :func:`save_annotations`. Returns a list of
    ``(image, annotation)`` pairs (image is None without ``with_images``)."""
    root = Path(path)
    file = root / "annotations.json" if root.is_dir() else root
    anns = loads_annotations(file.read_text(), str(file))
    out = []
    for ann in anns:
        image = read_ppm(file.parent / "images" / f"{ann.image_id}.ppm") if with_images else None
        out.append((image, ann))
    return out
