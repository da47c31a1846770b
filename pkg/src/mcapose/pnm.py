"""Binary portable graymap (P5) and pixmap (P6) files, 8-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a 3 x H x W float image in [0, 1]."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected 3 x H x W image, got {image.shape}")
    _, h, w = image.shape
    body = to_uint8(image).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + body)


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an H x W float map in [0, 1]."""
    if gray.ndim != 2:
        raise ValueError(f"expected H x W map, got {gray.shape}")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + to_uint8(gray).tobytes())


def _read(path) -> tuple[str, int, int, bytes]:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    magic, w, h, maxval = tokens[0].decode(), int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported")
    return magic, w, h, raw[pos + 1 :]


def read_ppm(path) -> np.ndarray:
    magic, w, h, body = _read(path)
    if magic != "P6":
        raise ValueError(f"{path}: not a binary pixmap")
    arr = np.frombuffer(body, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    magic, w, h, body = _read(path)
    if magic != "P5":
        raise ValueError(f"{path}: not a binary graymap")
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w).astype(np.float64) / 255.0
