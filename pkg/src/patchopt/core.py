"""Shared image and bounding-box primitives.

Everything downstream (mask rendering, the toy detector, the attack loop)
is built on the types here: float RGB images, corner-coordinate boxes,
IoU, greedy NMS and bit-exact PPM round-trips.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_IMAGE_SIDE = 16384


class ImageFormatError(ValueError):
    """Raised when an image file cannot be parsed or has unusable dimensions."""


@dataclass(frozen=True)
class Image:
    """W x H x 3 grid of real-valued RGB intensities, nominally in [0, 1].

    ``data`` is indexed ``[row, col, channel]`` with row 0 at the top.
    Instances are treated as immutable values; a "displayable" image is one
    whose intensities all lie in [0, 1].
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image data must have shape (H, W, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def is_displayable(self) -> bool:
        return bool((self.data >= 0.0).all() and (self.data <= 1.0).all())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with continuous corner coordinates, x1 <= x2, y1 <= y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(dets: Sequence, iou_threshold: float, per_category: bool = True) -> list:
    """Greedy non-maximum suppression in descending confidence order.

    Works on any objects exposing ``box`` (BBox), ``score`` (float) and
    ``category``. A detection is dropped when its IoU with an already-kept
    detection of the same category strictly exceeds ``iou_threshold``; with
    ``per_category=False`` the category comparison is skipped. Confidence ties
    break toward the lower input index, so the result is deterministic.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list = []
    for i in order:
        d = dets[i]
        suppressed = False
        for k in kept:
            if per_category and k.category != d.category:
                continue
            if iou(k.box, d.box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(d)
    return kept


def quantize_intensity(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to 8-bit with round-half-up."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def write_image(img: Image, path) -> None:
    """Write a binary PPM (P6, maxval 255). Values are clamped then quantized."""
    q = quantize_intensity(img.data)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def _read_ppm_tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    """Parse ``count`` whitespace/comment-delimited integers, return (values, offset)."""
    tokens: list[int] = []
    i = 0
    n = len(blob)
    while len(tokens) < count:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace():
            i += 1
        tok = blob[start:i]
        if not tok:
            raise ImageFormatError("truncated PPM header")
        try:
            tokens.append(int(tok))
        except ValueError as exc:
            raise ImageFormatError(f"bad PPM header token {tok!r}") from exc
    if i >= n or not blob[i : i + 1].isspace():
        raise ImageFormatError("missing whitespace after PPM header")
    return tokens, i + 1


def read_image(path) -> Image:
    """Read a binary PPM (P6, maxval 255) into a float image in [0, 1]."""
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise ImageFormatError(f"unsupported image format in {path!r} (want P6)")
    vals, offset = _read_ppm_tokens(blob[2:], 3)
    width, height, maxval = vals
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval} (want 255)")
    if not (0 < width <= MAX_IMAGE_SIDE and 0 < height <= MAX_IMAGE_SIDE):
        raise ImageFormatError(f"image dimensions out of range: {width}x{height}")
    body = blob[2 + offset :]
    expected = width * height * 3
    if len(body) < expected:
        raise ImageFormatError(f"PPM body truncated: {len(body)} < {expected} bytes")
    raw = np.frombuffer(body[:expected], dtype=np.uint8)
    data = raw.reshape(height, width, 3).astype(np.float64) / 255.0
    return Image(data)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed plus optional sub-stream ids.

    The same (seed, stream) pair always yields a bit-identical sequence, so
    every stochastic procedure in the package is reproducible.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
