"""Differentiable patch-region parameterization.

The manipulated region is a weighted sum of rectangle primitives whose hard
edges are relaxed with a piecewise-cosine profile, so the rendered mask is
differentiable in every primitive's center, size and weight. The perturbation
applied to an image is delta = texture * mask, with the single-channel mask
broadcast across RGB.

Geometry of one primitive along one axis (half-size s/2, profile argument
z = (2*pi/s) * (x - c)):

  |x - c| <= s/4        plateau, value 1
  s/4 < |x - c| < 3s/4  cosine ramp from 1 down to 0
  |x - c| >= 3s/4       outside the support, value 0

so the 0.5 level set sits at |x - c| = s/2 and the primitive's nominal area
s1*s2 matches the half-level pixel area up to discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, Image, make_rng

_HALF_PI = 0.5 * np.pi
_THREE_HALF_PI = 1.5 * np.pi


def phi(z):
    """Piecewise-cosine boundary profile: 1 on the plateau, cosine ramps, then 0.

    Continuous everywhere (the branch limits agree at |z| = pi/2 and 3*pi/2).
    Accepts scalars or arrays.
    """
    arr = np.asarray(z, dtype=np.float64)
    az = np.abs(arr)
    ramp = (az > _HALF_PI) & (az < _THREE_HALF_PI)
    out = np.where(az <= _HALF_PI, 1.0, 0.0)
    out = np.where(ramp, 0.5 * (np.cos(az - _HALF_PI) + 1.0), out)
    if arr.ndim == 0:
        return float(out)
    return out


def phi_grad(z):
    """Derivative of phi; 0 on the plateau, outside the support and at the
    exact branch boundaries (measure-zero convention)."""
    arr = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(arr)
    pos = (arr > _HALF_PI) & (arr < _THREE_HALF_PI)
    neg = (arr < -_HALF_PI) & (arr > -_THREE_HALF_PI)
    out = np.where(pos, -0.5 * np.sin(arr - _HALF_PI), out)
    out = np.where(neg, -0.5 * np.sin(arr + _HALF_PI), out)
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass
class RectPrimitive:
    """One relaxed rectangle: center (x, y), size (width, height), weight."""

    center: tuple[float, float]
    size: tuple[float, float]
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.size[0] < 0 or self.size[1] < 0:
            raise ValueError(f"primitive size components must be >= 0, got {self.size}")


def eval_primitive(p: RectPrimitive, x: tuple[float, float]) -> float:
    """Value of one primitive at a continuous image point (x1, x2).

    A primitive with a zero size component has vanished and evaluates to 0.
    """
    sx, sy = p.size
    if sx <= 0.0 or sy <= 0.0:
        return 0.0
    zx = (2.0 * np.pi / sx) * (x[0] - p.center[0])
    zy = (2.0 * np.pi / sy) * (x[1] - p.center[1])
    return float(phi(zx) * phi(zy))


class MaskLayer:
    """Ordered collection of rectangle primitives rendered to a [0, 1] mask.

    Parameters are stored as flat arrays (centers (N,2) in x,y order, sizes
    (N,2) as width,height, weights (N,)) so the optimizer can update them in
    place; ``primitives`` materializes the dataclass view.
    """

    def __init__(self, primitives: Sequence[RectPrimitive] = ()):
        n = len(primitives)
        self.centers = np.zeros((n, 2), dtype=np.float64)
        self.sizes = np.zeros((n, 2), dtype=np.float64)
        self.weights = np.zeros(n, dtype=np.float64)
        for i, p in enumerate(primitives):
            self.centers[i] = p.center
            self.sizes[i] = p.size
            self.weights[i] = p.weight

    @classmethod
    def from_arrays(cls, centers: np.ndarray, sizes: np.ndarray, weights: np.ndarray) -> "MaskLayer":
        m = cls()
        m.centers = np.array(centers, dtype=np.float64).reshape(-1, 2)
        m.sizes = np.array(sizes, dtype=np.float64).reshape(-1, 2)
        m.weights = np.array(weights, dtype=np.float64).reshape(-1)
        if not (len(m.centers) == len(m.sizes) == len(m.weights)):
            raise ValueError("primitive parameter arrays must have equal length")
        return m

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def primitives(self) -> list[RectPrimitive]:
        return [
            RectPrimitive(
                center=(float(self.centers[i, 0]), float(self.centers[i, 1])),
                size=(float(max(self.sizes[i, 0], 0.0)), float(max(self.sizes[i, 1], 0.0))),
                weight=float(self.weights[i]),
            )
            for i in range(len(self))
        ]

    def copy(self) -> "MaskLayer":
        return MaskLayer.from_arrays(self.centers.copy(), self.sizes.copy(), self.weights.copy())

    def _axis_profiles(self, j: int, width: int, height: int):
        """phi values and arguments along each axis at pixel centers, or None
        for a vanished primitive."""
        sx, sy = self.sizes[j]
        if sx <= 0.0 or sy <= 0.0:
            return None
        xs = np.arange(width, dtype=np.float64) + 0.5
        ys = np.arange(height, dtype=np.float64) + 0.5
        zx = (2.0 * np.pi / sx) * (xs - self.centers[j, 0])
        zy = (2.0 * np.pi / sy) * (ys - self.centers[j, 1])
        return zx, zy, phi(zx), phi(zy)

    def render_raw(self, width: int, height: int) -> np.ndarray:
        """Pre-clamp weighted sum of primitives, sampled at pixel centers."""
        out = np.zeros((height, width), dtype=np.float64)
        for j in range(len(self)):
            prof = self._axis_profiles(j, width, height)
            if prof is None or self.weights[j] == 0.0:
                continue
            _, _, px, py = prof
            out += self.weights[j] * np.outer(py, px)
        return out

    def render(self, width: int, height: int) -> np.ndarray:
        """Rendered mask, clamped to [0, 1]."""
        return np.clip(self.render_raw(width, height), 0.0, 1.0)


def render_mask(mask: MaskLayer, width: int, height: int) -> np.ndarray:
    return mask.render(width, height)


def area_loss(mask: MaskLayer) -> float:
    """Sum of nominal primitive areas s1*s2 (dead axes contribute 0)."""
    s = np.maximum(mask.sizes, 0.0)
    return float(np.sum(s[:, 0] * s[:, 1]))


def area_loss_grad(mask: MaskLayer) -> np.ndarray:
    """(N, 2) gradient of area_loss with respect to the size parameters."""
    s = np.maximum(mask.sizes, 0.0)
    return np.stack([s[:, 1], s[:, 0]], axis=1)


@dataclass
class MaskGradients:
    """Per-primitive gradients from back-propagating through the rendered mask."""

    centers: np.ndarray  # (N, 2)
    sizes: np.ndarray    # (N, 2)
    weights: np.ndarray  # (N,)


def mask_backward(mask: MaskLayer, upstream: np.ndarray) -> MaskGradients:
    """Chain-rule gradients of sum(upstream * M) w.r.t. every primitive parameter.

    ``upstream`` is dLoss/dM on the (H, W) pixel grid. Pixels where the render
    clamp was active (pre-clamp sum above 1) pass zero gradient, matching the
    projection convention used during optimization.
    """
    height, width = upstream.shape
    pre = mask.render_raw(width, height)
    u = np.where((pre >= 0.0) & (pre <= 1.0), upstream, 0.0)

    n = len(mask)
    g_centers = np.zeros((n, 2), dtype=np.float64)
    g_sizes = np.zeros((n, 2), dtype=np.float64)
    g_weights = np.zeros(n, dtype=np.float64)

    for j in range(n):
        prof = mask._axis_profiles(j, width, height)
        if prof is None:
            continue
        zx, zy, px, py = prof
        gx = phi_grad(zx)
        gy = phi_grad(zy)
        sx, sy = mask.sizes[j]
        a = mask.weights[j]

        col = u @ px           # (H,): sum over x of u * phi_x
        row = py @ u           # (W,): sum over y of u * phi_y
        g_weights[j] = float(py @ col)
        # d z_x / d c_x = -2*pi/s_x ; d z_x / d s_x = -z_x / s_x
        g_centers[j, 0] = a * float(row @ gx) * (-2.0 * np.pi / sx)
        g_centers[j, 1] = a * float(col @ gy) * (-2.0 * np.pi / sy)
        g_sizes[j, 0] = a * float(row @ (gx * (-zx / sx)))
        g_sizes[j, 1] = a * float(col @ (gy * (-zy / sy)))

    return MaskGradients(g_centers, g_sizes, g_weights)


@dataclass
class TextureLayer:
    """Signed per-pixel perturbation values, shape (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"texture must have shape (H, W, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("texture values must be finite")
        self.data = arr


@dataclass(frozen=True)
class Perturbation:
    """delta = texture * mask, zero wherever the mask is zero."""

    delta: np.ndarray


def compose_perturbation(texture: TextureLayer, mask: MaskLayer) -> Perturbation:
    height, width = texture.data.shape[:2]
    m = mask.render(width, height)
    return Perturbation(delta=texture.data * m[:, :, None])


def project_texture(texture: np.ndarray, image: Image) -> np.ndarray:
    """Clip the texture so image + texture stays in [0, 1] pointwise.

    Because the mask lies in [0, 1], this also guarantees
    image + texture * mask stays in range for every mask.
    """
    return np.clip(texture, -image.data, 1.0 - image.data)


def half_level_area(mask: MaskLayer, width: int, height: int) -> int:
    """Number of pixels where the rendered mask exceeds 0.5."""
    return int(np.count_nonzero(mask.render(width, height) > 0.5))


def init_primitives(target_box: BBox, n: int, seed: int, size_frac: float = 0.12) -> MaskLayer:
    """Deterministic starting layout: jittered grid of small squares in the box.

    Centers sit on a ceil(sqrt(n)) grid spanning the target box with a seeded
    jitter of up to a quarter cell; every primitive starts at
    size_frac * min(box width, box height) per axis with weight 1.
    """
    if n < 1:
        raise ValueError("need at least one primitive")
    rng = make_rng(seed, 0xA5)
    g = math.ceil(math.sqrt(n))
    side = size_frac * min(target_box.width, target_box.height)
    cell_w = target_box.width / g
    cell_h = target_box.height / g
    centers = []
    for idx in range(n):
        gy, gx = divmod(idx, g)
        cx = target_box.x1 + (gx + 0.5) * cell_w
        cy = target_box.y1 + (gy + 0.5) * cell_h
        jx = rng.uniform(-0.25 * cell_w, 0.25 * cell_w)
        jy = rng.uniform(-0.25 * cell_h, 0.25 * cell_h)
        centers.append((cx + jx, cy + jy))
    prims = [RectPrimitive(center=c, size=(side, side), weight=1.0) for c in centers]
    return MaskLayer(prims)


def mask_record(mask: MaskLayer) -> str:
    """Plain-text record, one primitive per line: weight cx cy sx sy (9 sig. digits)."""
    lines = []
    for i in range(len(mask)):
        lines.append(
            f"{mask.weights[i]:.9g} {mask.centers[i, 0]:.9g} {mask.centers[i, 1]:.9g} "
            f"{mask.sizes[i, 0]:.9g} {mask.sizes[i, 1]:.9g}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_mask_record(text: str) -> MaskLayer:
    prims = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"mask record line {lineno}: expected 5 fields, got {len(parts)}")
        a, cx, cy, sx, sy = map(float, parts)
        prims.append(RectPrimitive(center=(cx, cy), size=(sx, sy), weight=a))
    return MaskLayer(prims)
