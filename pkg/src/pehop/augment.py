"""Seeded slab augmentations: random contrast, shift-scale-rotate, cutout.

Every draw comes from ``numpy.random.Generator(Philox(seed))``, a
counter-based generator whose stream depends only on the seed, so reruns are
portable across machines.  One set of parameters is drawn per slab and
applied identically to all of its channels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AugmentSpec:
    contrast_limit: float = 0.2
    shift_limit: float = 0.2
    scale_limit: float = 0.2
    rotate_limit_deg: float = 45.0
    cutout_holes: int = 2
    cutout_max_frac: float = 0.4
    p_contrast: float = 1.0
    p_shift_scale_rotate: float = 1.0
    p_cutout: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("contrast_limit", "shift_limit", "scale_limit", "cutout_max_frac",
                     "p_contrast", "p_shift_scale_rotate", "p_cutout"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.rotate_limit_deg <= 180.0:
            raise ValueError("rotate_limit_deg must lie in [0, 180]")
        if self.cutout_holes < 0:
            raise ValueError("cutout_holes must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return asdict(self)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2 ** 64 - 1)))


def random_contrast(slab: np.ndarray, alpha: float) -> np.ndarray:
    """Scale each channel's deviation from its mean by ``1 + alpha``, clamp to [0, 1]."""
    if alpha == 0:
        return slab.copy()
    mean = slab.mean(axis=(-2, -1), keepdims=True)
    out = mean + (slab - mean) * (1.0 + alpha)
    return np.clip(out, 0.0, 1.0).astype(slab.dtype, copy=False)


def affine_matrix(dx: float, dy: float, scale: float, theta_deg: float, shape) -> np.ndarray:
    """3x3 matrix taking source (x, y) pixel coordinates to destination ones.

    Rotation is about the image center by ``theta_deg`` (counter-clockwise as
    displayed, rows growing downwards), zoom by ``1 + scale``, then a shift of
    ``(dx * W, dy * H)`` pixels.
    """
    h, w = shape[-2:]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    t = math.radians(theta_deg)
    k = 1.0 + scale
    c, s = k * math.cos(t), k * math.sin(t)
    linear = np.array([[c, s], [-s, c]])
    center = np.array([cx, cy])
    offset = center - linear @ center + np.array([dx * w, dy * h])
    m = np.eye(3)
    m[:2, :2] = linear
    m[:2, 2] = offset
    return m


def warp_affine(slab: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Inverse-map every destination pixel through ``matrix`` and sample the
    source bilinearly; samples falling outside the image read as 0."""
    h, w = slab.shape[-2:]
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    # snap coordinates that are integral up to rounding noise
    sx = np.where(np.abs(sx - np.round(sx)) < 1e-9, np.round(sx), sx)
    sy = np.where(np.abs(sy - np.round(sy)) < 1e-9, np.round(sy), sy)
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    src = slab.reshape(-1, h, w).astype(np.float64)
    out = np.zeros_like(src)
    for oy, ox, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + oy, x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = src[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        out += np.where(valid, wt, 0.0) * vals
    return np.clip(out, 0.0, 1.0).reshape(slab.shape).astype(slab.dtype, copy=False)


def shift_scale_rotate(slab: np.ndarray, dx: float, dy: float, scale: float,
                       theta_deg: float) -> np.ndarray:
    return warp_affine(slab, affine_matrix(dx, dy, scale, theta_deg, slab.shape))


def cutout(slab: np.ndarray, holes: Sequence[tuple[int, int, int, int]]) -> np.ndarray:
    """Zero every channel inside each ``(center_y, center_x, height, width)``
    rectangle, clipped to the image."""
    out = slab.copy()
    h, w = slab.shape[-2:]
    for cy, cx, hh, ww in holes:
        if hh <= 0 or ww <= 0:
            continue
        y0, x0 = cy - hh // 2, cx - ww // 2
        out[..., max(y0, 0):min(y0 + hh, h), max(x0, 0):min(x0 + ww, w)] = 0
    return out


def draw_holes(rng: np.random.Generator, spec: AugmentSpec, shape) -> list:
    h, w = shape[-2:]
    max_h = int(math.floor(spec.cutout_max_frac * h))
    max_w = int(math.floor(spec.cutout_max_frac * w))
    holes = []
    for _ in range(spec.cutout_holes):
        hh = int(rng.integers(1, max_h + 1)) if max_h >= 1 else 0
        ww = int(rng.integers(1, max_w + 1)) if max_w >= 1 else 0
        holes.append((int(rng.integers(0, h)), int(rng.integers(0, w)), hh, ww))
    return holes


@dataclass(frozen=True)
class AugmentDraw:
    alpha: float | None       # None: contrast skipped
    affine: tuple | None      # (dx, dy, scale, theta_deg) or None
    holes: tuple = ()


def draw_params(spec: AugmentSpec, shape, seed: int | None = None) -> AugmentDraw:
    """All random choices for one slab, in application order."""
    rng = make_rng(spec.seed if seed is None else seed)
    alpha = affine = None
    holes: list = []
    if rng.random() < spec.p_contrast:
        alpha = float(rng.uniform(-spec.contrast_limit, spec.contrast_limit))
    if rng.random() < spec.p_shift_scale_rotate:
        dx, dy = rng.uniform(-spec.shift_limit, spec.shift_limit, size=2)
        scale = rng.uniform(-spec.scale_limit, spec.scale_limit)
        theta = rng.uniform(-spec.rotate_limit_deg, spec.rotate_limit_deg)
        affine = (float(dx), float(dy), float(scale), float(theta))
    if rng.random() < spec.p_cutout:
        holes = draw_holes(rng, spec, shape)
    return AugmentDraw(alpha, affine, tuple(holes))


def apply_params(slab: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    out = slab
    if draw.alpha is not None:
        out = random_contrast(out, draw.alpha)
    if draw.affine is not None and any(draw.affine):
        out = shift_scale_rotate(out, *draw.affine)
    if draw.holes:
        out = cutout(out, draw.holes)
    return out if out is not slab else slab.copy()


def compose(spec: AugmentSpec, slab: np.ndarray, seed: int | None = None) -> np.ndarray:
    """Contrast, then shift-scale-rotate, then cutout, all drawn from one
    generator seeded with ``seed`` (``spec.seed`` when omitted)."""
    return apply_params(slab, draw_params(spec, slab.shape, seed))


def sample_seed(base_seed: int, sample_index: int) -> int:
    return int(base_seed) ^ int(sample_index)
