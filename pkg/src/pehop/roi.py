"""Anatomically aware cropping: organ-mask union, per-slice convex hull fill,
tight bounding box, and bilinear resize of the cropped windowed volume."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoxOutOfRange, DimMismatch, EmptyInput, EmptyMask
from .volume import WindowedVolume


class Organ(enum.Enum):
    LUNG = "lung"
    HEART = "heart"
    COMBINED = "combined"


@dataclass
class OrganMask:
    bits: np.ndarray
    organ: Organ = Organ.COMBINED

    def __post_init__(self):
        self.bits = np.asarray(self.bits).astype(bool)
        if self.bits.ndim != 3:
            raise DimMismatch(f"organ masks are 3D, got shape {self.bits.shape}")

    @property
    def dims(self):
        return self.bits.shape


@dataclass
class RoiCrop:
    hull_mask: np.ndarray
    bbox: tuple[int, int, int, int, int, int]  # z0, z1, y0, y1, x0, x1 (half-open)
    cropped: WindowedVolume
    crop_ratio: float


def union_masks(lung: OrganMask, heart: OrganMask) -> OrganMask:
    if lung.dims != heart.dims:
        raise DimMismatch(f"lung mask {lung.dims} vs heart mask {heart.dims}")
    return OrganMask(lung.bits | heart.bits, Organ.COMBINED)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points) -> list[tuple[int, int]]:
    """Counter-clockwise hull vertices of integer points, collinear points dropped.

    Returns 1 vertex for a single point and 2 for a collinear set.
    """
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return hull


def fill_convex_polygon(vertices, shape) -> np.ndarray:
    """Set every pixel whose center (row, col) lies in the closed hull polygon.

    Exact integer half-plane tests; one- and two-vertex hulls fill the point or
    the lattice points of the segment.
    """
    out = np.zeros(shape, dtype=bool)
    if not vertices:
        return out
    v = np.asarray(vertices, dtype=np.int64)
    r0, c0 = v.min(axis=0)
    r1, c1 = v.max(axis=0)
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    if len(v) == 1:
        out[r0, c0] = True
        return out
    if len(v) == 2:
        (ar, ac), (br, bc) = v
        on_line = (br - ar) * (cc - ac) - (bc - ac) * (rr - ar) == 0
        out[r0:r1 + 1, c0:c1 + 1] = on_line  # the bounding box already bounds the segment
        return out
    inside = np.ones(rr.shape, dtype=bool)
    for (ar, ac), (br, bc) in zip(v, np.roll(v, -1, axis=0)):
        inside &= (br - ar) * (cc - ac) - (bc - ac) * (rr - ar) >= 0
    out[r0:r1 + 1, c0:c1 + 1] = inside
    return out


def convex_hull_slice(mask_slice: np.ndarray) -> np.ndarray:
    """Filled convex hull of the set pixels of one 2D slice (pixel-center geometry)."""
    m = np.asarray(mask_slice).astype(bool)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return np.zeros_like(m)
    sub = m[rows]
    left = sub.argmax(axis=1)
    right = m.shape[1] - 1 - sub[:, ::-1].argmax(axis=1)
    # row extremes are boundary points and span the same hull as the full set
    pts = [(int(r), int(c)) for r, c in zip(rows, left)]
    pts += [(int(r), int(c)) for r, c in zip(rows, right)]
    return fill_convex_polygon(monotone_chain(pts), m.shape)


def hull_mask(mask: OrganMask) -> OrganMask:
    return OrganMask(np.stack([convex_hull_slice(s) for s in mask.bits]), mask.organ)


def roi_bounding_box(hull: OrganMask) -> tuple[int, int, int, int, int, int]:
    bits = hull.bits
    if not bits.any():
        raise EmptyMask("combined organ mask is empty")
    bounds = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(bits.any(axis=other))
        bounds += [int(idx[0]), int(idx[-1]) + 1]
    return tuple(bounds)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bilinear weights, half-pixel centers, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(mat, (np.arange(n_out), i1), frac)
    return mat


def resize_bilinear(images: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Resize the last two axes of ``images`` to ``target``."""
    h, w = target
    rh = resize_matrix(images.shape[-2], h)
    rw = resize_matrix(images.shape[-1], w)
    out = np.einsum("ij,...jk,lk->...il", rh, images.astype(np.float64), rw, optimize=True)
    return out


def crop_and_resize(wvol: WindowedVolume, bbox, target: tuple[int, int]) -> WindowedVolume:
    z0, z1, y0, y1, x0, x1 = bbox
    _, depth, height, width = wvol.values.shape
    if not (0 <= z0 < z1 <= depth and 0 <= y0 < y1 <= height and 0 <= x0 < x1 <= width):
        raise BoxOutOfRange(f"bbox {bbox} outside volume dims {(depth, height, width)}")
    if min(target) < 2:
        raise ValueError(f"target size must be at least 2x2, got {target}")
    region = wvol.values[:, z0:z1, y0:y1, x0:x1]
    out = resize_bilinear(region, target)
    return WindowedVolume(np.clip(out, 0.0, 1.0).astype(wvol.values.dtype), wvol.windows)


def crop_ratio(bbox, dims) -> float:
    z0, z1, y0, y1, x0, x1 = bbox
    return (z1 - z0) * (y1 - y0) * (x1 - x0) / float(np.prod(dims))


def crop_study(wvol: WindowedVolume, lung: OrganMask, heart: OrganMask,
               target: tuple[int, int]) -> RoiCrop:
    """Full phase-1 path for one study.  Raises EmptyMask when both organs are absent."""
    if lung.dims != wvol.dims:
        raise DimMismatch(f"mask dims {lung.dims} vs volume dims {wvol.dims}")
    hull = hull_mask(union_masks(lung, heart))
    bbox = roi_bounding_box(hull)
    cropped = crop_and_resize(wvol, bbox, target)
    return RoiCrop(hull.bits, bbox, cropped, crop_ratio(bbox, wvol.dims))


def crop_ratio_stats(crops: Sequence, bins: int = 10) -> dict:
    """Summary of crop ratios; accepts RoiCrop objects or bare ratios."""
    ratios = np.array([c.crop_ratio if isinstance(c, RoiCrop) else float(c) for c in crops])
    if ratios.size == 0:
        raise EmptyInput("no crops to summarise")
    counts, edges = np.histogram(ratios, bins=bins, range=(0.0, 1.0))
    return {
        "mean": float(ratios.mean()),
        "min": float(ratios.min()),
        "max": float(ratios.max()),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }
