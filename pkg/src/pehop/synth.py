"""Synthetic chest CT studies with organ masks, landmarks and slice labels.

Organs are axis-aligned ellipsoids with integer centers and semi-axes, so a
study's crop box (and crop ratio) is known in closed form.  Lesions are small
bright blobs restricted to the lung mask; a slice is labelled positive exactly
when it intersects a lesion voxel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .volume import CtVolume, save_volume, write_array_pair

LANDMARK_NAMES = (
    "carina_bifurcation", "right_lung_top", "left_lung_top",
    "heart", "right_lung_center", "left_lung_center",
)

HU_AIR = -1000
HU_LUNG = -850
HU_TISSUE = 40
HU_HEART = 60
HU_LESION = 350


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first 8 bytes (little-endian) of sha256("<seed>:<stage>")."""
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def philox(seed: int, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, stage)))


@dataclass
class SyntheticStudySpec:
    dims: tuple = (24, 96, 96)
    spacing: tuple = (2.0, 0.8, 0.8)
    noise_hu: float = 15.0
    lesions_per_positive: tuple = (1, 3)
    lesion_radius: tuple = (2, 4)
    landmark_absent_prob: float = 0.1
    n_empty_masks: int = 1
    val_every: int = 5

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticStudySpec":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v)
                      for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def ellipsoid_mask(dims, center, semi) -> np.ndarray:
    """Voxels with sum(((p - c) / a)^2) <= 1, evaluated in exact integer arithmetic."""
    d, h, w = dims
    cz, cy, cx = (int(v) for v in center)
    az, ay, ax = (int(v) for v in semi)
    z, y, x = np.ogrid[0:d, 0:h, 0:w]
    lhs = ((z - cz) * ay * ax) ** 2 + ((y - cy) * az * ax) ** 2 + ((x - cx) * az * ay) ** 2
    return lhs <= (az * ay * ax) ** 2


def ellipsoid_box(dims, center, semi) -> tuple:
    """Half-open (z0, z1, y0, y1, x0, x1) of ``ellipsoid_mask`` (clipped to dims)."""
    out = []
    for n, c, a in zip(dims, center, semi):
        out += [max(int(c) - int(a), 0), min(int(c) + int(a) + 1, n)]
    return tuple(out)


def union_box(boxes) -> tuple:
    b = np.array(boxes)
    return (int(b[:, 0].min()), int(b[:, 1].max()), int(b[:, 2].min()),
            int(b[:, 3].max()), int(b[:, 4].min()), int(b[:, 5].max()))


def organ_layout(rng: np.random.Generator, dims) -> dict:
    d, h, w = dims
    cz = d // 2 + int(rng.integers(-1, 2))
    ay = int(round(h * rng.uniform(0.20, 0.25)))
    ax = int(round(w * rng.uniform(0.11, 0.14)))
    az = int(round(d * rng.uniform(0.32, 0.40)))
    cy = h // 2 - int(round(0.04 * h))
    gap = int(round(w * rng.uniform(0.17, 0.20)))
    lungs = [
        {"center": [cz, cy, w // 2 - gap], "semi": [az, ay, ax]},
        {"center": [cz, cy, w // 2 + gap], "semi": [az, ay, ax]},
    ]
    heart = {"center": [cz + int(round(0.12 * d)), h // 2 + int(round(0.08 * h)),
                        w // 2 + int(round(0.03 * w))],
             "semi": [max(int(round(0.18 * d)), 1), int(round(0.13 * h)), int(round(0.13 * w))]}
    return {"lungs": lungs, "heart": heart}


def _landmarks(layout, dims, rng, absent_prob):
    d, h, w = dims
    (r, l), heart = layout["lungs"], layout["heart"]
    pts = [
        ((r["center"][2] + l["center"][2]) / 2.0, r["center"][1] - 0.3 * r["semi"][1],
         r["center"][0] - 0.4 * r["semi"][0]),
        (r["center"][2], r["center"][1], r["center"][0] - r["semi"][0]),
        (l["center"][2], l["center"][1], l["center"][0] - l["semi"][0]),
        tuple(reversed([float(c) for c in heart["center"]])),
        tuple(reversed([float(c) for c in r["center"]])),
        tuple(reversed([float(c) for c in l["center"]])),
    ]
    out = []
    for name, (x, y, z) in zip(LANDMARK_NAMES, pts):
        out.append({"name": name,
                    "x": float(np.clip(x, 0, w - 1)), "y": float(np.clip(y, 0, h - 1)),
                    "z": float(np.clip(z, 0, d - 1)),
                    "present": bool(rng.random() >= absent_prob)})
    return out


def generate_study(spec: SyntheticStudySpec, rng: np.random.Generator, study_id: str,
                   positive: bool, empty_mask: bool = False) -> dict:
    dims = tuple(spec.dims)
    d, h, w = dims
    layout = organ_layout(rng, dims)
    lung = np.zeros(dims, bool)
    for e in layout["lungs"]:
        lung |= ellipsoid_mask(dims, e["center"], e["semi"])
    heart = ellipsoid_mask(dims, layout["heart"]["center"], layout["heart"]["semi"]) & ~lung

    _, yy, xx = np.ogrid[0:d, 0:h, 0:w]
    body = (((yy - h / 2) / (0.46 * h)) ** 2 + ((xx - w / 2) / (0.48 * w)) ** 2) <= 1.0
    hu = np.full(dims, HU_AIR, dtype=np.float64)
    hu[np.broadcast_to(body, dims)] = HU_TISSUE
    hu[lung] = HU_LUNG
    hu[heart] = HU_HEART

    lesion = np.zeros(dims, bool)
    lesions = []
    if positive:
        lung_idx = np.argwhere(lung)
        n = int(rng.integers(spec.lesions_per_positive[0], spec.lesions_per_positive[1] + 1))
        for _ in range(n):
            c = lung_idx[int(rng.integers(len(lung_idx)))]
            r = int(rng.integers(spec.lesion_radius[0], spec.lesion_radius[1] + 1))
            semi = [max(r // 2, 1), r, r]
            blob = ellipsoid_mask(dims, c, semi) & lung
            lesion |= blob
            lesions.append({"center": [int(v) for v in c], "semi": semi})
        hu[lesion] = HU_LESION
    hu += rng.normal(0.0, spec.noise_hu, size=dims)
    voxels = np.clip(np.round(hu), -1024, 3071).astype(np.int16)

    if empty_mask:
        lung_out = np.zeros(dims, bool)
        heart_out = np.zeros(dims, bool)
    else:
        lung_out, heart_out = lung, heart
    return {
        "volume": CtVolume(voxels, tuple(spec.spacing), study_id),
        "lung": lung_out,
        "heart": heart_out,
        "lesion": lesion,
        "slice_labels": lesion.any(axis=(1, 2)).astype(int).tolist(),
        "landmarks": _landmarks(layout, dims, rng, spec.landmark_absent_prob),
        "layout": layout,
        "lesions": lesions,
        "positive": bool(lesion.any()),
        "empty_mask": bool(empty_mask),
    }


def analytic_crop_ratio(layout: dict, dims) -> float:
    """Crop ratio of the union-hull box, from the ellipsoid parameters alone."""
    boxes = [ellipsoid_box(dims, e["center"], e["semi"]) for e in layout["lungs"]]
    boxes.append(ellipsoid_box(dims, layout["heart"]["center"], layout["heart"]["semi"]))
    z0, z1, y0, y1, x0, x1 = union_box(boxes)
    return (z1 - z0) * (y1 - y0) * (x1 - x0) / float(np.prod(dims))


def write_dataset(out_dir, spec: SyntheticStudySpec, n_studies: int, seed: int) -> dict:
    """Generate ``n_studies`` studies under ``out_dir`` and return the manifest.

    Even-indexed studies carry lesions.  Every ``spec.val_every``-th study goes
    to the validation split; the empty-mask studies are drawn from training.
    """
    out_dir = Path(out_dir)
    studies_dir = out_dir / "studies"
    studies_dir.mkdir(parents=True, exist_ok=True)
    ids = [f"study_{i:04d}" for i in range(n_studies)]
    val = [sid for i, sid in enumerate(ids) if spec.val_every and i % spec.val_every == spec.val_every - 1]
    train = [sid for sid in ids if sid not in val]
    pick = philox(seed, "empty-masks")
    n_empty = min(spec.n_empty_masks, len(train))
    empty = set(pick.choice(train, size=n_empty, replace=False).tolist()) if n_empty else set()
    for i, sid in enumerate(ids):
        rng = philox(seed, f"study:{i}")
        s = generate_study(spec, rng, sid, positive=(i % 2 == 0), empty_mask=sid in empty)
        save_volume(s["volume"], studies_dir / sid)
        write_array_pair(studies_dir / f"{sid}_lung", s["lung"], "u8", sid, spec.spacing)
        write_array_pair(studies_dir / f"{sid}_heart", s["heart"], "u8", sid, spec.spacing)
        meta = {k: s[k] for k in ("slice_labels", "landmarks", "layout", "lesions",
                                  "positive", "empty_mask")}
        meta["study_id"] = sid
        meta["dims"] = list(spec.dims)
        (studies_dir / f"{sid}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    manifest = {"studies": ids, "split": {"train": train, "val": val},
                "empty_masks": sorted(empty), "seed": int(seed), "spec": spec.to_dict(),
                "landmark_names": list(LANDMARK_NAMES)}
    (out_dir / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
