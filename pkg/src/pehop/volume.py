"""CT study I/O, Hounsfield windowing and 9-channel slab assembly.

A study lives on disk as a file pair: ``<id>.json`` (header) and ``<id>.raw``
(little-endian, z-major then row-major payload).  Organ masks reuse the same
format with dtype ``u8``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import HeaderMismatch, HuRangeViolation, MissingFile, ShapeMismatch

HU_MIN = -2048
HU_MAX = 4096

_DTYPES = {"i16": np.dtype("<i2"), "u8": np.dtype("u1")}


@dataclass(frozen=True)
class WindowSpec:
    center: float
    width: float
    name: str = ""

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"window width must be positive, got {self.width}")


# Lung, pulmonary-artery and mediastinal windows, in that order.
DEFAULT_WINDOWS = (
    WindowSpec(-600.0, 1500.0, "lung"),
    WindowSpec(100.0, 700.0, "pe"),
    WindowSpec(40.0, 400.0, "mediastinal"),
)


@dataclass
class CtVolume:
    """A CT study: int16 HU voxels indexed (z, y, x) plus spacing in mm."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    study_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ShapeMismatch(f"volume must be 3D and non-empty, got {self.voxels.shape}")
        if self.voxels.size and (self.voxels.min() < HU_MIN or self.voxels.max() > HU_MAX):
            raise HuRangeViolation(
                f"HU values outside [{HU_MIN}, {HU_MAX}]: "
                f"[{self.voxels.min()}, {self.voxels.max()}]"
            )
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)


@dataclass
class WindowedVolume:
    values: np.ndarray  # (3, D, H, W), all in [0, 1]
    windows: tuple[WindowSpec, ...] = DEFAULT_WINDOWS

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape[1:])


@dataclass
class SlabSeries:
    slabs: np.ndarray  # (D, 9, H, W)
    center_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.center_index is None:
            self.center_index = np.arange(len(self.slabs))

    def __len__(self):
        return len(self.slabs)

    def __getitem__(self, i):
        return self.slabs[i]


def write_array_pair(path, array: np.ndarray, dtype: str, study_id: str = "",
                     spacing=(1.0, 1.0, 1.0)) -> None:
    """Write ``array`` as ``<path>.json`` + ``<path>.raw``; ``path`` has no suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array, dtype=_DTYPES[dtype])
    header = {
        "study_id": study_id,
        "dims": list(arr.shape),
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "byte_order": "little-endian",
        "layout": "z-major,row-major",
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    path.with_suffix(".raw").write_bytes(arr.tobytes())


def read_array_pair(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    hdr_path, raw_path = path.with_suffix(".json"), path.with_suffix(".raw")
    for p in (hdr_path, raw_path):
        if not p.exists():
            raise MissingFile(str(p))
    header = json.loads(hdr_path.read_text())
    dtype_name = header.get("dtype", "i16")
    if dtype_name not in _DTYPES:
        raise HeaderMismatch(f"unsupported dtype {dtype_name!r}")
    if header.get("byte_order", "little-endian") != "little-endian":
        raise HeaderMismatch("only little-endian payloads are supported")
    dims = [int(d) for d in header["dims"]]
    if len(dims) != 3 or min(dims) < 1:
        raise HeaderMismatch(f"dims must be three positive integers, got {dims}")
    dtype = _DTYPES[dtype_name]
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise HeaderMismatch(f"{raw_path}: {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy(), header


def save_volume(vol: CtVolume, path) -> None:
    write_array_pair(path, vol.voxels, "i16", vol.study_id, vol.spacing)


def load_volume(path) -> CtVolume:
    """Load a study from its header/raw file pair.

    Raises MissingFile, HeaderMismatch, or HuRangeViolation.
    """
    voxels, header = read_array_pair(path)
    if header.get("dtype", "i16") != "i16":
        raise HeaderMismatch(f"CT volumes must be i16, got {header['dtype']}")
    return CtVolume(voxels, tuple(header.get("spacing", (1.0, 1.0, 1.0))),
                    header.get("study_id", Path(path).stem))


def window(values: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Linear ramp ``clamp((v - center) / width + 0.5, 0, 1)``."""
    out = (np.asarray(values, dtype=np.float64) - spec.center) / spec.width + 0.5
    return np.clip(out, 0.0, 1.0)


def apply_windows(vol: CtVolume, windows: Sequence[WindowSpec] = DEFAULT_WINDOWS,
                  dtype=np.float32) -> WindowedVolume:
    if len(windows) != 3:
        raise ValueError(f"exactly 3 windows required, got {len(windows)}")
    values = np.stack([window(vol.voxels, w) for w in windows]).astype(dtype)
    return WindowedVolume(values, tuple(windows))


def assemble_slabs(wvol: WindowedVolume) -> SlabSeries:
    """One 9-channel slab per slice; channel ``3*w + s`` holds window ``w`` of
    slice ``i + s - 1`` (index clamped at the volume ends)."""
    values = wvol.values
    n_win, depth, h, w = values.shape
    if depth < 1:
        raise ShapeMismatch("volume has no slices")
    centers = np.arange(depth)
    idx = np.clip(centers[:, None] + np.arange(-1, 2)[None, :], 0, depth - 1)  # (D, 3)
    slabs = values[:, idx]  # (3 windows, D, 3 offsets, H, W)
    slabs = np.transpose(slabs, (1, 0, 2, 3, 4)).reshape(depth, n_win * 3, h, w)
    return SlabSeries(np.ascontiguousarray(slabs), centers)
