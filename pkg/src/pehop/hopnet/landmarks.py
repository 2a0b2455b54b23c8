"""Landmark regression targets and the regression head used for pretraining.

In-plane coordinates are divided by the image size.  The longitudinal
coordinate is the signed slice distance from the slab's central slice,
divided by 600 and shifted into [0, 1]: ``z_rel01 = dz / 1200 + 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.nn import BatchNorm2d, Conv2d, Linear, Module
from ..errors import OutOfEncodableRange

Z_SPAN = 600.0
MAX_LANDMARKS = 20


@dataclass
class LandmarkTargets:
    values: np.ndarray   # (K, 3): x_norm, y_norm, z_rel01
    present: np.ndarray  # (K,) bool

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Regression vector of length 3K and the matching loss mask."""
        mask = np.repeat(self.present.astype(np.float64), 3)
        return np.nan_to_num(self.values.reshape(-1)), mask


def encode_landmarks(raw, center_slice: float, dims, present=None) -> LandmarkTargets:
    """``raw`` is (K, 3) voxel coordinates (x, y, z); ``dims`` is (D, H, W)."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
    if len(raw) > MAX_LANDMARKS:
        raise ValueError(f"at most {MAX_LANDMARKS} landmarks, got {len(raw)}")
    present = np.ones(len(raw), bool) if present is None else np.asarray(present, bool)
    _, h, w = dims
    x, y, z = raw[:, 0], raw[:, 1], raw[:, 2]
    dz = z - center_slice
    check = present
    if np.any(check & ((x < 0) | (x > w) | (y < 0) | (y > h))):
        raise OutOfEncodableRange("in-plane landmark coordinate outside the image")
    if np.any(check & (np.abs(dz) > Z_SPAN)):
        raise OutOfEncodableRange(f"landmark more than {Z_SPAN:.0f} slices from the center")
    values = np.stack([x / w, y / h, dz / Z_SPAN / 2.0 + 0.5], axis=1)
    values[~present] = np.nan
    return LandmarkTargets(values, present)


def decode_landmarks(t: LandmarkTargets, center_slice: float, dims) -> np.ndarray:
    _, h, w = dims
    v = np.asarray(t.values, dtype=np.float64)
    return np.stack([v[:, 0] * w, v[:, 1] * h, (v[:, 2] - 0.5) * 2.0 * Z_SPAN + center_slice], axis=1)


class LandmarkHead(Module):
    """One residual conv block on the deepest unpooled tap, then pool and
    regress 3K coordinates."""

    def __init__(self, channels: int, n_landmarks: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = Conv2d(channels, channels, 1, rng, dtype, bias=False)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 1, rng, dtype, bias=False)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)
        self.fc = Linear(channels, 3 * n_landmarks, rng, dtype)
        self.n_landmarks = n_landmarks

    def forward(self, feat):
        h = F.relu(self.bn1(self.conv1(feat)))
        h = self.bn2(self.conv2(h))
        h = F.relu(h + feat)
        return self.fc(F.global_avg_pool(h))


class LandmarkModel(Module):
    def __init__(self, encoder, head: LandmarkHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x):
        return self.head(self.encoder.features(x)[-1])
