"""Tap-emitting encoder, UNet-style aggregator and the N-hop pipeline.

Recurrence, for an input slab ``x`` with 9 channels::

    logits_1, taps_1 = encoder_1(x)
    context_k        = aggregator_{k-1}(taps_{k-1})          k >= 2
    logits_k, taps_k = encoder_k(concat(x, context_k))       (18 channels)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autodiff import functional as F
from ..autodiff.nn import ConvBNReLU, Linear, Module
from ..autodiff.tensor import Tensor, as_tensor, no_grad
from ..errors import ConfigInvalid, ShapeMismatch

N_STAGES = 6
SLAB_CHANNELS = 9

PRESETS = {
    # tap channels, shallow (H/2) to deep (H/64)
    "desk": (16, 24, 32, 48, 64, 64),
    "paper": (32, 64, 96, 224, 1280, 1280),
}


@dataclass
class ArchConfig:
    channels: tuple = PRESETS["desk"]
    hops: int = 2
    input_size: tuple = (64, 64)
    landmarks: int = 20
    stage_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.input_size = tuple(int(s) for s in self.input_size)
        if len(self.channels) != N_STAGES:
            raise ConfigInvalid(f"need {N_STAGES} tap channel counts, got {self.channels}")
        if self.hops < 1:
            raise ConfigInvalid("hop count must be at least 1")
        if any(s % 64 for s in self.input_size):
            raise ConfigInvalid(f"input size {self.input_size} must be divisible by 64")
        if not 1 <= self.landmarks <= 20:
            raise ConfigInvalid("landmark count must lie in [1, 20]")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ArchConfig":
        if name not in PRESETS:
            raise ConfigInvalid(f"unknown preset {name!r}")
        return cls(channels=PRESETS[name], **overrides)

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "hops": self.hops,
                "input_size": list(self.input_size), "landmarks": self.landmarks,
                "stage_depth": self.stage_depth, "seed": self.seed}


def _check_spatial(x: Tensor):
    h, w = x.shape[-2:]
    if h % 64 or w % 64:
        raise ShapeMismatch(f"slab spatial dims {h}x{w} must be divisible by 64")


class EncoderStage(Module):
    def __init__(self, c_in, c_out, depth, rng, dtype):
        super().__init__()
        self.layers = [ConvBNReLU(c_in, c_out, 2, rng, dtype)]
        self.layers += [ConvBNReLU(c_out, c_out, 1, rng, dtype) for _ in range(depth - 1)]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class TapEncoder(Module):
    """Six stride-2 stages; every stage output is exposed as a tap, the last
    one also feeds global pooling and a 2-way linear head."""

    def __init__(self, in_channels: int = SLAB_CHANNELS, channels: Sequence[int] = PRESETS["desk"],
                 depth: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.channels = tuple(channels)
        widths = (in_channels,) + self.channels
        self.stages = [EncoderStage(widths[i], widths[i + 1], depth, rng, dtype)
                       for i in range(N_STAGES)]
        self.head = Linear(self.channels[-1], 2, rng, dtype)

    @property
    def first_conv(self):
        return self.stages[0].layers[0].conv

    def features(self, x: Tensor) -> list[Tensor]:
        x = as_tensor(x)
        if x.shape[-3] != self.in_channels:
            raise ShapeMismatch(f"encoder expects {self.in_channels} channels, got {x.shape}")
        _check_spatial(x)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps

    def forward(self, x: Tensor):
        taps = self.features(x)
        logits = self.head(F.global_avg_pool(taps[-1]))
        return logits, taps


class UpBlock(Module):
    """conv3x3-BN-ReLU, conv3x3-BN-ReLU, then 2x bilinear upsample."""

    def __init__(self, c_in, c_out, rng, dtype):
        super().__init__()
        self.conv1 = ConvBNReLU(c_in, c_out, 1, rng, dtype)
        self.conv2 = ConvBNReLU(c_out, c_out, 1, rng, dtype)

    def forward(self, x):
        return F.bilinear_upsample2x(self.conv2(self.conv1(x)))


class Aggregator(Module):
    """Six upsample blocks from the deepest tap back to input resolution.

    Blocks 1-5 are each followed by concatenation with the encoder tap at the
    resolution they land on; block 6 lands at full resolution with as many
    channels as the slab, whose own concatenation partner is the slab itself
    (done by the pipeline when it builds the next hop's input).
    """

    def __init__(self, tap_channels: Sequence[int] = PRESETS["desk"],
                 out_channels: int = SLAB_CHANNELS, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = tuple(tap_channels)
        outs = [c[4], c[3], c[2], c[1], c[0], out_channels]
        ins = [c[5]] + [2 * o for o in outs[:-1]]
        self.block_channels = tuple(outs)
        self.blocks = [UpBlock(i, o, rng, dtype) for i, o in zip(ins, outs)]

    def forward(self, taps: Sequence[Tensor]) -> Tensor:
        if len(taps) != N_STAGES:
            raise ShapeMismatch(f"aggregator needs {N_STAGES} taps, got {len(taps)}")
        x = taps[-1]
        for j, block in enumerate(self.blocks):
            x = block(x)
            if j < N_STAGES - 1:
                partner = taps[N_STAGES - 2 - j]
                if partner.shape[-2:] != x.shape[-2:] or partner.shape[-3] != x.shape[-3]:
                    raise ShapeMismatch(f"tap {partner.shape} does not match block output {x.shape}")
                x = F.concat_channels(x, partner)
        return x


def aggregate(agg: Aggregator, taps: Sequence[Tensor], input_slab) -> Tensor:
    out = agg(taps)
    slab = as_tensor(input_slab)
    if out.shape[-2:] != slab.shape[-2:] or out.shape[-3] != slab.shape[-3]:
        raise ShapeMismatch(f"aggregated map {out.shape} vs slab {slab.shape}")
    return out


def encoder_forward(enc: TapEncoder, slab):
    return enc(as_tensor(slab))


class HopPipeline(Module):
    def __init__(self, config: ArchConfig = None, dtype=np.float32):
        super().__init__()
        self.config = config or ArchConfig()
        rng = np.random.default_rng(self.config.seed)
        ch, depth = self.config.channels, self.config.stage_depth
        self.encoders = [TapEncoder(SLAB_CHANNELS, ch, depth, rng, dtype)]
        self.encoders += [TapEncoder(2 * SLAB_CHANNELS, ch, depth, rng, dtype)
                          for _ in range(self.config.hops - 1)]
        self.aggregators = [Aggregator(ch, SLAB_CHANNELS, rng, dtype)
                            for _ in range(self.config.hops - 1)]
        self.trained_hops: set[int] = set()

    @property
    def n_hops(self) -> int:
        return len(self.encoders)

    def hop_modules(self, k: int) -> list[Module]:
        """Modules that belong to hop ``k`` (1-based): its aggregator and encoder."""
        return ([self.aggregators[k - 2]] if k >= 2 else []) + [self.encoders[k - 1]]

    def forward(self, x, n_hops: int = None, ablate_context: bool = False) -> list[Tensor]:
        """Per-hop logits for hops ``1..n_hops``."""
        x = as_tensor(x)
        n_hops = self.n_hops if n_hops is None else n_hops
        logits, taps = self.encoders[0](x)
        out = [logits]
        for k in range(2, n_hops + 1):
            context = aggregate(self.aggregators[k - 2], taps, x)
            if ablate_context:
                context = Tensor(np.zeros_like(context.data))
            logits, taps = self.encoders[k - 1](F.concat_channels(x, context))
            out.append(logits)
        return out


def hop_forward(p: HopPipeline, slab, ablate_context: bool = False) -> list[np.ndarray]:
    """PE probability (softmax class 1) per hop, in inference mode."""
    was_training = p.training
    p.eval()
    try:
        with no_grad():
            logits = p(as_tensor(slab), ablate_context=ablate_context)
    finally:
        p.train(was_training)
    return [F.softmax(l.data)[..., 1] for l in logits]


def widen_from(src: TapEncoder, dst: TapEncoder) -> None:
    """Initialise ``dst`` with ``src`` weights; first-conv channels that ``src``
    lacks start at zero so ``dst`` initially ignores the extra input."""
    state = src.state_dict()
    first = "stages.0.layers.0.conv.weight"
    w = state[first]
    wide = np.zeros_like(dst.first_conv.weight.data)
    wide[:, :w.shape[1]] = w
    state = dict(state)
    state[first] = wide
    dst.load_state_dict(state)
