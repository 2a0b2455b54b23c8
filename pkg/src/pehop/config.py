"""Pipeline configuration loaded from JSON.

Seeds: every stage derives its own 64-bit seed as the first 8 bytes
(little-endian) of ``sha256(f"{seed}:{stage}")``; see ``synth.derive_seed``.
Stage names are ``synth``, ``init``, ``pretrain``, ``train:hop<k>`` and
``augment:hop<k>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentSpec
from .errors import ConfigInvalid
from .hopnet.model import PRESETS, ArchConfig
from .hopnet.training import TrainConfig
from .synth import SyntheticStudySpec, derive_seed
from .volume import DEFAULT_WINDOWS, WindowSpec

_TOP_LEVEL = {"windows", "input_size", "preset", "arch", "augment", "train", "pretrain",
              "synth", "n_studies", "seed", "paths", "infer_batch_size"}


def _default_train():
    return TrainConfig(steps=150, batch_size=16, optimizer="sgd", lr=0.05, momentum=0.9)


def _default_pretrain():
    return TrainConfig(steps=100, batch_size=16, optimizer="sgd", lr=0.02, momentum=0.9)


@dataclass
class PipelineConfig:
    windows: tuple = DEFAULT_WINDOWS
    input_size: tuple = (64, 64)
    preset: str = "desk"
    arch: dict = field(default_factory=dict)        # ArchConfig overrides
    augment: AugmentSpec | None = field(default_factory=AugmentSpec)
    train: TrainConfig = field(default_factory=_default_train)
    pretrain: TrainConfig = field(default_factory=_default_pretrain)
    synth: SyntheticStudySpec = field(default_factory=SyntheticStudySpec)
    n_studies: int = 20
    seed: int = 0
    paths: dict = field(default_factory=dict)
    infer_batch_size: int = 32

    def __post_init__(self):
        self.input_size = tuple(int(s) for s in self.input_size)
        if len(self.input_size) != 2 or any(s < 64 or s % 64 for s in self.input_size):
            raise ConfigInvalid(f"input_size must be two multiples of 64, got {self.input_size}")
        if self.preset not in PRESETS:
            raise ConfigInvalid(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if len(self.windows) != 3:
            raise ConfigInvalid("exactly three HU windows are required")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")
        if self.n_studies < 1:
            raise ConfigInvalid("n_studies must be positive")
        self.arch_config()  # validate early

    def arch_config(self) -> ArchConfig:
        extra = {k: v for k, v in self.arch.items() if k != "channels"}
        try:
            if "channels" in self.arch:
                return ArchConfig(channels=self.arch["channels"], input_size=self.input_size,
                                  seed=self.stage_seed("init") % 2 ** 32, **extra)
            return ArchConfig.preset(self.preset, input_size=self.input_size,
                                     seed=self.stage_seed("init") % 2 ** 32, **extra)
        except TypeError as exc:
            raise ConfigInvalid(f"bad arch settings: {exc}") from exc

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def train_config(self, hop: int) -> TrainConfig:
        d = self.train.to_dict()
        d["seed"] = self.stage_seed(f"train:hop{hop}")
        return TrainConfig.from_dict(d)

    def pretrain_config(self) -> TrainConfig:
        d = self.pretrain.to_dict()
        d["seed"] = self.stage_seed("pretrain")
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "windows": [{"center": w.center, "width": w.width, "name": w.name} for w in self.windows],
            "input_size": list(self.input_size), "preset": self.preset, "arch": dict(self.arch),
            "augment": None if self.augment is None else self.augment.to_dict(),
            "train": self.train.to_dict(), "pretrain": self.pretrain.to_dict(),
            "synth": self.synth.to_dict(), "n_studies": self.n_studies, "seed": int(self.seed),
            "paths": dict(self.paths), "infer_batch_size": self.infer_batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a JSON object")
        unknown = set(d) - _TOP_LEVEL
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            if "windows" in d:
                kw["windows"] = tuple(WindowSpec(float(w["center"]), float(w["width"]),
                                                 str(w.get("name", ""))) for w in d["windows"])
            if "augment" in d:
                kw["augment"] = None if d["augment"] is None else AugmentSpec.from_dict(d["augment"])
            for key in ("train", "pretrain"):
                if key in d:
                    base = (_default_train() if key == "train" else _default_pretrain()).to_dict()
                    base.update(d[key])
                    kw[key] = TrainConfig.from_dict(base)
            if "synth" in d:
                kw["synth"] = SyntheticStudySpec.from_dict(d["synth"])
            for key in ("input_size", "preset", "arch", "n_studies", "seed", "paths",
                        "infer_batch_size"):
                if key in d:
                    kw[key] = d[key]
            return cls(**kw)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigInvalid(f"invalid config: {exc}") from exc


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a JSON config (defaults when ``path`` is None); ``overrides`` are
    top-level keys applied on top, ignoring None values."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigInvalid(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(data)
