"""Configuration dataclasses shared across the package."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError


class Mode(str, enum.Enum):
    VANILLA = "vanilla"
    MULTIFRAME = "multiframe"
    MULTIDOMAIN = "multidomain"


class TimeMode(str, enum.Enum):
    RAW = "raw"
    CYCLIC = "cyclic"


class Solver(str, enum.Enum):
    CG = "cg"
    DENSE = "dense"


@dataclass(frozen=True)
class AugmentConfig:
    resize_to: int = 136
    crop_to: int = 128
    rotation_deg: tuple[float, float] = (-5.0, 5.0)
    scale: tuple[float, float] = (0.95, 1.05)
    shear_deg: tuple[float, float] = (-5.0, 5.0)
    hflip_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "rotation_deg", tuple(self.rotation_deg))
        object.__setattr__(self, "scale", tuple(self.scale))
        object.__setattr__(self, "shear_deg", tuple(self.shear_deg))
        if self.crop_to > self.resize_to:
            raise ConfigError(f"crop_to {self.crop_to} exceeds resize_to {self.resize_to}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must lie in [0, 1]")
        for name in ("rotation_deg", "scale", "shear_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is reversed: {lo} > {hi}")

    @classmethod
    def identity(cls, size: int) -> "AugmentConfig":
        """Resize only: no affine jitter, no flip, no crop offset."""
        return cls(size, size, (0.0, 0.0), (1.0, 1.0), (0.0, 0.0), 0.0)


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.MULTIDOMAIN
    iterations: int = 60000
    batch_size: int = 4
    frames_per_example: int = 16
    negatives_per_example: int | None = None  # None -> one per frame
    learning_rate: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lambda_rec: float = 0.5
    image_size: int = 128
    resize_size: int = 136
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    time_encoding: TimeMode = TimeMode.CYCLIC
    d_z: int = 64
    # generator: VGG-16 style encoder truncated after `encoder_stages` pools
    encoder_stages: int = 2
    encoder_width: int = 64
    res_blocks: int = 6
    res_channels: int = 256
    # discriminators / translator
    disc_width: int = 64
    disc_layers: int = 4
    disc_feature: int = 256
    cond_hidden: int = 128
    translator_width: int = 32
    translator_depth: int = 3
    pretrained_encoder: str | None = None
    literal_paper_loss: bool = False
    checkpoint_every: int = 5000
    max_nonfinite_streak: int = 10

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "time_encoding", TimeMode(self.time_encoding))
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))
        positive = (
            "iterations", "batch_size", "frames_per_example", "image_size", "resize_size",
            "encoder_stages", "encoder_width", "res_channels", "disc_width", "disc_layers",
            "disc_feature", "cond_hidden", "translator_width", "translator_depth",
            "checkpoint_every", "max_nonfinite_streak",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0 or self.lambda_rec < 0 or self.d_z < 0 or self.res_blocks < 0:
            raise ConfigError("learning_rate, lambda_rec, d_z and res_blocks must be nonnegative")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.mode is not Mode.VANILLA and self.frames_per_example < 2:
            raise ConfigError("frames_per_example must be >= 2 for set-based modes")
        if self.image_size > self.resize_size:
            raise ConfigError("image_size must not exceed resize_size")
        if self.image_size % (2 ** self.encoder_stages):
            raise ConfigError("image_size must be divisible by the encoder stride")
        if self.encoder_stages > 5:
            raise ConfigError("VGG-16 has five pooling stages")
        if self.augment.crop_to != self.image_size or self.augment.resize_to != self.resize_size:
            object.__setattr__(
                self,
                "augment",
                dataclasses.replace(self.augment, crop_to=self.image_size, resize_to=self.resize_size),
            )

    @property
    def stride(self) -> int:
        return 2 ** self.encoder_stages

    @property
    def negatives(self) -> int:
        if self.negatives_per_example is None:
            return self.frames_per_example
        return self.negatives_per_example

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: 32x32 crops and narrow networks, CPU-trainable."""
        base = dict(
            image_size=32,
            resize_size=36,
            batch_size=4,
            frames_per_example=8,
            iterations=2000,
            d_z=8,
            encoder_width=16,
            res_blocks=2,
            res_channels=32,
            disc_width=16,
            disc_layers=3,
            disc_feature=32,
            cond_hidden=32,
            translator_width=8,
            translator_depth=2,
            checkpoint_every=1000,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**_checked_kwargs(cls, data))

    def hash(self) -> str:
        """Digest of every field that shapes the model or its optimization.

        Run-length fields are excluded so a finished run can be extended.
        """
        d = self.to_dict()
        for k in ("iterations", "checkpoint_every"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class UpsampleConfig:
    beta: float = 1.0
    eps_w: float = 0.01
    eps_ridge: float = 1e-4
    solver: Solver = Solver.CG
    cg_tol: float = 1e-6
    cg_max_iters: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "solver", Solver(self.solver))
        if min(self.beta, self.eps_w, self.eps_ridge) < 0:
            raise ConfigError("beta, eps_w and eps_ridge must be nonnegative")
        if self.cg_tol <= 0:
            raise ConfigError("cg_tol must be positive")
        if self.cg_max_iters <= 0:
            raise ConfigError("cg_max_iters must be positive")

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UpsampleConfig":
        return cls(**_checked_kwargs(cls, data))


def _checked_kwargs(cls, data: dict[str, Any]) -> dict[str, Any]:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(data)


def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj
