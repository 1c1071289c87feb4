"""Single-image inference: a timestamp schedule in, a frame sequence out."""

from __future__ import annotations

import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from . import dataset as ds
from .config import UpsampleConfig
from .errors import ChronoIOError, ConfigError, OutputExistsError
from .nets import Generator
from .trainer import Checkpoint, load_checkpoint
from .upsampler import guided_upsample

log = logging.getLogger(__name__)


def schedule(t_start: float, t_end: float, count: int) -> list[float]:
    """``count`` evenly spaced times from ``t_start`` toward ``t_end`` (exclusive), wrapping at midnight.

    ``t_end <= t_start`` crosses midnight; equal endpoints span the whole day.
    """
    if count < 1:
        raise ConfigError("frame count must be >= 1")
    span = float(t_end) - float(t_start)
    if span <= 0:
        span += 1.0
    return [wrap_time(t_start + k * span / count) for k in range(count)]


def wrap_time(t: float) -> float:
    t = float(t) % 1.0
    return 0.0 if t >= 1.0 else t


@dataclass
class SynthesisRequest:
    image: str | os.PathLike
    checkpoint: str | os.PathLike
    timestamps: Sequence[float] | None = None
    t_start: float = 0.0
    t_end: float = 1.0
    frames: int = 24
    seed: int = 0
    latent: Sequence[float] | None = None
    upsample: bool = True
    upsample_config: UpsampleConfig = field(default_factory=UpsampleConfig)
    working_size: int | None = None  # long side at network resolution; defaults to the training crop

    def times(self) -> list[float]:
        if self.timestamps is not None:
            if len(self.timestamps) == 0:
                raise ConfigError("empty timestamp list")
            return [wrap_time(t) for t in self.timestamps]
        return schedule(self.t_start, self.t_end, self.frames)


@dataclass
class SynthesizedSequence:
    frames: list[np.ndarray]
    timestamps: list[float]
    latent: list[float]
    provenance: dict
    low_res: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.frames) != len(self.timestamps):
            raise ValueError("one frame per timestamp")


def _working_shape(h: int, w: int, long_side: int) -> tuple[int, int]:
    scale = min(1.0, long_side / max(h, w))
    return max(1, round(h * scale)), max(1, round(w * scale))


def run_generator(g: Generator, image: np.ndarray, times: Sequence[float], z: torch.Tensor | None,
                  chunk: int = 16) -> list[np.ndarray]:
    """Generate at network resolution; pads to the encoder stride by reflection and crops back."""
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))[None]
    h, w = x.shape[-2:]
    s = g.stride
    ph, pw = (-h) % s, (-w) % s
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    outs = []
    with torch.no_grad():
        for i in range(0, len(times), chunk):
            tt = torch.tensor(times[i:i + chunk], dtype=torch.float32)
            y = g(x.expand(len(tt), -1, -1, -1), tt, z)[..., :h, :w]
            outs.extend(y.permute(0, 2, 3, 1).numpy().astype(np.float32))
    return outs


def synthesize(request: SynthesisRequest, checkpoint: Checkpoint | None = None) -> SynthesizedSequence:
    ckpt = checkpoint or load_checkpoint(request.checkpoint)
    bundle = ckpt.bundle()
    g = bundle.g_t
    try:
        full = ds.read_image(request.image)
    except ds.ImageDecodeError as exc:
        raise ChronoIOError(str(exc)) from exc
    times = request.times()

    if g.d_z:
        if request.latent is not None:
            z = torch.tensor(list(request.latent), dtype=torch.float32).reshape(1, -1)
            if z.shape[1] != g.d_z:
                raise ConfigError(f"latent has {z.shape[1]} values, model expects {g.d_z}")
        else:
            z = torch.from_numpy(np.random.default_rng(request.seed).standard_normal((1, g.d_z)).astype(np.float32))
    else:
        z = None

    size = request.working_size or ckpt.config.image_size
    lh, lw = _working_shape(*full.shape[:2], size)
    low_in = full if (lh, lw) == full.shape[:2] else cv2.resize(full, (lw, lh), interpolation=cv2.INTER_AREA)
    low = run_generator(g, low_in, times, z)
    if request.upsample:
        frames = [guided_upsample(full, o, request.upsample_config).astype(np.float32) for o in low]
    else:
        frames = low
    provenance = {
        "checkpoint": str(request.checkpoint),
        "checkpoint_hash": ckpt.file_hash(),
        "iteration": ckpt.iteration,
        "config": ckpt.config.to_dict(),
        "seed": request.seed,
        "upsampled": bool(request.upsample),
        "input": str(request.image),
    }
    latent = [] if z is None else z[0].tolist()
    return SynthesizedSequence(frames, times, latent, provenance, low)


def write_sequence(seq: SynthesizedSequence, out_dir: str | os.PathLike, force: bool = False,
                   contact_sheet: bool = True) -> Path:
    """Write ``frames/%05d.png``, ``sequence.json`` and optionally ``contact_sheet.png``."""
    out = Path(out_dir)
    manifest = out / "sequence.json"
    frame_dir = out / "frames"
    if manifest.exists() or (frame_dir.exists() and any(frame_dir.iterdir())):
        if not force:
            raise OutputExistsError(f"{out} already holds a sequence; pass force to overwrite")
        shutil.rmtree(frame_dir, ignore_errors=True)
    try:
        frame_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ChronoIOError(f"cannot create {frame_dir}: {exc}") from exc
    names = []
    for k, frame in enumerate(seq.frames):
        name = f"frames/{k:05d}.png"
        ds.write_image(out / name, frame)
        names.append(name)
    doc = {
        "frames": [{"path": n, "t": t} for n, t in zip(names, seq.timestamps)],
        "latent": seq.latent,
        "seed": seq.provenance.get("seed"),
        "checkpoint_hash": seq.provenance.get("checkpoint_hash"),
        "provenance": seq.provenance,
    }
    if contact_sheet and seq.frames:
        ds.write_image(out / "contact_sheet.png", make_contact_sheet(seq.frames))
        doc["contact_sheet"] = "contact_sheet.png"
    try:
        manifest.write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        raise ChronoIOError(f"cannot write {manifest}: {exc}") from exc
    return manifest


def read_sequence(path: str | os.PathLike) -> list[tuple[str, float]]:
    """``(frame path, t)`` pairs from a ``sequence.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / "sequence.json"
    doc = json.loads(path.read_text())
    return [(str(path.parent / f["path"]), float(f["t"])) for f in doc["frames"]]


def make_contact_sheet(frames: Sequence[np.ndarray], max_frames: int = 24, height: int = 96) -> np.ndarray:
    pick = np.linspace(0, len(frames) - 1, min(max_frames, len(frames))).round().astype(int)
    tiles = []
    for i in pick:
        f = frames[i]
        h, w = f.shape[:2]
        th = min(height, h)
        tw = max(1, round(w * th / h))
        tiles.append(cv2.resize(np.asarray(f, np.float32), (tw, th), interpolation=cv2.INTER_AREA))
    return np.concatenate(tiles, axis=1)
