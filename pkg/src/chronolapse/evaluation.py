"""Measurements for the toy learning experiment on the synthetic tone-curve corpus."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import dataset as ds
from .nets import Generator


def heldout_inputs(index: ds.DatasetIndex, size: int, frame: int = 0) -> list[np.ndarray]:
    """One center-cropped ``size`` frame per sequence."""
    out = []
    for rec in index.records:
        img = ds.load_frame(rec.resolve(rec.frames[min(frame, len(rec.frames) - 1)]))
        h, w = img.shape[:2]
        top, left = (h - size) // 2, (w - size) // 2
        out.append(np.ascontiguousarray(img[top:top + size, left:left + size]))
    return out


def latent_for(g: Generator, seed: int) -> torch.Tensor | None:
    if not g.d_z:
        return None
    return torch.from_numpy(np.random.default_rng(seed).standard_normal((1, g.d_z)).astype(np.float32))


def generate(g: Generator, image: np.ndarray, times: Sequence[float], z: torch.Tensor | None) -> np.ndarray:
    """``(T, H, W, 3)`` outputs for one image at every time."""
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    t = torch.as_tensor(np.asarray(times, np.float32))
    with torch.no_grad():
        y = g(x.expand(len(t), -1, -1, -1), t, z)
    return y.permute(0, 2, 3, 1).numpy()


def warm_cool_balance(frames: np.ndarray) -> np.ndarray:
    """Mean red minus mean blue per frame; the chromatic axis the synthetic tint moves along."""
    return frames[..., 0].mean(axis=(-2, -1)) - frames[..., 2].mean(axis=(-2, -1))


@dataclass
class ToneReport:
    correlations: np.ndarray  # per held-out image
    hue_variance: float  # mean over images of the variance across t of the warm/cool balance
    times: np.ndarray

    def summary(self) -> dict:
        c = self.correlations
        return {"corr_min": float(c.min()), "corr_mean": float(c.mean()), "hue_variance": self.hue_variance}


def tone_report(g: Generator, heldout: ds.DatasetIndex, curves: dict, size: int,
                steps: int = 24, frame: int = 5) -> ToneReport:
    """Pearson correlation of generated mean luminance with each sequence's true tone curve."""
    times = np.arange(steps) / steps
    cors, hue = [], []
    for k, (rec, img) in enumerate(zip(heldout.records, heldout_inputs(heldout, size, frame))):
        out = generate(g, img, times, latent_for(g, k))
        c = curves[rec.sequence_id]
        truth = ds.tone_curve(times, c["amplitude"], c["phase"])
        cors.append(float(np.corrcoef(ds.mean_luminance(out), truth)[0, 1]))
        hue.append(float(np.var(warm_cool_balance(out))))
    return ToneReport(np.array(cors), float(np.mean(hue)), times)


def step_differences(g: Generator, image: np.ndarray, z: torch.Tensor | None,
                     deltas: Sequence[float] = (1 / 240, 1 / 24, 1 / 4), base_steps: int = 24) -> list[float]:
    """Mean ``|Y_t - Y_{t+d}|`` over ``base_steps`` start times, for each ``d``."""
    base = np.arange(base_steps) / base_steps
    ref = generate(g, image, base, z)
    out = []
    for d in deltas:
        moved = generate(g, image, (base + d) % 1.0, z)
        out.append(float(np.abs(moved - ref).mean()))
    return out


def latent_jitter(g: Generator, image: np.ndarray, steps: int = 48, seed: int = 0) -> tuple[float, float]:
    """Frame-to-frame luminance jitter with one shared ``z`` vs a fresh ``z`` per frame."""
    times = np.arange(steps) / steps
    shared = ds.mean_luminance(generate(g, image, times, latent_for(g, seed)))
    if not g.d_z:
        return float(np.abs(np.diff(shared)).mean()), float("nan")
    rng = np.random.default_rng(seed + 1)
    fresh = []
    for t in times:
        z = torch.from_numpy(rng.standard_normal((1, g.d_z)).astype(np.float32))
        fresh.append(ds.mean_luminance(generate(g, image, [t], z))[0])
    return float(np.abs(np.diff(shared)).mean()), float(np.abs(np.diff(fresh)).mean())
