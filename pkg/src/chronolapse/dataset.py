"""Timestamped sequence datasets: manifests, sampling, augmentation, toy corpus.

Images are handled as float32 ``H x W x 3`` arrays in ``[-1, 1]``. Times are
plain floats in ``[0, 1)``, the fraction of a local 24-hour day.
"""

from __future__ import annotations

import datetime as _dt
import enum
import functools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import AugmentConfig
from .errors import (
    ChronoIOError,
    EmptyDatasetError,
    InsufficientFramesError,
    ManifestError,
)

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
_US_PER_DAY = SECONDS_PER_DAY * 1_000_000
MAX_OFFSET_MINUTES = 14 * 60


class Domain(str, enum.Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


# ---------------------------------------------------------------------------
# image I/O


_COLOR_MODES = {"RGB", "RGBA", "RGBX", "CMYK", "YCbCr"}


class ImageDecodeError(Exception):
    """Frame could not be used: unreadable, empty, or single-channel."""


def to_unit(img8: np.ndarray) -> np.ndarray:
    return img8.astype(np.float32) / 127.5 - 1.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8-bit RGB image to ``[-1, 1]``.

    Grayscale files are rejected rather than broadcast to three channels.
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "P":
                im = im.convert("RGB")
                if _is_gray(np.asarray(im)):
                    raise ImageDecodeError(f"{path}: palette image is grayscale")
            elif im.mode not in _COLOR_MODES:
                raise ImageDecodeError(f"{path}: single-channel image (mode {im.mode})")
            arr = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    return to_unit(arr)


def _is_gray(arr: np.ndarray) -> bool:
    return bool(np.all(arr[..., 0] == arr[..., 1]) and np.all(arr[..., 1] == arr[..., 2]))


@functools.lru_cache(maxsize=65536)
def _cached_read(path: str) -> np.ndarray:
    arr = read_image(path)
    arr.setflags(write=False)
    return arr


def load_frame(path: str) -> np.ndarray:
    """Cached, read-only decode used by the samplers."""
    return _cached_read(str(path))


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    try:
        Image.fromarray(to_uint8(img)).save(path)
    except OSError as exc:
        raise ChronoIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# timestamps


def _parse_wall_clock(wall_clock: str | _dt.datetime) -> _dt.datetime:
    if isinstance(wall_clock, _dt.datetime):
        stamp = wall_clock
    else:
        text = wall_clock.strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        stamp = _dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(_dt.timezone.utc)
    return stamp


def normalize_timestamp(wall_clock: str | _dt.datetime, utc_offset_minutes: int) -> float:
    """Local time of day as a fraction of 24 hours.

    Naive timestamps are read as UTC. Arithmetic is done in integer
    microseconds so the result is exactly periodic in the offset.
    """
    stamp = _parse_wall_clock(wall_clock)
    us = ((stamp.hour * 60 + stamp.minute) * 60 + stamp.second) * 1_000_000 + stamp.microsecond
    us += int(utc_offset_minutes) * 60_000_000
    return (us % _US_PER_DAY) / _US_PER_DAY


def check_time(t: float) -> float:
    t = float(t)
    if not (0.0 <= t < 1.0):
        raise ValueError(f"time of day must lie in [0, 1), got {t}")
    return t


# ---------------------------------------------------------------------------
# manifest types


@dataclass(frozen=True)
class Frame:
    path: str
    wall_clock: str | None = None


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    camera_id: str
    utc_offset_minutes: int
    frames: tuple[Frame, ...]
    domain: Domain
    base_dir: str = ""

    def resolve(self, frame: Frame) -> str:
        return frame.path if os.path.isabs(frame.path) else os.path.join(self.base_dir, frame.path)

    @functools.cached_property
    def times(self) -> tuple[float | None, ...]:
        return tuple(
            None if f.wall_clock is None else normalize_timestamp(f.wall_clock, self.utc_offset_minutes)
            for f in self.frames
        )

    def to_json(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "camera_id": self.camera_id,
            "utc_offset_minutes": self.utc_offset_minutes,
            "domain": self.domain.value,
            "frames": [{"path": f.path, "wall_clock": f.wall_clock} for f in self.frames],
        }


@dataclass(frozen=True)
class DatasetStats:
    num_sequences: int
    num_frames: int
    dropped_frames: int = 0
    dropped_sequences: int = 0


@dataclass(frozen=True)
class DatasetIndex:
    records: tuple[SequenceRecord, ...]
    split: Split = Split.TRAIN
    stats: DatasetStats = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        ids = [r.sequence_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate sequence_id in index")
        if self.stats is None:
            object.__setattr__(
                self, "stats", DatasetStats(len(self.records), sum(len(r.frames) for r in self.records))
            )

    def __len__(self) -> int:
        return len(self.records)

    def labeled(self) -> list[SequenceRecord]:
        return [r for r in self.records if r.domain is Domain.LABELED]

    def times(self) -> np.ndarray:
        """Every labeled frame time; the empirical distribution used for ``t ~ labeled``."""
        ts = [t for r in self.labeled() for t in r.times]
        return np.asarray(ts, dtype=np.float64)

    def to_manifest(self) -> list[dict]:
        return [r.to_json() for r in self.records]


def write_manifest(records: Iterable[SequenceRecord] | DatasetIndex, path: str | os.PathLike) -> None:
    if isinstance(records, DatasetIndex):
        records = records.records
    try:
        Path(path).write_text(json.dumps([r.to_json() for r in records], indent=1))
    except OSError as exc:
        raise ChronoIOError(f"cannot write manifest {path}: {exc}") from exc


def _probe(path: str) -> tuple[int, int] | None:
    try:
        img = read_image(path)
    except ImageDecodeError as exc:
        log.warning("dropping frame: %s", exc)
        return None
    return img.shape[:2]


def _parse_record(entry: dict, base_dir: str, domain_tag: Domain | None) -> SequenceRecord:
    try:
        domain = Domain(entry.get("domain", domain_tag.value if domain_tag else None))
        frames = tuple(Frame(str(f["path"]), f.get("wall_clock")) for f in entry["frames"])
        rec = SequenceRecord(
            sequence_id=str(entry["sequence_id"]),
            camera_id=str(entry.get("camera_id", entry["sequence_id"])),
            utc_offset_minutes=int(entry.get("utc_offset_minutes", 0)),
            frames=frames,
            domain=domain,
            base_dir=base_dir,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest entry: {exc!r}") from exc
    if domain_tag is not None and rec.domain is not domain_tag:
        raise ManifestError(f"{rec.sequence_id}: domain {rec.domain.value} but loading as {domain_tag.value}")
    if not frames:
        raise ManifestError(f"{rec.sequence_id}: empty frame list")
    if abs(rec.utc_offset_minutes) > MAX_OFFSET_MINUTES:
        raise ManifestError(f"{rec.sequence_id}: utc offset {rec.utc_offset_minutes} outside +-14h")
    if rec.domain is Domain.LABELED:
        if any(f.wall_clock is None for f in frames):
            raise ManifestError(f"{rec.sequence_id}: labeled sequence with missing wall_clock")
        try:
            rec.times
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"{rec.sequence_id}: bad wall_clock: {exc}") from exc
    return rec


def load_manifest(
    path: str | os.PathLike,
    domain_tag: Domain | str | None = None,
    split: Split | str = Split.TRAIN,
    validate_images: bool = True,
    workers: int = 1,
) -> DatasetIndex:
    """Read a JSON manifest and drop frames whose images cannot be used.

    Relative frame paths resolve against the manifest's directory. Frames
    that fail to decode, are single-channel, or whose size differs from the
    sequence's first good frame are dropped and counted.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ManifestError(f"{path}: top level must be a list")
    tag = Domain(domain_tag) if domain_tag is not None else None
    base_dir = str(path.parent)
    records = [_parse_record(e, base_dir, tag) for e in raw]
    ids = [r.sequence_id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate sequence_id")

    dropped_frames = 0
    dropped_seqs = 0
    if validate_images:
        all_paths = [r.resolve(f) for r in records for f in r.frames]
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            shapes = iter(list(pool.map(_probe, all_paths)))
        kept = []
        for rec in records:
            good = []
            ref = None
            for frame in rec.frames:
                shape = next(shapes)
                if shape is None:
                    continue
                if ref is None:
                    ref = shape
                elif shape != ref:
                    log.warning("dropping frame %s: size %s differs from %s", frame.path, shape, ref)
                    continue
                good.append(frame)
            dropped_frames += len(rec.frames) - len(good)
            if good:
                kept.append(SequenceRecord(rec.sequence_id, rec.camera_id, rec.utc_offset_minutes,
                                           tuple(good), rec.domain, rec.base_dir))
            else:
                dropped_seqs += 1
        records = kept
    if not records:
        raise EmptyDatasetError(f"{path}: no valid sequences")
    stats = DatasetStats(len(records), sum(len(r.frames) for r in records), dropped_frames, dropped_seqs)
    return DatasetIndex(tuple(records), Split(split), stats)


def split_by_camera(
    index: DatasetIndex, test_fraction: float, rng: np.random.Generator
) -> tuple[DatasetIndex, DatasetIndex]:
    """Partition whole cameras into train and test sets."""
    cameras = sorted({r.camera_id for r in index.records})
    n_test = min(len(cameras) - 1, max(1, round(test_fraction * len(cameras))))
    if n_test < 1:
        raise EmptyDatasetError("need at least two cameras to split")
    test_cams = set(rng.choice(cameras, size=n_test, replace=False).tolist())
    train = tuple(r for r in index.records if r.camera_id not in test_cams)
    test = tuple(r for r in index.records if r.camera_id in test_cams)
    return DatasetIndex(train, Split.TRAIN), DatasetIndex(test, Split.TEST)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AffineParams:
    """One geometric augmentation, shared by every frame of a set."""

    resize_to: int
    crop_to: int
    angle: float = 0.0
    scale: float = 1.0
    shear: float = 0.0
    flip: bool = False
    top: int = 0
    left: int = 0

    def matrix(self) -> np.ndarray:
        c = (self.resize_to - 1) / 2.0
        a = math.radians(self.angle)
        s = math.radians(self.shear)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        shear = np.array([[1.0, math.tan(s)], [0.0, 1.0]])
        lin = self.scale * rot @ shear
        offset = np.array([c, c]) - lin @ np.array([c, c])
        return np.hstack([lin, offset[:, None]]).astype(np.float64)

    def apply(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape[:2]
        size = self.resize_to
        if (h, w) != (size, size):
            interp = cv2.INTER_AREA if h > size and w > size else cv2.INTER_LINEAR
            img = cv2.resize(np.ascontiguousarray(img), (size, size), interpolation=interp)
        if self.angle or self.shear or self.scale != 1.0:
            img = cv2.warpAffine(img, self.matrix(), (size, size), flags=cv2.INTER_LINEAR,
                                 borderMode=cv2.BORDER_REFLECT_101)
        if self.flip:
            img = img[:, ::-1]
        img = img[self.top:self.top + self.crop_to, self.left:self.left + self.crop_to]
        return np.ascontiguousarray(img, dtype=np.float32)


def draw_affine(cfg: AugmentConfig, rng: np.random.Generator) -> AffineParams:
    slack = cfg.resize_to - cfg.crop_to
    return AffineParams(
        resize_to=cfg.resize_to,
        crop_to=cfg.crop_to,
        angle=float(rng.uniform(*cfg.rotation_deg)),
        scale=float(rng.uniform(*cfg.scale)),
        shear=float(rng.uniform(*cfg.shear_deg)),
        flip=bool(rng.random() < cfg.hflip_prob),
        top=int(rng.integers(0, slack + 1)),
        left=int(rng.integers(0, slack + 1)),
    )


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class TimedFrame:
    image: np.ndarray
    time: float


@dataclass(frozen=True)
class FrameSet:
    frames: tuple[TimedFrame, ...]
    sequence_id: str
    indices: tuple[int, ...] = ()
    transform: AffineParams | None = None

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def images(self) -> np.ndarray:
        return np.stack([f.image for f in self.frames])

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames], dtype=np.float64)


@dataclass(frozen=True)
class FrameWindow:
    """Contiguous frames of an unlabeled sequence; no timestamps."""

    images: np.ndarray
    sequence_id: str
    indices: tuple[int, ...] = ()
    transform: AffineParams | None = None

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class NegativePairSet:
    images: np.ndarray
    times: np.ndarray
    index_pairs: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.index_pairs)


def _augment_all(images: list[np.ndarray], augment: AugmentConfig | None, rng) -> tuple[np.ndarray, AffineParams | None]:
    if augment is None:
        return np.stack(images), None
    params = draw_affine(augment, rng)
    return np.stack([params.apply(im) for im in images]), params


def sample_frameset(
    index: DatasetIndex,
    n: int,
    rng: np.random.Generator,
    augment: AugmentConfig | None = None,
) -> FrameSet:
    """Draw ``n`` frames from one uniformly chosen labeled sequence.

    Sequences with fewer than ``n`` frames are sampled with replacement.
    """
    eligible = index.labeled()
    if not eligible or n < 1:
        raise EmptyDatasetError("no labeled sequence to sample from")
    rec = eligible[int(rng.integers(len(eligible)))]
    m = len(rec.frames)
    idx = rng.choice(m, size=n, replace=m < n)
    idx = tuple(int(i) for i in np.sort(idx))
    raw = [load_frame(rec.resolve(rec.frames[i])) for i in idx]
    images, params = _augment_all(raw, augment, rng)
    times = rec.times
    frames = tuple(TimedFrame(images[k], times[i]) for k, i in enumerate(idx))
    return FrameSet(frames, rec.sequence_id, idx, params)


def sample_window(
    index: DatasetIndex,
    n: int,
    rng: np.random.Generator,
    augment: AugmentConfig | None = None,
) -> FrameWindow:
    """Draw ``n`` contiguous frames from one uniformly chosen sequence (any domain)."""
    if not index.records or n < 1:
        raise EmptyDatasetError("no sequence to sample from")
    rec = index.records[int(rng.integers(len(index.records)))]
    m = len(rec.frames)
    if m >= n:
        start = int(rng.integers(0, m - n + 1))
        idx = tuple(range(start, start + n))
    else:
        idx = tuple(int(i) for i in np.sort(rng.choice(m, size=n, replace=True)))
    raw = [load_frame(rec.resolve(rec.frames[i])) for i in idx]
    images, params = _augment_all(raw, augment, rng)
    return FrameWindow(images, rec.sequence_id, idx, params)


def sample_frames(
    index: DatasetIndex,
    count: int,
    rng: np.random.Generator,
    augment: AugmentConfig | None = None,
) -> list[TimedFrame]:
    """Independent single frames, each from its own random sequence."""
    out = []
    for _ in range(count):
        fs = sample_frameset(index, 1, rng, augment)
        out.append(fs.frames[0])
    return out


def make_negative_pairs(fs: FrameSet, k: int | None, rng: np.random.Generator) -> NegativePairSet:
    """``k`` distinct mismatched pairs ``(I_i, t_j)`` with ``i != j``."""
    n = len(fs)
    if n < 2:
        raise InsufficientFramesError(f"need at least 2 frames for negative pairs, got {n}")
    k = n if k is None else k
    total = n * (n - 1)
    if not 0 <= k <= total:
        raise ValueError(f"k={k} outside [0, {total}]")
    flat = rng.choice(total, size=k, replace=False)
    i = flat // (n - 1)
    j = flat % (n - 1)
    j = j + (j >= i)  # skip the diagonal
    images = np.stack([fs.frames[a].image for a in i]) if k else np.empty((0,) + fs.frames[0].image.shape, np.float32)
    times = np.array([fs.frames[b].time for b in j], dtype=np.float64)
    return NegativePairSet(images, times, tuple(zip(i.tolist(), j.tolist())))


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation without fixed points (``n >= 2``)."""
    if n < 2:
        raise InsufficientFramesError("a derangement needs n >= 2")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


# ---------------------------------------------------------------------------
# synthetic corpus


def tone_curve(t, amplitude: float, phase: float):
    """Mean brightness (on a [0, 1] scale) at time ``t``."""
    return 0.5 + amplitude * np.sin(2 * np.pi * (np.asarray(t) - phase))


def tint_curve(t, amplitude: float, phase: float, tint: float):
    """Warm/cool shift: positive adds red and removes blue. Zero-sum over channels."""
    return tint * amplitude * np.cos(4 * np.pi * (np.asarray(t) - phase))


def mean_luminance(img: np.ndarray) -> np.ndarray:
    """Mean over pixels and channels, mapped to [0, 1]. Accepts ``(..., H, W, 3)``."""
    img = np.asarray(img, dtype=np.float64)
    return (img.mean(axis=(-3, -2, -1)) + 1.0) / 2.0


def _smooth_detail(size: int, rng: np.random.Generator, strength: float) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(4, 4, 3)).astype(np.float32)
    fine = rng.uniform(-1.0, 1.0, size=(size // 2, size // 2, 3)).astype(np.float32)
    d = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    d = d + 0.35 * cv2.resize(fine, (size, size), interpolation=cv2.INTER_NEAREST)
    d = d - d.mean()
    return strength * d / max(float(np.abs(d).max()), 1e-6)


def render_synthetic_frame(detail: np.ndarray, t: float, amplitude: float, phase: float, tint: float) -> np.ndarray:
    """Frame on a [0, 1] scale: zero-mean detail + tone curve + channel tint."""
    level = tone_curve(t, amplitude, phase)
    shift = tint_curve(t, amplitude, phase, tint)
    img = detail + level
    img[..., 0] += shift
    img[..., 2] -= shift
    return img


def generate_synthetic_corpus(
    root: str | os.PathLike,
    num_sequences: int,
    frames_per_seq: int,
    size: int,
    rng: np.random.Generator,
    domain: Domain | str = Domain.LABELED,
    amplitude: tuple[float, float] = (0.1, 0.25),
    phase_center: float = 0.25,
    phase_jitter: float = 0.04,
    tint: float = 0.4,
    detail: float = 0.1,
    cameras: int | None = None,
    prefix: str = "seq",
) -> DatasetIndex:
    """Write a toy corpus whose per-sequence tone follows a known daily curve.

    Each sequence is one random base texture; brightness follows
    ``0.5 + A sin(2 pi (t - phi))`` and a warm/cool tint rides along, with
    ``(A, phi)`` drawn once per sequence. Writes ``manifest.json`` and the
    ``tone_curves.json`` sidecar under ``root``.
    """
    if size < 8:
        raise ValueError("synthetic images must be at least 8 pixels")
    domain = Domain(domain)
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ChronoIOError(f"cannot create {root}: {exc}") from exc
    lo, hi = amplitude
    cameras = cameras or num_sequences
    records, sidecar = [], {}
    for s in range(num_sequences):
        sid = f"{prefix}_{s:04d}"
        amp = float(rng.uniform(lo, hi))
        phase = float(phase_center + rng.uniform(-phase_jitter, phase_jitter))
        offset = int(rng.integers(-12, 13)) * 60
        base = _smooth_detail(size, rng, detail)
        u = float(rng.random())
        local_secs = [int(SECONDS_PER_DAY * (k + u) / frames_per_seq) for k in range(frames_per_seq)]
        seq_dir = root / sid
        seq_dir.mkdir(exist_ok=True)
        frames, samples = [], []
        day = _dt.datetime(2019, 6, 1, tzinfo=_dt.timezone.utc)
        for k, secs in enumerate(local_secs):
            stamp = day + _dt.timedelta(seconds=secs - offset * 60)
            wall = stamp.strftime("%Y-%m-%dT%H:%M:%SZ")
            t = normalize_timestamp(wall, offset)
            img01 = render_synthetic_frame(base, t, amp, phase, tint)
            rel = f"{sid}/{k:03d}.png"
            write_image(root / rel, img01 * 2.0 - 1.0)
            frames.append(Frame(rel, wall if domain is Domain.LABELED else None))
            samples.append([t, float(tone_curve(t, amp, phase))])
        records.append(SequenceRecord(sid, f"cam_{s % cameras:04d}", offset, tuple(frames), domain, str(root)))
        sidecar[sid] = {"amplitude": amp, "phase": phase, "tint": tint, "curve_samples": samples}
    write_manifest(records, root / "manifest.json")
    try:
        (root / "tone_curves.json").write_text(json.dumps(sidecar, indent=1))
    except OSError as exc:
        raise ChronoIOError(f"cannot write sidecar: {exc}") from exc
    n = sum(len(r.frames) for r in records)
    return DatasetIndex(tuple(records), Split.TRAIN, DatasetStats(len(records), n))


def load_tone_curves(root: str | os.PathLike) -> dict:
    return json.loads((Path(root) / "tone_curves.json").read_text())


def stack_framesets(framesets: Sequence[FrameSet]) -> tuple[np.ndarray, np.ndarray]:
    """``(B, N, H, W, 3)`` images and ``(B, N)`` times."""
    return np.stack([fs.images for fs in framesets]), np.stack([fs.times for fs in framesets])
