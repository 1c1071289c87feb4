"""Training loop for the three modes, checkpoints and metrics.

One iteration updates, in order, the discriminators, then the time-conditioned
generator, then (multi-domain only) the translator. The translator is frozen
whenever the conditional set loss is back-propagated, so that loss never
reaches its parameters.
"""

from __future__ import annotations

import contextlib
import functools
import hashlib
import io
import json
import logging
import math
import os
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from . import dataset as ds
from .config import Mode, TrainConfig
from .errors import (
    ChronoIOError,
    ConfigMismatchError,
    CorruptCheckpointError,
    ModeMismatchError,
    NonfiniteLossError,
)
from .losses import (
    LossReport,
    gen_adv_term,
    loss_cond,
    loss_cond_pairs,
    loss_rec,
    loss_uncond,
    total_objective,
)
from .nets import ModelBundle, init_models

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# state


@dataclass
class MetricsRecord:
    iteration: int
    losses: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0
    digests: dict[str, str] = field(default_factory=dict)
    events: list[str] = field(default_factory=list)
    skipped: bool = False
    # max |grad| on translator parameters right after the conditional loss was back-propagated
    gate_max_abs_grad: float | None = None
    # not serialized: sampled inputs, for inspection in tests
    debug: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        out = {
            "iteration": self.iteration,
            "losses": self.losses,
            "wall_clock": self.wall_clock,
            "digests": self.digests,
        }
        if self.events:
            out["events"] = self.events
        if self.skipped:
            out["skipped"] = True
        if self.gate_max_abs_grad is not None:
            out["gate_max_abs_grad"] = self.gate_max_abs_grad
        return out


def make_optimizers(bundle: ModelBundle, cfg: TrainConfig) -> dict[str, torch.optim.Adam]:
    return {
        name: torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2))
        for name, net in bundle.networks().items()
    }


@dataclass
class TrainState:
    bundle: ModelBundle
    optimizers: dict[str, torch.optim.Adam]
    data_rng: np.random.Generator
    model_rng: np.random.Generator
    iteration: int = 0
    nonfinite_streak: int = 0

    @property
    def config(self) -> TrainConfig:
        return self.bundle.config

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        bundle = init_models(cfg, cfg.seed)
        data_rng, model_rng = np.random.default_rng(cfg.seed).spawn(2)
        return cls(bundle, make_optimizers(bundle, cfg), data_rng, model_rng)


@contextlib.contextmanager
def frozen(*nets: nn.Module | None):
    """Temporarily stop gradient accumulation into ``nets``."""
    saved = []
    for net in nets:
        if net is None:
            continue
        for p in net.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def _tensor(arr: np.ndarray) -> torch.Tensor:
    """``(..., H, W, 3)`` float array -> ``(..., 3, H, W)`` float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(np.asarray(arr, np.float32), -1, -3)))


def draw_latents(rng: np.random.Generator, count: int, d_z: int) -> torch.Tensor:
    return torch.from_numpy(rng.standard_normal((count, d_z)).astype(np.float32))


def _digest(x: torch.Tensor) -> str:
    return hashlib.sha1(x.detach().numpy().tobytes()).hexdigest()[:12]


class _Skip(Exception):
    pass


def _p(logits: torch.Tensor) -> torch.Tensor:
    """Sigmoid scores; non-finite logits skip the step instead of failing the loss' domain check."""
    if not bool(torch.isfinite(logits).all()):
        raise _Skip("scores")
    return torch.sigmoid(logits)


def _check(what: str, *reports: LossReport) -> None:
    if not all(math.isfinite(r.item()) for r in reports):
        raise _Skip(what)


def _skip(state: TrainState, rec: MetricsRecord, what: str) -> MetricsRecord:
    state.nonfinite_streak += 1
    rec.skipped = True
    rec.events.append(f"NONFINITE_LOSS in {what}; step skipped")
    log.warning("iteration %d: non-finite %s loss, skipping (%d in a row)",
                state.iteration, what, state.nonfinite_streak)
    if state.nonfinite_streak >= state.config.max_nonfinite_streak:
        raise NonfiniteLossError(f"{state.nonfinite_streak} consecutive non-finite steps")
    return rec


def _guarded(step):
    """Turn a non-finite score or loss anywhere in ``step`` into a recorded skip."""
    @functools.wraps(step)
    def run(state: TrainState, *args, **kwargs) -> MetricsRecord:
        try:
            return step(state, *args, **kwargs)
        except _Skip as exc:
            return _skip(state, MetricsRecord(state.iteration), str(exc))
    return run


def _minimize(state: TrainState, names: Sequence[str], loss: torch.Tensor) -> None:
    for n in names:
        state.optimizers[n].zero_grad(set_to_none=True)
    loss.backward()
    for n in names:
        state.optimizers[n].step()


def _require(state: TrainState, mode: Mode) -> None:
    if state.bundle.mode is not mode:
        raise ModeMismatchError(f"{mode.value} step on a {state.bundle.mode.value} bundle")


def _set_inputs(framesets: Sequence[ds.FrameSet], cfg: TrainConfig, rng: np.random.Generator):
    """Real sets, generator inputs (frames re-paired by derangement) and negative sets."""
    imgs, times = ds.stack_framesets(framesets)
    perms = np.stack([ds.derangement(len(fs), rng) for fs in framesets])
    inputs = np.take_along_axis(imgs, perms[:, :, None, None, None], axis=1)
    negs = [ds.make_negative_pairs(fs, cfg.negatives, rng) for fs in framesets]
    neg_imgs = np.stack([n.images for n in negs])
    neg_times = np.stack([n.times for n in negs])
    return (_tensor(imgs), torch.from_numpy(times.astype(np.float32)), _tensor(inputs),
            _tensor(neg_imgs), torch.from_numpy(neg_times.astype(np.float32)))


# ---------------------------------------------------------------------------
# steps


@_guarded
def train_step_multiframe(state: TrainState, labeled_batch: Sequence[ds.FrameSet],
                          rng: np.random.Generator | None = None) -> MetricsRecord:
    """Single-domain joint conditional update with one shared latent per frame set."""
    _require(state, Mode.MULTIFRAME)
    cfg, b = state.config, state.bundle
    rng = rng or state.model_rng
    rec = MetricsRecord(state.iteration)
    real, t, inputs, neg, neg_t = _set_inputs(labeled_batch, cfg, rng)
    B, N = t.shape
    z = draw_latents(rng, B, cfg.d_z)
    rec.debug["z"] = z
    shape = real.shape[2:]
    fake = b.g_t(inputs.reshape(B * N, *shape), t.reshape(-1), z.repeat_interleave(N, 0)).reshape(B, N, *shape)
    lit = cfg.literal_paper_loss

    d = b.d_a
    uncond = loss_uncond("A", _p(d.uncond_logits(real.reshape(B * N, *shape))),
                         _p(d.uncond_logits(fake.detach().reshape(B * N, *shape))), lit)
    cond = loss_cond(_p(d.cond_logits(real, t)), _p(d.cond_logits(neg, neg_t)),
                     _p(d.cond_logits(fake.detach(), t)), lit)
    d_obj = total_objective([uncond, cond], cfg.lambda_rec)
    _check("discriminator", d_obj)
    _minimize(state, ["d_a"], -d_obj.value)

    with frozen(d):
        gen = LossReport("gen_T", torch.zeros(()), {})
        gen.terms["uncond_A"] = gen_adv_term(_p(d.uncond_logits(fake.reshape(B * N, *shape))))
        gen.terms["cond"] = gen_adv_term(_p(d.cond_logits(fake, t)))
        gen.value = gen.terms["uncond_A"] + gen.terms["cond"]
        _check("generator", gen)
        _minimize(state, ["g_t"], gen.value)

    state.nonfinite_streak = 0
    rec.losses = {**uncond.as_dict(), **cond.as_dict(), **gen.as_dict()}
    rec.digests = {"fake0": _digest(fake[0, 0])}
    return rec


@_guarded
def train_step_vanilla(state: TrainState, frames: Sequence[ds.TimedFrame],
                       rng: np.random.Generator | None = None) -> MetricsRecord:
    """Per-frame conditional GAN: independent frames, pairwise conditional head, no latent."""
    _require(state, Mode.VANILLA)
    cfg, b = state.config, state.bundle
    rng = rng or state.model_rng
    rec = MetricsRecord(state.iteration)
    real = _tensor(np.stack([f.image for f in frames]))
    t = torch.tensor([f.time for f in frames], dtype=torch.float32)
    perm = torch.from_numpy(ds.derangement(len(frames), rng))
    fake = b.g_t(real[perm], t, None)
    lit = cfg.literal_paper_loss

    d = b.d_a
    uncond = loss_uncond("A", _p(d.uncond_logits(real)), _p(d.uncond_logits(fake.detach())), lit)
    pair = loss_cond_pairs(_p(d.cond_logits(real[:, None], t[:, None])),
                           _p(d.cond_logits(fake.detach()[:, None], t[:, None])), lit)
    d_obj = total_objective([uncond, pair], cfg.lambda_rec)
    _check("discriminator", d_obj)
    _minimize(state, ["d_a"], -d_obj.value)

    with frozen(d):
        gen = LossReport("gen_T", torch.zeros(()), {})
        gen.terms["uncond_A"] = gen_adv_term(_p(d.uncond_logits(fake)))
        gen.terms["cond_pair"] = gen_adv_term(_p(d.cond_logits(fake[:, None], t[:, None])))
        gen.value = gen.terms["uncond_A"] + gen.terms["cond_pair"]
        _check("generator", gen)
        _minimize(state, ["g_t"], gen.value)

    state.nonfinite_streak = 0
    rec.losses = {**uncond.as_dict(), **pair.as_dict(), **gen.as_dict()}
    rec.digests = {"fake0": _digest(fake[0])}
    return rec


@_guarded
def train_step_multidomain(state: TrainState, labeled_batch: Sequence[ds.FrameSet],
                           unlabeled_batch: Sequence[ds.FrameWindow], time_pool: np.ndarray,
                           rng: np.random.Generator | None = None) -> MetricsRecord:
    """One iteration of the semi-supervised two-domain scheme.

    Unlabeled windows are generated at times drawn from ``time_pool`` (the
    labeled corpus' empirical time distribution) and translated into the
    labeled domain for the conditional discriminator.
    """
    _require(state, Mode.MULTIDOMAIN)
    if not labeled_batch or not unlabeled_batch:
        raise ModeMismatchError("multidomain step needs labeled and unlabeled batches")
    cfg, b = state.config, state.bundle
    rng = rng or state.model_rng
    rec = MetricsRecord(state.iteration)
    lit = cfg.literal_paper_loss

    real_a, t_a, _, neg, neg_t = _set_inputs(labeled_batch, cfg, rng)
    Ba, Na = t_a.shape
    shape = real_a.shape[2:]
    real_t = _tensor(np.stack([w.images for w in unlabeled_batch]))
    Bt, Nt = real_t.shape[:2]
    t_t = torch.from_numpy(rng.choice(np.asarray(time_pool), size=(Bt, Nt)).astype(np.float32))
    z = draw_latents(rng, Bt, cfg.d_z)
    rec.debug.update(z=z, times_T=t_t)

    fake_t = b.g_t(real_t.reshape(Bt * Nt, *shape), t_t.reshape(-1), z.repeat_interleave(Nt, 0))
    with torch.no_grad():
        fake_a_d = b.g_a(fake_t.detach())

    # (1) discriminators; generators only see detached outputs
    d_a, d_t = b.d_a, b.d_t
    uncond_a = loss_uncond("A", _p(d_a.uncond_logits(real_a.reshape(Ba * Na, *shape))),
                           _p(d_a.uncond_logits(fake_a_d)), lit)
    cond = loss_cond(_p(d_a.cond_logits(real_a, t_a)),
                     _p(d_a.cond_logits(neg, neg_t)),
                     _p(d_a.cond_logits(fake_a_d.reshape(Bt, Nt, *shape), t_t)), lit)
    uncond_t = loss_uncond("T", _p(d_t(real_t.reshape(Bt * Nt, *shape))),
                           _p(d_t(fake_t.detach())), lit)
    d_obj = total_objective([uncond_a, cond, uncond_t], cfg.lambda_rec)
    _check("discriminator", d_obj)
    _minimize(state, ["d_a", "d_t"], -d_obj.value)

    # (2) time-conditioned generator through the frozen translator
    state.optimizers["g_a"].zero_grad(set_to_none=True)
    with frozen(d_a, d_t, b.g_a):
        fake_a = b.g_a(fake_t)
        gen = LossReport("gen_T", torch.zeros(()), {})
        gen.terms["uncond_T"] = gen_adv_term(_p(d_t(fake_t)))
        gen.terms["uncond_A"] = gen_adv_term(_p(d_a.uncond_logits(fake_a)))
        gen.terms["cond"] = gen_adv_term(_p(d_a.cond_logits(fake_a.reshape(Bt, Nt, *shape), t_t)))
        gen.value = gen.terms["uncond_T"] + gen.terms["uncond_A"] + gen.terms["cond"]
        _check("generator", gen)
        _minimize(state, ["g_t"], gen.value)
    rec.gate_max_abs_grad = max(
        (float(p.grad.abs().max()) for p in b.g_a.parameters() if p.grad is not None), default=0.0
    )

    # (3) translator: unconditional realism plus reconstruction, generator frozen
    src = fake_t.detach()
    with frozen(d_a):
        fake_a = b.g_a(src)
        adv = gen_adv_term(_p(d_a.uncond_logits(fake_a)))
        rec_loss = LossReport("rec", loss_rec(fake_a, src))
        trans = total_objective([LossReport("gen_A", adv), rec_loss], cfg.lambda_rec)
        _check("translator", trans)
        _minimize(state, ["g_a"], trans.value)

    state.nonfinite_streak = 0
    rec.losses = {**uncond_a.as_dict(), **cond.as_dict(), **uncond_t.as_dict(), **gen.as_dict(),
                  "gen_A": float(adv.detach()), "rec": rec_loss.item()}
    rec.digests = {"fake_T0": _digest(fake_t[0]), "fake_A0": _digest(fake_a[0])}
    return rec


# ---------------------------------------------------------------------------
# batches


class Batcher:
    """Draws the per-iteration batch for a mode from the data random stream."""

    def __init__(self, cfg: TrainConfig, labeled: ds.DatasetIndex, unlabeled: ds.DatasetIndex | None = None):
        if cfg.mode is Mode.MULTIDOMAIN and unlabeled is None:
            raise ModeMismatchError("multidomain training needs an unlabeled dataset")
        if not labeled.labeled():
            raise ModeMismatchError("the labeled dataset has no labeled sequences")
        self.cfg = cfg
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.time_pool = labeled.times()

    def labeled_batch(self, rng) -> list[ds.FrameSet]:
        c = self.cfg
        return [ds.sample_frameset(self.labeled, c.frames_per_example, rng, c.augment) for _ in range(c.batch_size)]

    def unlabeled_batch(self, rng) -> list[ds.FrameWindow]:
        c = self.cfg
        return [ds.sample_window(self.unlabeled, c.frames_per_example, rng, c.augment) for _ in range(c.batch_size)]

    def frames(self, rng) -> list[ds.TimedFrame]:
        c = self.cfg
        # same image budget per iteration as the set-based modes
        return ds.sample_frames(self.labeled, c.batch_size * c.frames_per_example, rng, c.augment)

    def step(self, state: TrainState) -> MetricsRecord:
        mode = state.bundle.mode
        if mode is Mode.MULTIFRAME:
            return train_step_multiframe(state, self.labeled_batch(state.data_rng))
        if mode is Mode.VANILLA:
            return train_step_vanilla(state, self.frames(state.data_rng))
        return train_step_multidomain(state, self.labeled_batch(state.data_rng),
                                      self.unlabeled_batch(state.data_rng), self.time_pool)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizers: dict[str, dict]
    iteration: int
    config: TrainConfig
    config_hash: str
    rng_state: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    path: str | None = None

    def file_hash(self) -> str | None:
        if self.path is None:
            return None
        return hashlib.sha256(Path(self.path).read_bytes()).hexdigest()[:16]

    def parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for k, v in self.params.items():
            net = k.split(".", 1)[0]
            counts[net] = counts.get(net, 0) + int(v.size)
        return counts

    def bundle(self) -> ModelBundle:
        cfg = self.config
        b = init_models(_without_pretrained(cfg), cfg.seed)
        b.config = cfg
        b.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.params.items()})
        return b

    def restore(self) -> TrainState:
        bundle = self.bundle()
        opts = make_optimizers(bundle, self.config)
        for name, sd in self.optimizers.items():
            opts[name].load_state_dict(sd)
        data_rng = np.random.default_rng()
        model_rng = np.random.default_rng()
        data_rng.bit_generator.state = self.rng_state["data"]
        model_rng.bit_generator.state = self.rng_state["model"]
        return TrainState(bundle, opts, data_rng, model_rng, self.iteration)


def _without_pretrained(cfg: TrainConfig) -> TrainConfig:
    import dataclasses

    return dataclasses.replace(cfg, pretrained_encoder=None)


def _npy(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _optim_to_archive(sd: dict, prefix: str, zf: zipfile.ZipFile) -> dict:
    groups = []
    for g in sd["param_groups"]:
        groups.append({k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()})
    keys = {}
    for idx in sorted(sd["state"]):
        entry = sd["state"][idx]
        keys[str(idx)] = sorted(entry)
        for k in sorted(entry):
            _zip_write(zf, f"{prefix}/{idx}/{k}.npy", _npy(entry[k].detach().cpu().numpy()))
    return {"param_groups": groups, "state_keys": keys}


def save_checkpoint(state: TrainState, path: str | os.PathLike) -> Path:
    """Write a deterministic zip archive; identical state gives identical bytes."""
    path = Path(path)
    cfg = state.config
    params = {k: v.detach().cpu().numpy() for k, v in state.bundle.state_dict().items()}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in sorted(params):
            _zip_write(zf, f"params/{name}.npy", _npy(params[name]))
        optim_meta = {
            name: _optim_to_archive(opt.state_dict(), f"optim/{name}", zf)
            for name, opt in sorted(state.optimizers.items())
        }
        meta = {
            "format_version": FORMAT_VERSION,
            "iteration": state.iteration,
            "mode": cfg.mode.value,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "rng": {"data": state.data_rng.bit_generator.state, "model": state.model_rng.bit_generator.state},
            "params": sorted(params),
            "optim": optim_meta,
        }
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise ChronoIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str | os.PathLike, expected: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected`` must hash equal to the stored config."""
    path = Path(path)
    if not path.exists():
        raise ChronoIOError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format_version") != FORMAT_VERSION:
                raise CorruptCheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
            params = {n: np.load(io.BytesIO(zf.read(f"params/{n}.npy")), allow_pickle=False) for n in meta["params"]}
            optims = {}
            for name, om in meta["optim"].items():
                state = {}
                for idx, keys in om["state_keys"].items():
                    state[int(idx)] = {
                        k: torch.from_numpy(np.load(io.BytesIO(zf.read(f"optim/{name}/{idx}/{k}.npy"))))
                        for k in keys
                    }
                groups = [{k: (tuple(v) if k == "betas" else v) for k, v in g.items()} for g in om["param_groups"]]
                optims[name] = {"state": state, "param_groups": groups}
            cfg = TrainConfig.from_dict(meta["config"])
    except CorruptCheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, TypeError, EOFError, OSError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc!r}") from exc
    if cfg.hash() != meta["config_hash"]:
        raise CorruptCheckpointError(f"{path}: stored config does not match its hash")
    if expected is not None and expected.hash() != meta["config_hash"]:
        raise ConfigMismatchError(f"{path}: config hash {meta['config_hash']} != {expected.hash()}")
    return Checkpoint(params, optims, int(meta["iteration"]), cfg, meta["config_hash"], meta["rng"],
                      meta["format_version"], str(path))


def parameter_payload(ckpt_path: str | os.PathLike) -> bytes:
    """Concatenated raw ``params/`` members, in archive order."""
    with zipfile.ZipFile(ckpt_path) as zf:
        return b"".join(zf.read(n) for n in zf.namelist() if n.startswith("params/"))


# ---------------------------------------------------------------------------
# loop


def _as_index(src, domain: ds.Domain | None) -> ds.DatasetIndex | None:
    if src is None or isinstance(src, ds.DatasetIndex):
        return src
    return ds.load_manifest(src, domain)


def train(
    config: TrainConfig,
    labeled,
    unlabeled=None,
    out_dir: str | os.PathLike = "run",
    resume: str | os.PathLike | None = None,
    log_every: int = 50,
) -> Checkpoint:
    """Run ``config.iterations`` iterations, checkpointing and logging metrics.

    ``labeled``/``unlabeled`` are manifest paths or loaded indexes. Metrics go
    to ``<out_dir>/metrics.jsonl``, checkpoints to ``<out_dir>/ckpt_*.ckpt``
    and ``<out_dir>/final.ckpt``.
    """
    if config.mode is Mode.MULTIDOMAIN and unlabeled is None:
        raise ModeMismatchError("multidomain mode needs an unlabeled dataset")
    labeled_idx = _as_index(labeled, ds.Domain.LABELED)
    unlabeled_idx = _as_index(unlabeled, None) if config.mode is Mode.MULTIDOMAIN else None
    batcher = Batcher(config, labeled_idx, unlabeled_idx)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = load_checkpoint(resume, expected=config).restore()
        # run-length fields may differ from the stored snapshot
        state.bundle.config = config
        log.info("resumed from %s at iteration %d", resume, state.iteration)
    else:
        state = TrainState.fresh(config)

    metrics_path = out / "metrics.jsonl"
    t0 = time.time()
    with open(metrics_path, "a") as mlog:
        while state.iteration < config.iterations:
            rec = batcher.step(state)
            state.iteration += 1
            rec.iteration = state.iteration
            rec.wall_clock = time.time() - t0
            mlog.write(json.dumps(rec.to_json()) + "\n")
            mlog.flush()
            if log_every and state.iteration % log_every == 0:
                log.info("iter %d %s", state.iteration,
                         " ".join(f"{k}={v:.3f}" for k, v in rec.losses.items() if "/" not in k))
            if state.iteration % config.checkpoint_every == 0 and state.iteration < config.iterations:
                save_checkpoint(state, out / f"ckpt_{state.iteration:07d}.ckpt")
    final = save_checkpoint(state, out / "final.ckpt")
    return load_checkpoint(final)
