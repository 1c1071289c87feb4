"""Command-line entry point: ``chronolapse <command> ...``.

Exit codes: 0 success, 2 usage/config, 3 data/IO, 4 runtime.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import dataset as ds
from .config import Mode, Solver, TimeMode, TrainConfig, UpsampleConfig
from .errors import ChronoError, ChronoIOError, ConfigError, ModeMismatchError

log = logging.getLogger("chronolapse")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    upsample: UpsampleConfig = field(default_factory=UpsampleConfig)
    labeled: str | None = None
    unlabeled: str | None = None
    out_dir: str = "run"
    log_level: str = "INFO"

    def to_dict(self) -> dict[str, Any]:
        return {
            "train": self.train.to_dict(),
            "upsample": self.upsample.to_dict(),
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "out_dir": self.out_dir,
            "log_level": self.log_level,
        }


_RUN_KEYS = {"train", "upsample", "labeled", "unlabeled", "out_dir", "log_level", "profile"}


def build_run_config(path: str | os.PathLike | None, overrides: dict[str, Any]) -> RunConfig:
    """Merge defaults < JSON config file < flag overrides, rejecting unknown keys.

    ``overrides`` uses the same layout as the file: ``{"train": {...}, "labeled": ...}``.
    A ``"profile": "toy"`` entry starts the train section from the desk-scale profile.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    train = dict(doc.get("train", {}))
    train.update(overrides.get("train", {}))
    ups = dict(doc.get("upsample", {}))
    ups.update(overrides.get("upsample", {}))
    top = {k: v for k, v in doc.items() if k not in ("train", "upsample", "profile")}
    top.update({k: v for k, v in overrides.items() if k not in ("train", "upsample", "profile") and v is not None})
    profile = overrides.get("profile") or doc.get("profile")
    try:
        if profile == "toy":
            train_cfg = _toy(train)
        elif profile in (None, "paper"):
            train_cfg = TrainConfig.from_dict(train)
        else:
            raise ConfigError(f"unknown profile {profile!r}")
        return RunConfig(train_cfg, UpsampleConfig.from_dict(ups), **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _toy(train: dict[str, Any]) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(train) - known
    if unknown:
        raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
    return TrainConfig.toy(**train)


# ---------------------------------------------------------------------------
# commands


def _train_overrides(args) -> dict[str, Any]:
    flags = {
        "mode": args.mode,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "frames_per_example": args.frames,
        "learning_rate": args.lr,
        "adam_beta1": args.beta1,
        "lambda_rec": args.lambda_rec,
        "image_size": args.image_size,
        "resize_size": args.resize_size,
        "seed": args.seed,
        "time_encoding": args.time_encoding,
        "d_z": args.d_z,
        "checkpoint_every": args.checkpoint_every,
        "pretrained_encoder": args.pretrained_encoder,
    }
    train = {k: v for k, v in flags.items() if v is not None}
    if args.literal_paper_loss:
        train["literal_paper_loss"] = True
    return {
        "train": train,
        "labeled": args.dataset,
        "unlabeled": args.unlabeled,
        "out_dir": args.out,
        "profile": args.profile,
    }


def cmd_train(args) -> int:
    from .trainer import train

    run = build_run_config(args.config, _train_overrides(args))
    cfg = run.train
    if run.labeled is None:
        raise ConfigError("no labeled dataset given (--dataset)", code="MANIFEST")
    if not Path(run.labeled).exists():
        raise ConfigError(f"dataset not found: {run.labeled}", code="MANIFEST")
    if cfg.mode is Mode.MULTIDOMAIN:
        if run.unlabeled is None:
            raise ModeMismatchError("multidomain mode needs --unlabeled")
        if not Path(run.unlabeled).exists():
            raise ConfigError(f"dataset not found: {run.unlabeled}", code="MANIFEST")
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(run.to_dict(), indent=1))
    ckpt = train(cfg, run.labeled, run.unlabeled, out, resume=args.resume)
    print(json.dumps({"checkpoint": ckpt.path, "iteration": ckpt.iteration}))
    return 0


def cmd_synthesize(args) -> int:
    from .synthesis import SynthesisRequest, synthesize, write_sequence

    ups = build_run_config(args.config, {"upsample": _upsample_overrides(args)}).upsample
    latent = None
    if args.latent is not None:
        latent = json.loads(Path(args.latent).read_text()) if Path(args.latent).exists() else json.loads(args.latent)
    req = SynthesisRequest(
        image=args.image,
        checkpoint=args.checkpoint,
        timestamps=args.times,
        t_start=args.t_start,
        t_end=args.t_end,
        frames=args.frames,
        seed=args.seed,
        latent=latent,
        upsample=not args.no_upsample,
        upsample_config=ups,
        working_size=args.working_size,
    )
    seq = synthesize(req)
    manifest = write_sequence(seq, args.out, force=args.force, contact_sheet=not args.no_contact_sheet)
    print(json.dumps({"sequence": str(manifest), "frames": len(seq.frames)}))
    return 0


def _upsample_overrides(args) -> dict[str, Any]:
    flags = {
        "beta": args.beta,
        "eps_w": getattr(args, "eps_w", None),
        "eps_ridge": getattr(args, "eps_ridge", None),
        "solver": getattr(args, "solver", None),
    }
    return {k: v for k, v in flags.items() if v is not None}


def cmd_upsample(args) -> int:
    from .upsampler import guided_upsample

    cfg = build_run_config(args.config, {"upsample": _upsample_overrides(args)}).upsample
    try:
        full = ds.read_image(args.input)
        guide = ds.read_image(args.guide)
    except ds.ImageDecodeError as exc:
        raise ChronoIOError(str(exc)) from exc
    out, fld = guided_upsample(full, guide, cfg, return_field=True)
    ds.write_image(args.out, out)
    if args.dump_fields:
        dump = Path(args.dump_fields)
        dump.mkdir(parents=True, exist_ok=True)
        np.save(dump / "a.npy", fld.a.astype(np.float32))
        np.save(dump / "b.npy", fld.b.astype(np.float32))
    print(json.dumps({"out": args.out, "cg_iterations": list(fld.iterations)}))
    return 0


def cmd_make_synthetic(args) -> int:
    rng = np.random.default_rng(args.seed)
    idx = ds.generate_synthetic_corpus(
        args.out, args.sequences, args.frames, args.size, rng,
        domain=args.domain,
        amplitude=(args.amplitude_min, args.amplitude_max),
        phase_jitter=args.phase_jitter,
        prefix=args.prefix,
    )
    print(json.dumps({"manifest": str(Path(args.out) / "manifest.json"),
                      "sequences": idx.stats.num_sequences, "frames": idx.stats.num_frames}))
    return 0


def inspect_summary(path: str | os.PathLike) -> dict[str, Any]:
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(path)
    return {
        "mode": ckpt.config.mode.value,
        "iteration": ckpt.iteration,
        "format_version": ckpt.format_version,
        "config_hash": ckpt.config_hash,
        "parameter_counts": ckpt.parameter_counts(),
        "config": ckpt.config.to_dict(),
    }


def cmd_inspect(args) -> int:
    summary = inspect_summary(args.checkpoint)
    if args.json:
        print(json.dumps(summary, indent=1, sort_keys=True))
    else:
        for key in sorted(summary):
            print(f"{key}: {json.dumps(summary[key], sort_keys=True)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chronolapse", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default=None, help="logging level (default: $CHRONO_LOG or INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--profile", choices=["paper", "toy"], help="starting hyperparameter profile")
    t.add_argument("--mode", choices=[m.value for m in Mode])
    t.add_argument("--dataset", help="labeled manifest (file or directory holding manifest.json)")
    t.add_argument("--unlabeled", help="unlabeled manifest (multidomain mode)")
    t.add_argument("--out", help="run directory for checkpoints and metrics")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--frames", type=int, help="frames per example")
    t.add_argument("--lr", type=float)
    t.add_argument("--beta1", type=float)
    t.add_argument("--lambda-rec", type=float)
    t.add_argument("--image-size", type=int)
    t.add_argument("--resize-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--time-encoding", choices=[m.value for m in TimeMode])
    t.add_argument("--d-z", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--pretrained-encoder", help=".npz of VGG-16 `features.*` arrays")
    t.add_argument("--literal-paper-loss", action="store_true", help="use 1 - log D for fake terms")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", help="generate a sequence from one image")
    s.add_argument("--config", help="JSON run config (upsample section is used)")
    s.add_argument("--image", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=24)
    s.add_argument("--t-start", type=float, default=0.0)
    s.add_argument("--t-end", type=float, default=1.0)
    s.add_argument("--times", type=float, nargs="+", help="explicit timestamps (overrides the schedule)")
    s.add_argument("--seed", type=int, default=0, help="seed of the shared latent")
    s.add_argument("--latent", help="JSON list (or file) giving the latent explicitly")
    s.add_argument("--no-upsample", action="store_true", help="emit network-resolution frames")
    s.add_argument("--beta", type=float, help="upsampling smoothness weight")
    s.add_argument("--working-size", type=int, help="network-resolution long side")
    s.add_argument("--force", action="store_true", help="overwrite an existing output")
    s.add_argument("--no-contact-sheet", action="store_true")
    s.set_defaults(func=cmd_synthesize)

    u = sub.add_parser("upsample", help="guided upsampling of a recolored low-res guide")
    u.add_argument("--config", help="JSON run config (upsample section is used)")
    u.add_argument("--input", required=True, help="full-resolution image")
    u.add_argument("--guide", required=True, help="low-resolution recolored image")
    u.add_argument("--out", required=True)
    u.add_argument("--beta", type=float)
    u.add_argument("--eps-w", type=float)
    u.add_argument("--eps-ridge", type=float)
    u.add_argument("--solver", choices=[m.value for m in Solver])
    u.add_argument("--dump-fields", help="directory for a.npy / b.npy")
    u.set_defaults(func=cmd_upsample)

    m = sub.add_parser("make-synthetic", help="write a toy tone-curve corpus")
    m.add_argument("--out", required=True)
    m.add_argument("--sequences", type=int, default=200)
    m.add_argument("--frames", type=int, default=24)
    m.add_argument("--size", type=int, default=36)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--domain", choices=[d.value for d in ds.Domain], default="labeled")
    m.add_argument("--amplitude-min", type=float, default=0.1)
    m.add_argument("--amplitude-max", type=float, default=0.25)
    m.add_argument("--phase-jitter", type=float, default=0.04)
    m.add_argument("--prefix", default="seq")
    m.set_defaults(func=cmd_make_synthetic)

    i = sub.add_parser("inspect", help="summarize a checkpoint")
    i.add_argument("checkpoint")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or os.environ.get("CHRONO_LOG", "INFO")
    logging.basicConfig(level=level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ChronoError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, OSError) else 2


if __name__ == "__main__":
    sys.exit(main())
