"""Toy tone-curve experiment: multi-frame vs vanilla training on a synthetic corpus.

    python3 scripts/toy_experiment.py --out runs/toy --iterations 800

Writes ``report.json`` and prints a one-line summary per mode.
"""

import argparse
import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from chronolapse import dataset as ds
from chronolapse import evaluation as ev
from chronolapse.config import Mode, TrainConfig
from chronolapse.trainer import train


@dataclass
class ExperimentConfig:
    out: str = "runs/toy"
    iterations: int = 800
    train_sequences: int = 200
    heldout_sequences: int = 10
    frames: int = 24
    size: int = 36
    corpus_seed: int = 0
    heldout_seed: int = 99
    modes: tuple[str, ...] = ("multiframe", "vanilla")


def run(cfg: ExperimentConfig) -> dict:
    root = Path(cfg.out)
    train_idx = ds.generate_synthetic_corpus(root / "data" / "train", cfg.train_sequences, cfg.frames, cfg.size,
                                             np.random.default_rng(cfg.corpus_seed))
    held = ds.generate_synthetic_corpus(root / "data" / "held", cfg.heldout_sequences, cfg.frames, cfg.size,
                                        np.random.default_rng(cfg.heldout_seed), prefix="held")
    curves = ds.load_tone_curves(root / "data" / "held")
    results = {"config": dataclasses.asdict(cfg), "modes": {}}
    for mode in cfg.modes:
        tcfg = TrainConfig.toy(mode=Mode(mode), iterations=cfg.iterations, checkpoint_every=cfg.iterations)
        start = time.perf_counter()
        ckpt = train(tcfg, train_idx, out_dir=root / mode, log_every=max(cfg.iterations // 10, 1))
        seconds = time.perf_counter() - start
        g = ckpt.bundle().g_t
        tone = ev.tone_report(g, held, curves, tcfg.image_size)
        inputs = ev.heldout_inputs(held, tcfg.image_size, frame=5)
        steps = [ev.step_differences(g, img, ev.latent_for(g, k)) for k, img in enumerate(inputs)]
        shared, fresh = ev.latent_jitter(g, inputs[0])
        results["modes"][mode] = {
            **tone.summary(),
            "correlations": tone.correlations.tolist(),
            "step_differences_mean": np.mean(steps, axis=0).tolist(),
            "jitter_shared_z": shared,
            "jitter_fresh_z": fresh,
            "train_seconds": seconds,
        }
        s = results["modes"][mode]
        print(f"{mode:>10}: corr min {s['corr_min']:.3f} mean {s['corr_mean']:.3f} "
              f"hue var {s['hue_variance']:.4f} ({seconds:.0f}s)")
    (root / "report.json").write_text(json.dumps(results, indent=2))
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "modes":
            p.add_argument("--modes", nargs="+", default=list(f.default), choices=[m.value for m in Mode])
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    args = vars(p.parse_args())
    args["modes"] = tuple(args["modes"])
    run(ExperimentConfig(**args))


if __name__ == "__main__":
    main()
