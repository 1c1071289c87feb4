"""Wall-clock timing of guided upsampling for several input/guide sizes.

    python3 scripts/benchmark_upsample.py --sizes 256 512 1024 --ratio 4
"""

import argparse
import time

import cv2
import numpy as np

from chronolapse.config import Solver, UpsampleConfig
from chronolapse.upsampler import downsample_area, guided_upsample


def scene(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.stack([0.4 * xx - 0.2, 0.3 * yy - 0.1, 0.2 * (xx + yy) - 0.3], axis=2)
    for _ in range(25):
        y, x = rng.integers(0, size - 8, 2)
        h, w = rng.integers(6, size // 3, 2)
        img[y:y + h, x:x + w] = rng.uniform(-0.8, 0.6, 3)
    img += cv2.GaussianBlur(rng.normal(0, 0.15, (size, size, 3)), (0, 0), 1.0)
    return np.clip(img, -1, 1)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 512])
    p.add_argument("--ratio", type=int, default=4, help="full size / guide size")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--solver", choices=[s.value for s in Solver], default="cg")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = UpsampleConfig(beta=args.beta, solver=Solver(args.solver))
    print(f"{'full':>6} {'guide':>6} {'best s':>8} {'cg iters':>14}")
    for size in args.sizes:
        I = scene(rng, size)
        low = size // args.ratio
        O = np.clip(downsample_area(I, (low, low)) * 0.8 + 0.1, -1, 1)
        times = []
        for _ in range(args.repeats):
            start = time.perf_counter()
            _, field = guided_upsample(I, O, cfg, return_field=True)
            times.append(time.perf_counter() - start)
        print(f"{size:>6} {low:>6} {min(times):>8.3f} {str(field.iterations):>14}")


if __name__ == "__main__":
    main()
