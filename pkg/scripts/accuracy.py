#!/usr/bin/env python3
"""ATE of both modes over several seeds of the circle and corridor scenes.

    python3 scripts/accuracy.py [--scenes circle,corridor] [--seeds 5] [--jobs 1] [--work /tmp/slvio-acc]

Prints one line per (scene, seed, mode): ATE (posyaw), 1% of path length, mean solve time.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from slvio.config import load_config
from slvio.estimator import Mode
from slvio.evalkit import read_trajectory
from slvio.pipeline import run, simulate

ROOT = Path(__file__).resolve().parent.parent


def job(args):
    scene, seed, mode, work = args
    cfg = load_config(ROOT / "configs" / f"{scene}.cfg").with_seed(seed)
    data = Path(work) / f"{scene}{seed}"
    _, rep = run(cfg, data, mode)
    p = read_trajectory(data / "truth.txt").p
    length = float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())
    return scene, seed, mode, rep.ate, 0.01 * length, rep.mean_ms


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", default="circle,corridor")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--modes", default=",".join(m.value for m in Mode))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--work", default="/tmp/slvio-acc")
    args = ap.parse_args()

    scenes = args.scenes.split(",")
    for scene in scenes:
        for seed in range(args.seeds):
            data = Path(args.work) / f"{scene}{seed}"
            if not (data / "init.txt").exists():
                simulate(load_config(ROOT / "configs" / f"{scene}.cfg").with_seed(seed), data)
    jobs = [(s, k, m, args.work) for s in scenes for k in range(args.seeds) for m in args.modes.split(",")]
    print(f"{'scene':<9} {'seed':>4} {'mode':<16} {'ATE (m)':>9} {'1% len':>8} {'solve (ms)':>11}")
    with ProcessPoolExecutor(args.jobs) as ex:
        for scene, seed, mode, ate, lim, ms in ex.map(job, jobs):
            print(f"{scene:<9} {seed:>4} {mode:<16} {ate:>9.3f} {lim:>8.3f} {ms:>11.2f}", flush=True)


if __name__ == "__main__":
    main()
