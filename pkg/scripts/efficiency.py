#!/usr/bin/env python3
"""Solve-time comparison of both modes on one simulated scene.

    python3 scripts/efficiency.py [--config configs/circle.cfg] [--seed 0] [--work /tmp/slvio-eff]

Prints the comparison table and writes one JSON report per mode into the work directory.
"""
import argparse
import time
from pathlib import Path

from slvio.config import load_config
from slvio.estimator import Mode
from slvio.evalkit import comparison_table
from slvio.pipeline import run, simulate

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "circle.cfg"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--work", default="/tmp/slvio-eff")
    args = ap.parse_args()

    cfg = load_config(args.config).with_seed(args.seed)
    work = Path(args.work)
    data = simulate(cfg, work / "data")
    reports = []
    for mode in Mode:
        t0 = time.perf_counter()
        _, rep = run(cfg, data, mode)
        print(f"{mode.value}: {time.perf_counter() - t0:.1f} s wall", flush=True)
        rep.write(work / f"{mode.value}.json")
        reports.append(rep)
    print(comparison_table(reports))


if __name__ == "__main__":
    main()
