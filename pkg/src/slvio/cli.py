"""Command-line entry point: ``slvio {simulate,run,eval,gradcheck,bench}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import Config, load_config
from .errors import SlvioError
from .estimator import Mode
from .evalkit import comparison_table, compute_ate, read_trajectory


def _config(path) -> Config:
    return load_config(path) if path else Config()


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_simulate(args):
    from .pipeline import simulate
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = simulate(cfg, args.out)
    print(f"wrote {out}/imu.csv, tracks.csv, truth.txt, init.txt")
    return 0


def cmd_run(args):
    from .pipeline import run_to_files
    cfg = _config(args.config)
    _, report = run_to_files(cfg, args.data, args.out, args.report, args.mode,
                             _log if args.verbose else None)
    line = f"{report.mode}: {len(report.solve_times_ms)} solves, mean {report.mean_ms:.2f} ms"
    if report.ate is not None:
        line += f", ATE ({report.alignment}) {report.ate:.6f} m"
    print(line)
    return 0


def cmd_eval(args):
    ate = compute_ate(read_trajectory(args.est), read_trajectory(args.truth), args.align)
    print(f"{ate:.6f}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_all
    results = run_all(args.trials, args.seed)
    for r in results:
        print(r)
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args):
    from .pipeline import run
    cfg = _config(args.config)
    reports = []
    for mode in Mode:
        _, rep = run(cfg, args.data, mode, _log if args.verbose else None)
        reports.append(rep)
        if args.report_dir:
            Path(args.report_dir).mkdir(parents=True, exist_ok=True)
            rep.write(Path(args.report_dir) / f"{mode.value}.json")
    print(comparison_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slvio", description="Structureless visual-inertial odometry toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic data directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="run the estimator over a data directory")
    s.add_argument("--mode", choices=[m.value for m in Mode])
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="trajectory output (TUM format)")
    s.add_argument("--report", help="BenchReport JSON output")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="absolute trajectory error")
    s.add_argument("--est", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--align", choices=["se3", "posyaw"], default="posyaw")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference Jacobians")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="run both modes on the same data and compare")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report-dir")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SlvioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
