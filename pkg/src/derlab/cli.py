"""Command-line entry point: ``derlab verify | run | sweep-eps | ablate-ac | export``.

Exit status is 0 on success, 1 when a property check or directional
comparison fails, and 2 on a configuration error.  ``DERLAB_SEED``
overrides the seed list of every experiment (see `derlab.harness`).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from . import verify as V
from .errors import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _eps_list(text: str):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _out_dir(args, config) -> Path:
    return Path(args.out if args.out else config.output_dir)


def cmd_verify(args) -> int:
    reports = V.run_suite(seed=args.seed, scale=args.scale)
    sys.stdout.write(V.format_table(reports))
    if args.csv:
        Path(args.csv).write_text(V.reports_to_csv(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_run(args) -> int:
    config = H.load_config(args.config)
    results = H.run_experiment(config, workers=args.workers)
    out = _out_dir(args, config)
    H.write_runs(results, out)
    (out / "config.ini").write_text(H.dump(config))
    for r in results:
        print(f"{r.variant} seed={r.seed} auc={r.auc:.4f} final_policy={' '.join(map(str, r.final_policy))}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = H.load_config(args.config)
    table = H.sweep_epsilon(config, args.eps, workers=args.workers)
    out = _out_dir(args, config)
    H.write_runs(table.results, out)
    (out / "sweep.csv").write_text(table.to_csv())
    (out / "config.ini").write_text(H.dump(config))
    sys.stdout.write(table.summary())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = H.load_config(args.config)
    runs = H.ablate_ac(config, workers=args.workers)
    out = _out_dir(args, config)
    flat = [r for rs in runs.values() for r in rs]
    H.write_runs(flat, out)
    (out / "config.ini").write_text(H.dump(config))
    print(f"{'variant':<10} {'mean_eval_return':>16} {'mean_train_return':>17}")
    for variant, rs in runs.items():
        train = np.mean([np.mean([e[2] for e in r.episodes]) if r.episodes else np.nan for r in rs])
        print(f"{variant:<10} {np.mean([r.auc for r in rs]):>16.4f} {train:>17.4f}")
    return EXIT_OK


def cmd_export(args) -> int:
    results = H.load_curves(args.dir)
    if not results:
        print(f"no *.curve.csv files in {args.dir}", file=sys.stderr)
        return EXIT_CONFIG
    if args.svg:
        for path in H.export_results(results, args.out or args.dir, "svg", title=args.title):
            print(path)
        return EXIT_OK
    for variant, (steps, mean, std) in sorted(H.aggregate(results).items()):
        last = f"{mean[-1]:.4f} +/- {std[-1]:.4f}" if steps.size else "empty"
        print(f"{variant:<16} points={steps.size:<4d} final={last}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="derlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the property-check suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--scale", type=float, default=1.0, help="multiply every trial count")
    v.add_argument("--csv", help="also write the reports as CSV")
    v.set_defaults(func=cmd_verify)

    def experiment(name, func, help_text):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("config")
        s.add_argument("--out", help="output directory (default: the config's output_dir)")
        s.add_argument("--workers", type=int, default=1)
        s.set_defaults(func=func)
        return s

    experiment("run", cmd_run, "run the configured variant for every seed")
    sw = experiment("sweep-eps", cmd_sweep, "categorical FZI sweep over the mixing proportion")
    sw.add_argument("--eps", type=_eps_list, default=None, help="comma-separated list, e.g. 0,0.5,1")
    experiment("ablate-ac", cmd_ablate, "AC / AC+VE / AC+RE / AC+RE+VE comparison")

    e = sub.add_parser("export", help="summarize or plot the curve CSVs in a directory")
    e.add_argument("dir")
    e.add_argument("--svg", action="store_true", help="write curves.svg")
    e.add_argument("--out", help="directory for the SVG (default: the input directory)")
    e.add_argument("--title", default="evaluation return")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
