"""Command-line entry points.

  tdae train  --config c.json [--seed k]        one seed (or every config seed)
  tdae sweep  --config c.json [--jobs 1]        Cartesian sweep + summary
  tdae eval   --checkpoint p [--episodes 50]    frozen-policy evaluation
  tdae plot   --glob 'runs/**/metrics.csv' --group-by key [--out curves.svg]
  tdae bimodal --glob 'runs/**/metrics.csv' [--theta x] [--out report]
  tdae trace  --checkpoint p --pixels i,j [--steps 200] [--gamma-aux g]
"""

from __future__ import annotations

import argparse
import glob as globmod
import sys


def _glob(pattern: str) -> list:
    files = sorted(globmod.glob(pattern, recursive=True))
    if not files:
        raise SystemExit(f"no files match {pattern!r}")
    return files


def cmd_train(args) -> int:
    from .config import load_config
    from .experiment import run
    config = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else config.seeds
    for seed in seeds:
        paths = run(config, seed)
        print(f"seed {seed}: wrote {paths['metrics']}")
    return 0


def cmd_sweep(args) -> int:
    from .config import load_config
    from .experiment import sweep
    config = load_config(args.config)
    rows = sweep(config, jobs=args.jobs)
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        star = " *" if r["best"] else ""
        print(f"{r['name']:<{width}}  final={r['final_mean_return']:+.4f} "
              f"({r['seeds']} seeds){star}")
    print(f"summary: {config.output_dir}/summary.csv")
    return 0


def cmd_eval(args) -> int:
    from .experiment import evaluate, load_agent
    net, config, frames, seed = load_agent(args.checkpoint)
    rec = evaluate(net, config.scenario_config(), seed, frames,
                   episodes=args.episodes,
                   action_selection="argmax" if args.argmax else "sample")
    print(f"frames={frames} episodes={args.episodes} "
          f"mean_return={rec.mean_return:.4f} stddev={rec.return_stddev:.4f}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_curves
    out = plot_curves(_glob(args.glob), args.group_by, args.out)
    print(f"wrote {out}")
    return 0


def cmd_bimodal(args) -> int:
    from .plotting import bimodality_report
    report = bimodality_report(_glob(args.glob), theta=args.theta,
                               out_prefix=args.out)
    for row in report["rows"]:
        print(f"seed {row['seed']}: final={row['final_mean']:+.4f} {row['label']}")
    c = report["counts"]
    print(f"theta={report['theta']:.4g}  learning={c['learning']} "
          f"failure={c['failure']}")
    if args.out:
        print(f"wrote {args.out}.csv {args.out}.svg")
    return 0


def cmd_trace(args) -> int:
    from .trace import pixel_prediction_trace
    pixels = [int(p) for p in args.pixels.split(",") if p.strip()]
    out = args.out or "trace"
    result = pixel_prediction_trace(args.checkpoint, pixels, args.steps,
                                    gamma_aux=args.gamma_aux, out_prefix=out)
    err = abs(result["predictions"] - result["empirical"]).mean()
    print(f"gamma_aux={result['gamma_aux']} steps={args.steps} "
          f"pixels={pixels} mean|pred-emp|={err:.4f}")
    print(f"wrote {out}.csv {out}.svg {out}.traj")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdae",
                                description="A2C with pixel-return prediction heads")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None,
                   help="single seed override (default: every seed in the config)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run the config's sweep axes")
    s.add_argument("--config", required=True)
    s.add_argument("--jobs", type=int, default=1,
                   help="parallel worker processes (default 1)")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--argmax", action="store_true",
                   help="greedy actions instead of sampling")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="learning curves with stderr bands")
    pl.add_argument("--glob", required=True)
    pl.add_argument("--group-by", required=True,
                    help="'seed', 'dir', or a dotted config path")
    pl.add_argument("--out", default="curves.svg")
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bimodal", help="per-seed learning/failure report")
    b.add_argument("--glob", required=True)
    b.add_argument("--theta", type=float, default=None,
                   help="absolute threshold override")
    b.add_argument("--out", default=None, help="output prefix for csv+svg")
    b.set_defaults(func=cmd_bimodal)

    tr = sub.add_parser("trace", help="per-pixel prediction vs empirical return")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--pixels", required=True,
                    help="comma-separated flat indices into C*H*W")
    tr.add_argument("--steps", type=int, default=200)
    tr.add_argument("--gamma-aux", type=float, default=None)
    tr.add_argument("--out", default=None, help="output prefix (default 'trace')")
    tr.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
