"""Command-line entry point: ``fgstereo run | dataset | compare``."""
import argparse
import logging
import sys

from . import config as config_mod
from . import pipeline
from ._accel import configure_threads


def _build_config(args):
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.PipelineConfig()
    overrides = config_mod.parse_overrides(getattr(args, "set", None) or [])
    if getattr(args, "quarter", False):
        overrides["quarter"] = True
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides) if overrides else cfg


def _add_config_args(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--quarter", action="store_true", help="downsample inputs by 4 per dimension")
    p.add_argument("--seed", type=int, help="RNG seed for k-means")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def make_parser():
    parser = argparse.ArgumentParser(prog="fgstereo", description="Factor-graph stereo disparity estimation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="estimate disparity for one rectified pair")
    run.add_argument("--left", required=True)
    run.add_argument("--right", required=True)
    run.add_argument("--calib", required=True)
    run.add_argument("--gt", help="ground-truth disparity (PFM, or integer PNG with --gt-scale)")
    run.add_argument("--gt-scale", type=float, default=1.0)
    run.add_argument("--out", required=True)
    _add_config_args(run)

    ds = sub.add_parser("dataset", help="run every scene under a Middlebury-style root")
    ds.add_argument("--root", required=True)
    ds.add_argument("--weights", help="scene weight table (default: bundled v3 weights)")
    ds.add_argument("--out", required=True)
    _add_config_args(ds)

    cmp_ = sub.add_parser("compare", help="per-scene metric deltas between metric reports")
    cmp_.add_argument("reports", nargs="+")
    cmp_.add_argument("--out", help="write the CSV here instead of stdout")

    dump = sub.add_parser("config", help="print the default (or given) configuration")
    _add_config_args(dump)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    configure_threads()
    try:
        if args.command == "run":
            cfg = _build_config(args)
            res = pipeline.run_pipeline(args.left, args.right, args.calib, cfg, args.out,
                                        gt_path=args.gt, gt_scale=args.gt_scale)
            print(f"iterations={res.iterations} converged={res.converged} time={res.wall_time:.2f}s")
            for stage, m in res.metrics.items():
                print(f"{stage:8s} avg_err={m.avg_err:.4f} psnr={m.psnr:.2f} bad{m.threshold:g}={m.bad:.2f}")
        elif args.command == "dataset":
            cfg = _build_config(args)
            summary = pipeline.run_dataset(args.root, cfg, args.out, args.weights)
            for stage, m in summary.averages.items():
                print(f"weighted {stage:8s} avg_err={m.avg_err:.4f} psnr={m.psnr:.2f} bad={m.bad:.2f}")
        elif args.command == "compare":
            text = pipeline.compare(args.reports, args.out)
            if not args.out:
                sys.stdout.write(text)
        elif args.command == "config":
            sys.stdout.write(config_mod.dumps(_build_config(args)))
    except (OSError, ValueError) as exc:
        print(f"fgstereo: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
