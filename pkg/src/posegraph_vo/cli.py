"""Command-line entry point: ``posegraph-vo {simulate,run,eval,plot}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backend import BackendOptions, OptimizationFailed, run_backend
from .config import RunConfig, format_config, load_config
from .evaluation import evaluate
from .graph import save_g2o
from .lie import EULER_CONVENTION
from .loops import load_detections, save_detections, save_loop_log
from .plot import write_plot
from .sim import (
    emit_windows,
    generate_ground_truth,
    load_window_file,
    loop_windows,
    oracle_detections,
    oracle_verifier,
    save_window_file,
)
from .trajectory import load_kitti_poses, save_kitti_poses

log = logging.getLogger("posegraph_vo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

WINDOWS_FILE = "windows.txt"
GT_FILE = "groundtruth.txt"
DETECTIONS_FILE = "detections.txt"
ESTIMATE_FILE = "estimate.txt"
GRAPH_FILE = "graph.g2o"
LOOPS_FILE = "loops.txt"
OPTLOG_FILE = "optimizer.csv"
MANIFEST_FILE = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig | None, inputs, outputs, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "euler_convention": EULER_CONVENTION,
        "config": cfg.to_dict() if cfg is not None else None,
        "inputs": {Path(p).name: _digest(Path(p)) for p in inputs},
        "outputs": {name: _digest(out / name) for name in outputs},
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim
    gt = generate_ground_truth(sim)
    windows = list(emit_windows(gt, sim))
    detections = oracle_detections(gt, sim)
    save_window_file(out / WINDOWS_FILE, sim.n, windows, loop_windows(gt, detections, sim))
    save_kitti_poses(gt, out / GT_FILE)
    save_detections(detections, out / DETECTIONS_FILE)
    (out / "config.txt").write_text(format_config(cfg))
    _write_manifest(
        out,
        "simulate",
        cfg,
        [args.config],
        [WINDOWS_FILE, GT_FILE, DETECTIONS_FILE, "config.txt"],
        {"seed": sim.seed},
    )
    print(f"simulated {len(gt)} frames, {len(detections)} loop detections -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wf = load_window_file(args.windows)
    detections = load_detections(args.detections) if args.detections else []
    verifier = None
    inputs = [args.windows] + [p for p in (args.detections, args.config, args.verify_gt) if p]
    if args.verify_gt:
        verifier = oracle_verifier(load_kitti_poses(args.verify_gt), cfg.sim)
    opts = BackendOptions(
        loop_closing=not args.no_loop_closing,
        window_relax=args.window_relax,
        optimize_every=args.optimize_every,
        lm=cfg.lm,
        loops=cfg.loops,
    )
    try:
        kwargs = {"verifier": verifier} if verifier else {}
        result = run_backend(wf.local, detections, wf.loop, options=opts, **kwargs)
    except OptimizationFailed as exc:
        save_g2o(exc.graph, out / GRAPH_FILE)
        print(f"error: optimization failed ({exc}); pre-failure graph saved to {out / GRAPH_FILE}", file=sys.stderr)
        return EXIT_NUMERIC

    save_kitti_poses(result.trajectory(), out / ESTIMATE_FILE)
    save_g2o(result.graph, out / GRAPH_FILE)
    save_loop_log(result.loops, out / LOOPS_FILE)
    with open(out / OPTLOG_FILE, "w") as fh:
        fh.write("run,iteration,chi2,reason\n")
        for r, rep in enumerate(result.reports):
            for k, c in enumerate(rep.trace):
                fh.write(f"{r},{k},{c:.17g},{rep.reason.value}\n")
    _write_manifest(
        out,
        "run",
        cfg,
        inputs,
        [ESTIMATE_FILE, GRAPH_FILE, LOOPS_FILE, OPTLOG_FILE],
        {
            "flags": {
                "no_loop_closing": args.no_loop_closing,
                "window_relax": args.window_relax,
                "optimize_every": args.optimize_every,
            }
        },
    )
    print(
        f"{len(result.graph.nodes)} nodes, {len(result.graph.constraints)} constraints, "
        f"{len(result.loops)} loops closed, {len(result.reports)} optimizations"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    est = load_kitti_poses(args.estimate)
    gt = load_kitti_poses(args.groundtruth)
    report = evaluate(est, gt, stride=args.stride)
    sys.stdout.write(report.to_table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def cmd_plot(args) -> int:
    trajs = [load_kitti_poses(p) for p in args.files]
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.files]
    if len(labels) != len(trajs):
        raise UsageError("--labels must name every trajectory")
    write_plot(trajs, labels, args.out, args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posegraph-vo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate windows, ground truth and detections")
    s.add_argument("config", help="key = value configuration file")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="build and optimize the global pose graph")
    r.add_argument("--windows", required=True, help="window edge file")
    r.add_argument("--detections", help="loop detection trace")
    r.add_argument("--config", help="configuration file (LM, loop and oracle settings)")
    r.add_argument("--verify-gt", help="ground-truth KITTI file for oracle loop verification")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--no-loop-closing", action="store_true", help="raw chained odometry")
    r.add_argument("--window-relax", action="store_true", help="relax each window before use")
    r.add_argument("--optimize-every", type=int, default=0, metavar="N",
                   help="also optimize every N frames (0: only on loop closure)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="t_rel / r_rel / RMSE of an estimate")
    e.add_argument("estimate")
    e.add_argument("groundtruth")
    e.add_argument("--csv", help="write the report as CSV")
    e.add_argument("--stride", type=int, default=1, help="segment start stride in frames")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="bird's-eye SVG overlay of trajectories")
    pl.add_argument("files", nargs="+")
    pl.add_argument("--out", required=True, help="SVG path")
    pl.add_argument("--csv", help="also write the x/y/z tracks as CSV")
    pl.add_argument("--labels", help="comma-separated legend labels")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "optimize_every", 0) < 0 or getattr(args, "stride", 1) < 1:
        parser.error("--optimize-every must be >= 0 and --stride >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
