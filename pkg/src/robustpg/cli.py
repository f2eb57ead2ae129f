"""Command-line entry point: simulate, optimize, ablate, keyframe-sim, evaluate.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import io_formats as iof
from .errors import NumericalFailureError, ParseError, RobustPGError
from .evaluation import ate_rmse
from .factorgraph import FactorKind, LoopCandidate, PoseGraph
from .frontend import KeyframeConfig, replay_keyframes
from .geometry import Pose2, Pose3
from .odometry_fusion import ExternalOdomConfig, OdometrySample, make_between_factors
from .optimizer import optimize
from .robustness import GncConfig, OdometryChain, PcmConfig, gnc_optimize, pcm_select
from .synth import (FeatureTrackConfig, SynthConfig, generate, generate_feature_stream,
                    stop_and_go_trajectory)

log = logging.getLogger("robustpg")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
ROBUST_MODES = ("none", "pcm", "gnc", "pcm+gnc")
DEFAULT_MDSL_SWEEP = (25.0, 50.0, 75.0, 100.0, 150.0, 1000.0)
ALIGN = {"rigid": "rigid", "sim3": "similarity", "none": "none"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# run specification and the shared pipeline
# --------------------------------------------------------------------------

@dataclass
class RunSpec:
    robust: str = "none"
    external_odometry: bool = False
    ext_info: float | None = None
    pcm: PcmConfig = field(default_factory=PcmConfig)
    gnc: GncConfig = field(default_factory=GncConfig)
    keyframe_dt: float = 0.2

    def __post_init__(self):
        if self.robust not in ROBUST_MODES:
            raise UsageError(f"robust mode must be one of {ROBUST_MODES}, got {self.robust!r}")


@dataclass
class RunOutcome:
    values: dict
    accepted: list        # (key_from, key_to) of accepted loop closures
    rejected: list
    iterations: int
    error: float
    converged: bool


def parse_config_name(name: str) -> tuple[str, bool]:
    """``"gnc+eo"`` -> ``("gnc", True)``; ``"pcm+gnc"`` -> ``("pcm+gnc", False)``."""
    parts = [p for p in name.strip().split("+") if p]
    eo = "eo" in parts
    robust = "+".join(p for p in parts if p != "eo") or "none"
    if robust not in ROBUST_MODES:
        raise UsageError(f"unknown configuration {name!r}")
    return robust, eo


def _loop_candidates(graph: PoseGraph, idx) -> list[LoopCandidate]:
    return [LoopCandidate(graph.factors[i].keys[0], graph.factors[i].keys[1],
                          graph.factors[i].measurement, graph.factors[i].noise) for i in idx]


def run_pipeline(graph: PoseGraph, spec: RunSpec, extra_factors=()) -> RunOutcome:
    """Robust back end on ``graph`` plus ``extra_factors`` (external odometry)."""
    g = graph.copy()
    for f in extra_factors:
        g.add_factor(f)
    loops = g.indices(FactorKind.LOOP_CLOSURE)
    keep = set(range(len(g.factors)))
    if spec.robust in ("pcm", "pcm+gnc") and loops:
        chain = OdometryChain.from_graph(g)
        sel = pcm_select(_loop_candidates(g, loops), chain, spec.pcm)
        dropped = set(loops) - {loops[s] for s in sel}
        keep -= dropped
        g = g.subgraph(sorted(keep))
        kept_map = sorted(keep)
    else:
        kept_map = list(range(len(g.factors)))
    if spec.robust in ("gnc", "pcm+gnc"):
        gr = gnc_optimize(g, spec.gnc)
        res = gr.result
        inl = {kept_map[i] for i in gr.inliers}
    else:
        res = optimize(g)
        inl = {kept_map[i] for i in g.indices(FactorKind.LOOP_CLOSURE)}
    full = graph.factors + list(extra_factors)
    accepted = [full[i].keys for i in loops if i in inl]
    rejected = [full[i].keys for i in loops if i not in inl]
    return RunOutcome(res.values, accepted, rejected, res.iterations, res.error, res.converged)


def _to_planar(p) -> Pose2:
    R = p.rotation.matrix()
    t = p.translation
    return Pose2(t[0], t[1], math.atan2(R[1, 0], R[0, 0]))


def external_factors(graph: PoseGraph, stream, spec: RunSpec, information=None) -> list:
    """External-odometry factors between consecutive graph keys at ``key * keyframe_dt``."""
    if graph.dimension == "SE2":
        stream = [OdometrySample(s.timestamp, _to_planar(s.pose) if isinstance(s.pose, Pose3) else s.pose)
                  for s in stream]
    keys = sorted(graph.values)
    info = spec.ext_info if spec.ext_info is not None else information
    cfg = ExternalOdomConfig(information=info)
    return make_between_factors(stream, [k * spec.keyframe_dt for k in keys], cfg, keys)


def trajectory_of(values: dict, keyframe_dt: float) -> list:
    return [(k * keyframe_dt, values[k]) for k in sorted(values)]


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _pcm_cfg(args) -> PcmConfig:
    return PcmConfig(rotation_threshold=args.pcm_rot, translation_threshold=args.pcm_trans)


def _spec(args, robust=None, eo=None) -> RunSpec:
    return RunSpec(robust=robust or args.robust,
                   external_odometry=bool(args.external_odom) if eo is None else eo,
                   ext_info=args.external_odom_info,
                   pcm=_pcm_cfg(args),
                   gnc=GncConfig(confidence=args.gnc_confidence),
                   keyframe_dt=args.keyframe_dt)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _synth_cfg(args, seed: int) -> SynthConfig:
    return SynthConfig(dimension=args.dimension, shape=args.shape, num_poses=args.poses,
                       sigma_rot=args.sigma_rot, sigma_trans=args.sigma_trans,
                       num_true_loops=args.loops, outlier_ratio=args.outlier_ratio,
                       outlier_mode=args.outlier_mode, seed=seed, keyframe_dt=args.keyframe_dt)


def cmd_simulate(args) -> int:
    ds = generate(_synth_cfg(args, args.seed))
    os.makedirs(args.out, exist_ok=True)
    g = ds.to_pose_graph("all")
    labels = {fi: ds.loop_candidates[n].inlier
              for n, fi in enumerate(g.indices(FactorKind.LOOP_CLOSURE))}
    _write(os.path.join(args.out, "graph.g2o"), iof.write_g2o(iof.pose_graph_to_document(g, labels)))
    _write(os.path.join(args.out, "ground_truth.tum"),
           iof.write_tum(list(zip(ds.timestamps.tolist(), ds.ground_truth))))
    if ds.external_odometry is not None:
        _write(os.path.join(args.out, "external_odometry.tum"),
               iof.write_tum([(s.timestamp, s.pose) for s in ds.external_odometry]))
    if args.features:
        frames = generate_feature_stream(ds.ground_truth, ds.timestamps, FeatureTrackConfig(seed=args.seed))
        _write(os.path.join(args.out, "features.csv"), iof.write_feature_csv(frames))
    print(f"wrote {len(ds.ground_truth)} poses, {len(ds.loop_candidates)} loop candidates "
          f"({int(ds.outlier_labels().sum())} outliers) to {args.out}")
    return EXIT_OK


def _load_graph(path: str) -> PoseGraph:
    return iof.document_to_pose_graph(iof.parse_g2o(_read(path)))


def cmd_optimize(args) -> int:
    spec = _spec(args)
    graph = _load_graph(args.input[0])
    extra = []
    if args.external_odom:
        stream = [OdometrySample(t, p) for t, p in iof.parse_tum(_read(args.external_odom))]
        extra = external_factors(graph, stream, spec)
    out = run_pipeline(graph, spec, extra)
    traj = trajectory_of(out.values, spec.keyframe_dt)
    report = {
        "robust": spec.robust,
        "external_odometry": bool(extra),
        "iterations": out.iterations,
        "final_error": out.error,
        "converged": out.converged,
        "accepted_loop_closures": [list(k) for k in out.accepted],
        "rejected_loop_closures": [list(k) for k in out.rejected],
    }
    if args.ground_truth:
        ref = iof.parse_tum(_read(args.ground_truth))
        report["ate_rmse"] = ate_rmse(traj, ref, ALIGN[args.align]).ate_rmse
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "trajectory.tum"), iof.write_tum(traj))
        _write(os.path.join(args.out, "report.json"), json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{spec.robust}: {len(out.accepted)} loop closures accepted, {len(out.rejected)} rejected, "
          f"{out.iterations} iterations, error {out.error:.6g}"
          + (f", ATE RMSE {report['ate_rmse']:.6g} m" if "ate_rmse" in report else ""))
    return EXIT_OK


def _trial_dataset(args, trial: int):
    """Synthetic dataset for one trial: graph, external stream, its information, ground truth."""
    ds = generate(_synth_cfg(args, args.seed + trial * args.seed_stride))
    traj = list(zip(ds.timestamps.tolist(), ds.ground_truth))
    info = ds.ext_noise.information if ds.ext_noise is not None else None
    return ds.to_pose_graph("all"), ds.external_odometry, info, traj


def ablation_rows(args, configs) -> list[tuple]:
    rows = []
    datasets = args.input or [None]
    for path in datasets:
        name = os.path.splitext(os.path.basename(path))[0] if path else f"synth-{args.shape}-{args.dimension}"
        fixed = None
        if path:
            stream = None
            if args.external_odom:
                stream = [OdometrySample(t, p) for t, p in iof.parse_tum(_read(args.external_odom))]
            ref = iof.parse_tum(_read(args.ground_truth)) if args.ground_truth else None
            if ref is None:
                raise UsageError("--ground-truth is required with --input in ablate")
            fixed = (_load_graph(path), stream, None, ref)
        for trial in range(args.trials):
            graph, stream, info, ref = fixed if fixed else _trial_dataset(args, trial)
            for cname in configs:
                robust, eo = parse_config_name(cname)
                spec = _spec(args, robust, eo)
                try:
                    extra = []
                    if eo:
                        if stream is None:
                            raise UsageError(f"configuration {cname!r} needs an external odometry stream")
                        extra = external_factors(graph, stream, spec, info)
                    out = run_pipeline(graph, spec, extra)
                    ate = ate_rmse(trajectory_of(out.values, spec.keyframe_dt), ref, ALIGN[args.align]).ate_rmse
                    if not math.isfinite(ate):
                        ate = None
                except (NumericalFailureError, RobustPGError) as exc:
                    if isinstance(exc, ParseError):
                        raise
                    log.warning("%s / %s / trial %d failed: %s", name, cname, trial, exc)
                    ate = None
                rows.append((name, cname, trial, ate))
    return rows


def format_table(rows) -> str:
    """Aligned Avg/Std table, one line per (dataset, config); ``--`` marks failures."""
    groups: dict = {}
    for ds, cfg, _, ate in rows:
        groups.setdefault((ds, cfg), []).append(ate)
    body = []
    for (ds, cfg), vals in groups.items():
        if any(v is None for v in vals):
            avg = std = "--"
        else:
            a = np.array(vals, dtype=float)
            avg = f"{a.mean():.4f}"
            std = f"{a.std(ddof=1):.4f}" if len(a) > 1 else "n/a"
        body.append((ds, cfg, avg, std))
    head = ("dataset", "config", "Avg[m]", "Std[m]")
    widths = [max(len(r[c]) for r in [head] + body) for c in range(4)]
    fmt = lambda r: "  ".join(v.ljust(w) if c < 2 else v.rjust(w) for c, (v, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(head), fmt(tuple("-" * w for w in widths))] + [fmt(r) for r in body]) + "\n"


def cmd_ablate(args) -> int:
    configs = [c for c in args.configs.split(",") if c.strip()]
    if not configs:
        raise UsageError("need at least one configuration")
    for c in configs:
        parse_config_name(c)
    rows = ablation_rows(args, configs)
    table = format_table(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "ablation.csv"), iof.write_results_csv(rows))
        _write(os.path.join(args.out, "ablation.txt"), table)
    sys.stdout.write(table)
    return EXIT_OK


def keyframe_sweep(frames, mdsl_values, max_kf_time: float) -> list[dict]:
    """One row per MDSL value plus a time-trigger-only baseline row."""
    rows = []
    for mdsl in list(mdsl_values) + [None]:
        cfg = KeyframeConfig(max_disparity_since_lkf=mdsl or 1.0, max_time_between_keyframes=max_kf_time)
        dec = replay_keyframes(frames, cfg, use_disparity=mdsl is not None)
        kf = [d for d in dec if d.is_keyframe]
        disp = [d.disparity for d in kf if d.reason != "first" and math.isfinite(d.disparity)]
        rows.append({
            "mdsl": "time-only" if mdsl is None else f"{mdsl:g}",
            "keyframes": len(kf),
            "disparity_triggered": sum(d.reason == "disparity" for d in kf),
            "time_triggered": sum(d.reason == "time" for d in kf),
            "mean_disparity": float(np.mean(disp)) if disp else 0.0,
            "graph_nodes": len(kf),
            "graph_odometry_edges": max(len(kf) - 1, 0),
        })
    return rows


def cmd_keyframe_sim(args) -> int:
    if args.input:
        frames = iof.parse_feature_csv(_read(args.input[0]))
    else:
        poses, stamps, segments = stop_and_go_trajectory()
        frames = generate_feature_stream(poses, stamps, FeatureTrackConfig(
            stationary_segments=segments, seed=args.seed))
    sweep = DEFAULT_MDSL_SWEEP if args.mdsl is None else args.mdsl
    rows = keyframe_sweep(frames, sweep, args.max_kf_time)
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c])
                                         for c in cols) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "keyframes.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.input or not args.ground_truth:
        raise UsageError("evaluate needs --input and --ground-truth")
    ref = iof.parse_tum(_read(args.ground_truth))
    rows = []
    for trial, path in enumerate(args.input):
        est = iof.parse_tum(_read(path))
        rep = ate_rmse(est, ref, ALIGN[args.align], max_dt=args.max_dt)
        print(f"{path}: ATE RMSE {rep.ate_rmse:.6g} m over {rep.count} poses (scale {rep.scale:.6g})")
        rows.append((os.path.splitext(os.path.basename(args.ground_truth))[0],
                     os.path.splitext(os.path.basename(path))[0], trial, rep.ate_rmse))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "ate.csv"), iof.write_results_csv(rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _mdsl_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid MDSL list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("MDSL values must be > 0")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input", action="append", help="input file (repeatable where it makes sense)")
    common.add_argument("--ground-truth", help="reference TUM trajectory")
    common.add_argument("--robust", choices=ROBUST_MODES, default="none")
    common.add_argument("--external-odom", metavar="FILE", help="external odometry TUM stream")
    common.add_argument("--external-odom-info", type=float, default=None,
                        help="isotropic information of external-odometry factors (default 100)")
    common.add_argument("--pcm-rot", type=float, default=0.01, help="PCM rotation threshold [rad]")
    common.add_argument("--pcm-trans", type=float, default=0.05, help="PCM translation threshold [m]")
    common.add_argument("--gnc-confidence", type=float, default=0.99)
    common.add_argument("--mdsl", type=_mdsl_list, default=None, help="comma-separated MDSL values [px]")
    common.add_argument("--max-kf-time", type=float, default=1.0, help="keyframe time trigger [s]")
    common.add_argument("--keyframe-dt", type=float, default=0.2, help="seconds per graph key")
    common.add_argument("--trials", type=int, default=1)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seed-stride", type=int, default=1, help="seed increment between trials")
    common.add_argument("--align", choices=tuple(ALIGN), default="rigid")
    common.add_argument("--max-dt", type=float, default=0.02, help="timestamp association window [s]")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("-v", "--verbose", action="store_true")
    # synthetic data
    common.add_argument("--dimension", choices=("SE2", "SE3"), default="SE2")
    common.add_argument("--shape", choices=("grid", "loop", "random-walk"), default="grid")
    common.add_argument("--poses", type=int, default=500)
    common.add_argument("--loops", type=int, default=100, help="true loop closures")
    common.add_argument("--outlier-ratio", type=float, default=0.0)
    common.add_argument("--outlier-mode", choices=("random-transform", "wrong-association"),
                        default="random-transform")
    common.add_argument("--sigma-rot", type=float, default=0.01)
    common.add_argument("--sigma-trans", type=float, default=0.05)
    common.add_argument("--features", action="store_true", help="simulate: also write features.csv")

    p = _Parser(prog="robustpg", description="Robust pose-graph back end and ablation tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("optimize", parents=[common], help="optimize a g2o graph")
    a = sub.add_parser("ablate", parents=[common], help="mean/std ATE over trials per configuration")
    a.add_argument("--configs", default="none,pcm,gnc",
                   help="comma-separated, e.g. none,pcm,gnc,gnc+eo,pcm+gnc")
    sub.add_parser("keyframe-sim", parents=[common], help="keyframe counts over an MDSL sweep")
    sub.add_parser("evaluate", parents=[common], help="ATE RMSE of TUM trajectories")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "ablate": cmd_ablate,
    "keyframe-sim": cmd_keyframe_sim,
    "evaluate": cmd_evaluate,
}


def _validate(args) -> None:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.command == "simulate" and not args.out:
        raise UsageError("simulate needs --out")
    if args.command == "optimize" and (not args.input or len(args.input) != 1):
        raise UsageError("optimize needs exactly one --input")
    if args.command in ("optimize", "evaluate", "ablate", "keyframe-sim"):
        for f in (args.input or []) + [args.ground_truth, args.external_odom]:
            if f and not os.path.isfile(f):
                raise FileNotFoundError(f"no such file: {f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"robustpg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as exc:
        print(f"robustpg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailureError as exc:
        print(f"robustpg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RobustPGError as exc:
        print(f"robustpg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
