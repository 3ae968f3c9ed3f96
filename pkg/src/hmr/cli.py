"""``hmr`` command line: one subcommand per pipeline stage plus the end-to-end run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 a batch finished with failed samples.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .benchmark import (
    DEFAULT_THRESHOLDS,
    ScoreReport,
    evaluate,
    load_predictions,
    predictions_from_records,
    render_report,
)
from .client import replay_name
from .dataset import (
    Crop,
    Rotate,
    augment_sample,
    dump_manifest,
    expand_manifest,
    load_manifest,
    read_pgm16,
    summarize,
)
from .errors import HMRError
from .grounding import NormalizedBox, box_center, parse_grounding_output
from .kinematics import forward_kinematics
from .pipeline import PipelineConfig, contact_pose_from_depth, plan_trajectory, run_e2e, write_records
from .scenes import synth_batch
from .sim import run_tracking
from .spatial import Pose6
from .trajectory import JointTrajectory, validate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SAMPLES = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _pair(text):
    return _floats(text, 2)


def _quad(text):
    return _floats(text, 4)


def _indices(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config, args.set)
    return PipelineConfig.from_dict({}, ".", args.set)


def _load_pose(path: str) -> Pose6:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return Pose6.from_dict(data.get("pose", data))


# --- subcommands --------------------------------------------------------------

def cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.raw:
        # P is a directory of recorded answers, one <stem>.txt per image
        preds, bad = [], 0
        for s in manifest:
            f = Path(args.pred) / replay_name(s.image_ref)
            if not f.exists():
                continue
            try:
                preds.extend(predictions_from_records(s.image_ref, f.read_bytes().decode("utf-8", "replace")))
            except HMRError:
                bad += 1
    else:
        preds, bad = load_predictions(args.pred)
    report = evaluate(preds, manifest, args.thresholds, label=args.label, unparseable=bad)
    print(render_report(report))
    if args.out:
        _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        r = ScoreReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        r.label = r.label or Path(path).stem
        reports.append(r)
    text = render_report(reports, title=args.title)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_parse(args) -> int:
    if args.text is not None:
        raw: str | bytes = args.text
    elif args.file in (None, "-"):
        raw = sys.stdin.buffer.read()
    else:
        raw = Path(args.file).read_bytes()
    records = parse_grounding_output(raw, strict=args.strict)
    out = []
    for r in records:
        item = {"acupoint_id": r.acupoint_id, "name": r.name, "box_norm": list(r.box.as_tuple())}
        if args.width and args.height:
            item["center_px"] = list(box_center(r.box, args.width, args.height))
        out.append(item)
    _write_json(out, args.out)
    return EXIT_OK


def cmd_augment(args) -> int:
    samples = load_manifest(args.manifest)
    if args.rotate is not None or args.crop is not None:
        op = Rotate(args.rotate) if args.rotate is not None else Crop(*(int(v) for v in args.crop))
        out = [augment_sample(s, op)[0] for s in samples]
    else:
        out = expand_manifest(samples, args.copies, args.seed, max_rotation=args.max_rotate_deg)
    if args.keep_originals:
        out = list(samples) + out
    dump_manifest(out, args.out)
    s = summarize(out)
    print(f"{s.images} images, {s.annotations} annotation pairs -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    truths = synth_batch(
        args.out, args.count, args.seed,
        max_tilt_deg=args.max_tilt_deg,
        tilt_deg=tuple(args.tilt_deg) if args.tilt_deg is not None else None,
        distance=args.distance, noise_mm=args.noise_mm, outlier_fraction=args.outliers,
    )
    print(f"wrote {len(truths)} scenes to {args.out}")
    return EXIT_OK


def cmd_pose(args) -> int:
    cfg = _config(args)
    depth_m = read_pgm16(args.depth).astype(float) / 1000.0
    if args.uv is not None:
        center = tuple(args.uv)
    else:
        h, w = depth_m.shape
        center = box_center(NormalizedBox(*(int(v) for v in args.box)), w, h)
    result = contact_pose_from_depth(cfg, depth_m, center)
    result.pop("_pose")
    _write_json(result, args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    if args.start is not None:
        cfg.start_q = np.asarray(args.start, dtype=float)
        if cfg.start_q.shape != (cfg.chain.n,):
            raise UsageError(f"--start needs {cfg.chain.n} joint values")
    path, traj, check = plan_trajectory(cfg, _load_pose(args.pose))
    _write_json({"trajectory": traj.to_dict(), "waypoints": [q.tolist() for q in path],
                 "validation": check.to_dict()}, args.out)
    if args.csv:
        traj.write_csv(args.csv, args.rate)
    return EXIT_OK if check.ok else EXIT_DATA


def cmd_simulate(args) -> int:
    cfg = _config(args)
    data = json.loads(Path(args.traj).read_text(encoding="utf-8"))
    traj = JointTrajectory.from_dict(data.get("trajectory", data))
    c = cfg["controller"]
    goal = _load_pose(args.goal) if args.goal else None
    dist = np.asarray(args.disturbance, dtype=float) if args.disturbance is not None else None
    report = run_tracking(traj, cfg.gains, args.dt or float(c["dt"]), dist, chain=cfg.chain, goal=goal,
                          goal_tol=float(c["goal_tol"]), keep_log=bool(args.log))
    out = report.to_dict()
    out["validation"] = validate(traj, cfg.chain, float(cfg["trajectory"]["validate_rate"])).to_dict()
    _write_json(out, args.out)
    if args.log:
        n = traj.n_joints
        header = "t," + ",".join(f"q{j}" for j in range(n))
        np.savetxt(args.log, np.array(report.log).reshape(-1, n + 1), delimiter=",",
                   header=header, comments="", fmt="%.9g")
    return EXIT_OK


def cmd_e2e(args) -> int:
    cfg = _config(args)
    selector = _indices(args.samples) if args.samples else None
    records = run_e2e(cfg, selector, replay_dir=args.replay)
    write_records(records, args.out)
    ok = sum(r["success"] for r in records)
    print(f"{ok}/{len(records)} samples succeeded -> {args.out}")
    return EXIT_OK if ok == len(records) else EXIT_SAMPLES


def cmd_fk(args) -> int:
    cfg = _config(args)
    _write_json(forward_kinematics(cfg.chain, np.asarray(args.q, dtype=float)).to_dict(), args.out)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hmr", description="Acupoint grounding, contact pose and arm trajectory tools.")
    p.add_argument("--version", action="version", version=f"hmr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="pipeline configuration JSON")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry (dotted key, JSON value)")

    sp = sub.add_parser("score", help="score predictions against a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pred", required=True, help="predictions JSONL (or a directory of raw answers with --raw)")
    sp.add_argument("--raw", action="store_true", help="--pred is a directory of <stem>.txt model answers")
    sp.add_argument("--thresholds", type=_floats, default=list(DEFAULT_THRESHOLDS))
    sp.add_argument("--label", default="")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("report", help="render score reports as one table")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--title", default="Model")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("parse", help="parse grounding tokens from model output")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--text")
    src.add_argument("--file")
    sp.add_argument("--strict", action="store_true", help="unknown acupoint names are errors")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("augment", help="expand a manifest with rotations and crops")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--copies", type=int, default=12)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-rotate-deg", type=float, default=30.0)
    op = sp.add_mutually_exclusive_group()
    op.add_argument("--rotate", type=float, help="apply one fixed rotation to every sample")
    op.add_argument("--crop", type=_quad, help="apply one fixed crop x1,y1,x2,y2 to every sample")
    sp.add_argument("--keep-originals", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("synth", help="write synthetic tilted-plane RGB-D scenes")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tilt-deg", type=_pair, help="fixed tilt about camera x,y in degrees")
    sp.add_argument("--max-tilt-deg", type=float, default=30.0)
    sp.add_argument("--distance", type=float, default=1.0)
    sp.add_argument("--noise-mm", type=float, default=2.0)
    sp.add_argument("--outliers", type=float, default=0.2)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pose", help="contact pose from a depth map and a pixel or box")
    with_config(sp)
    sp.add_argument("--depth", required=True, help="16-bit PGM depth map in millimetres")
    where = sp.add_mutually_exclusive_group(required=True)
    where.add_argument("--uv", type=_pair)
    where.add_argument("--box", type=_quad, help="normalized box x1,y1,x2,y2")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pose)

    sp = sub.add_parser("plan", help="plan and validate a joint trajectory to a pose")
    with_config(sp)
    sp.add_argument("--pose", required=True)
    sp.add_argument("--start", type=_floats)
    sp.add_argument("--csv", help="also write a sampled CSV")
    sp.add_argument("--rate", type=float, default=100.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="track a trajectory with the simulated controller")
    with_config(sp)
    sp.add_argument("--traj", required=True)
    sp.add_argument("--goal", help="goal pose JSON; default is the pose at the last waypoint")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--disturbance", type=_floats, help="constant joint disturbance (one value or one per joint)")
    sp.add_argument("--log", help="write the simulated joint log as CSV")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("e2e", help="run the whole pipeline over manifest samples")
    with_config(sp)
    sp.add_argument("--replay", help="directory of recorded answers (default: config replay_dir or live)")
    sp.add_argument("--samples", help="indices such as 0,2,5-9 (default: all)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_e2e)

    sp = sub.add_parser("fk", help="forward kinematics of a joint vector")
    with_config(sp)
    sp.add_argument("q", type=_floats)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fk)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hmr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HMRError, OSError, ValueError, KeyError) as exc:
        print(f"hmr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
