"""End-to-end run: grounding answer -> contact pose -> joint trajectory -> simulated execution."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .client import DEFAULT_INSTRUCTION, EndpointConfig, GroundingRequest, LiveSource, ReplaySource
from .dataset import ManifestSample, load_manifest, read_pgm16
from .errors import ConfigError, HMRError
from .grounding import box_center, normalize_box, parse_grounding_output
from .benchmark import iou
from .kinematics import IKParams, KinematicChain, default_chain_path
from .perception import (
    CameraModel,
    RansacParams,
    camera_to_base,
    deproject,
    extract_patch,
    normal_angle,
    pixel_ray,
    plane_to_base,
    pose_from_contact,
    ransac_plane,
)
from .registry import AcupointRegistry
from .scenes import default_camera
from .sim import ControllerGains, run_tracking
from .trajectory import JointTrajectory, fit_spline, plan_path, validate

DEFAULTS: dict[str, Any] = {
    "manifest": None,
    "registry": None,
    "chain": None,
    "replay_dir": None,
    "camera": None,
    "instruction": DEFAULT_INSTRUCTION,
    "target_acupoint": None,
    "iou_threshold": 0.5,
    "patch_radius": 30.0,
    "ransac": {"iterations": 500, "inlier_threshold": 0.006, "min_inliers": None, "seed": 0},
    "reference_normal": [0.0, 0.0, 1.0],
    "standoff": 0.0,
    "start_q": None,
    "ik": {"damping": 0.05, "max_iters": 200, "pos_tol": 1e-4, "rot_tol": 1e-3, "nullspace_bias": 0.1},
    "plan": {"max_step": 0.35},
    "trajectory": {"v_cap": 0.5, "min_segment": 0.1, "validate_rate": 1000.0},
    "controller": {"kp": 100.0, "kd": 20.0, "dt": 0.001, "goal_tol": 0.002},
    "endpoint": {"timeout_ms": 10000.0, "retries": 3, "backoff_s": 0.2},
}

_PATH_KEYS = ("manifest", "registry", "chain", "replay_dir")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    """``a.b=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    camera: CameraModel
    chain: KinematicChain
    registry: AcupointRegistry
    ransac: RansacParams
    ik: IKParams
    gains: ControllerGains
    start_q: np.ndarray
    paths: dict[str, Path | None] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.raw[key]

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".", overrides: Sequence[str] = ()) -> "PipelineConfig":
        raw = _merge(DEFAULTS, data)
        for o in overrides:
            apply_override(raw, o)
        base = Path(base_dir)
        paths: dict[str, Path | None] = {}
        for k in _PATH_KEYS:
            v = raw.get(k)
            paths[k] = None if v in (None, "") else (base / v if not Path(v).is_absolute() else Path(v))
            if paths[k] is not None and not paths[k].exists():
                raise ConfigError(f"{k} path {paths[k]} does not exist")
        try:
            camera = CameraModel.from_dict(raw["camera"]) if raw.get("camera") else default_camera()
            chain = KinematicChain.load(paths["chain"] or default_chain_path())
            registry = AcupointRegistry.load(paths["registry"]) if paths["registry"] else AcupointRegistry.default()
            r = raw["ransac"]
            ransac = RansacParams(int(r["iterations"]), float(r["inlier_threshold"]),
                                  None if r.get("min_inliers") is None else int(r["min_inliers"]), int(r["seed"]))
            ik = IKParams(**{k: float(v) if k != "max_iters" else int(v) for k, v in raw["ik"].items()})
            c = raw["controller"]
            gains = ControllerGains.uniform(chain.n, float(c["kp"]), float(c["kd"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        start = raw.get("start_q")
        start_q = np.asarray(start if start is not None else
                             (chain.home if chain.home is not None else chain.midrange), dtype=float)
        if start_q.shape != (chain.n,):
            raise ConfigError("start_q has the wrong length")
        checks = [
            (ransac.iterations >= 1, "ransac.iterations must be >= 1"),
            (ransac.inlier_threshold > 0, "ransac.inlier_threshold must be > 0"),
            (float(raw["patch_radius"]) >= 1, "patch_radius must be >= 1"),
            (0 <= float(raw["iou_threshold"]) <= 1, "iou_threshold must lie in [0, 1]"),
            (float(raw["standoff"]) >= 0, "standoff must be >= 0"),
            (ik.damping >= 0 and ik.max_iters >= 1, "ik.damping >= 0 and ik.max_iters >= 1 required"),
            (float(raw["trajectory"]["v_cap"]) > 0, "trajectory.v_cap must be > 0"),
            (float(c["dt"]) > 0, "controller.dt must be > 0"),
            (float(c["goal_tol"]) > 0, "controller.goal_tol must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return cls(raw, base, camera, chain, registry, ransac, ik, gains, start_q, paths)

    @classmethod
    def load(cls, path: str | Path, overrides: Sequence[str] = ()) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, path.parent, overrides)

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.base_dir / p


def _vec(a) -> list[float]:
    return [float(x) for x in np.asarray(a).ravel()]


def contact_pose_from_depth(cfg: PipelineConfig, depth_m: np.ndarray, center: tuple[float, float]) -> dict:
    """Depth map + contact pixel -> plane, contact point and tool pose (all recorded)."""
    cam = cfg.camera
    out: dict[str, Any] = {"center_px": _vec(center)}
    u, v = center
    ui, vi = int(round(u)), int(round(v))
    if 0 <= vi < depth_m.shape[0] and 0 <= ui < depth_m.shape[1] and depth_m[vi, ui] > 0:
        out["contact_raw_cam"] = _vec(deproject(u, v, float(depth_m[vi, ui]), cam))
    patch = extract_patch(depth_m, center, float(cfg["patch_radius"]), cam)
    out["patch"] = {"points": len(patch.points), "valid_fraction": patch.valid_fraction}
    plane_cam = ransac_plane(patch.points, cfg.ransac)
    out["plane_cam"] = plane_cam.to_dict()
    # contact = pixel ray meets the fitted plane; robust to a bad reading at the pixel itself
    contact_cam = plane_cam.intersect_ray(np.zeros(3), pixel_ray(u, v, cam))
    out["contact_cam"] = _vec(contact_cam)
    contact_base = camera_to_base(contact_cam, cam)
    plane_base = plane_to_base(plane_cam, cam)
    out["contact_base"] = _vec(contact_base)
    out["plane_base"] = plane_base.to_dict()
    out["tilt_rad"] = normal_angle(plane_base.normal, cfg["reference_normal"])
    pose = pose_from_contact(contact_base, plane_base, float(cfg["standoff"]))
    out["pose"] = pose.to_dict()
    out["approach_axis"] = _vec(pose.approach)
    out["_pose"] = pose
    return out


def plan_trajectory(cfg: PipelineConfig, pose):
    """Joint waypoints from the start configuration to ``pose``, the fitted spline and its check."""
    path = plan_path(cfg.chain, cfg.start_q, pose, ik=cfg.ik, max_step=float(cfg["plan"]["max_step"]))
    t = cfg["trajectory"]
    if len(path) == 1:
        traj = JointTrajectory.hold(path[0])
    else:
        traj = fit_spline(np.array(path), v_cap=float(t["v_cap"]), min_segment=float(t["min_segment"]))
    return path, traj, validate(traj, cfg.chain, float(t["validate_rate"]))


def plan_and_execute(cfg: PipelineConfig, pose) -> dict:
    path, traj, check = plan_trajectory(cfg, pose)
    c = cfg["controller"]
    report = run_tracking(traj, cfg.gains, float(c["dt"]), chain=cfg.chain, goal=pose,
                          goal_tol=float(c["goal_tol"]))
    return {
        "waypoints": [_vec(q) for q in path],
        "duration_s": traj.duration,
        "validation": check.to_dict(),
        "execution": report.to_dict(),
        "_traj": traj,
    }


def _strip_private(d):
    if isinstance(d, dict):
        return {k: _strip_private(v) for k, v in d.items() if not k.startswith("_")}
    return d


def _target(sample: ManifestSample, acupoint_id: int | None):
    if not sample.annotations:
        raise HMRError("sample has no annotations to target")
    if acupoint_id is None:
        return sample.annotations[0]
    for a in sample.annotations:
        if a.acupoint_id == acupoint_id:
            return a
    raise HMRError(f"sample has no annotation for acupoint {acupoint_id}")


def run_sample(cfg: PipelineConfig, sample: ManifestSample, source) -> dict:
    rec: dict[str, Any] = {"image": sample.image_ref, "success": False}
    stage = "target"
    try:
        ann = _target(sample, cfg["target_acupoint"])
        rec["acupoint_id"] = ann.acupoint_id
        gt_box = normalize_box(ann.box_px, sample.width, sample.height)
        rec["gt_box_norm"] = list(gt_box.as_tuple())

        stage = "ground"
        image_path = cfg.resolve(sample.image_ref)
        image = image_path.read_bytes() if image_path.exists() else b""
        if not image:
            raise HMRError(f"image {sample.image_ref} not found")
        req = GroundingRequest(cfg["instruction"].format(name=ann.name), image,
                               "image/png", sample.image_ref)
        resp = source.ground(req)
        rec["grounding"] = {"raw_text": resp.raw_text, "source": resp.source, "latency_ms": resp.latency_ms}

        stage = "parse"
        records = [r for r in parse_grounding_output(resp.raw_text, cfg.registry)
                   if r.acupoint_id == ann.acupoint_id]
        if not records:
            raise HMRError(f"answer has no box for acupoint {ann.acupoint_id}")
        box = records[0].box
        rec["pred_box_norm"] = list(box.as_tuple())
        rec["iou"] = iou(box, gt_box)
        center = box_center(box, sample.width, sample.height)

        stage = "perception"
        if sample.depth_ref is None:
            raise HMRError("sample has no depth map")
        depth_m = read_pgm16(cfg.resolve(sample.depth_ref)).astype(float) / 1000.0
        geo = contact_pose_from_depth(cfg, depth_m, center)
        rec["perception"] = geo

        stage = "control"
        ctl = plan_and_execute(cfg, geo["_pose"])
        rec["control"] = ctl

        ex = ctl["execution"]
        rec["goal_reached"] = bool(ex["goal_reached"])
        rec["final_pos_err_m"] = ex["final_pos_err_m"]
        rec["success"] = bool(rec["iou"] >= float(cfg["iou_threshold"]) and ex["goal_reached"])
    except (HMRError, OSError, ValueError) as exc:
        rec["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    return _strip_private(rec)


def make_source(cfg: PipelineConfig, replay_dir: str | Path | None = None):
    replay = Path(replay_dir) if replay_dir is not None else cfg.paths.get("replay_dir")
    if replay is not None:
        return ReplaySource(replay)
    e = cfg["endpoint"]
    return LiveSource(EndpointConfig.from_env(retries=int(e["retries"]), backoff_s=float(e["backoff_s"])))


def run_e2e(cfg: PipelineConfig, selector: Sequence[int] | None = None,
            replay_dir: str | Path | None = None, source=None) -> list[dict]:
    """One record per selected manifest sample, in selection order; failures are recorded."""
    if cfg.paths.get("manifest") is None:
        raise ConfigError("configuration has no manifest")
    samples = load_manifest(cfg.paths["manifest"], cfg.registry)
    indices = range(len(samples)) if selector is None else selector
    source = source or make_source(cfg, replay_dir)
    records = []
    for i in indices:
        if not 0 <= i < len(samples):
            records.append({"index": i, "success": False,
                            "error": {"stage": "select", "type": "IndexError",
                                      "message": f"no sample {i}"}})
            continue
        rec = run_sample(cfg, samples[i], source)
        records.append({"index": i, **rec})
    return records


def write_records(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
