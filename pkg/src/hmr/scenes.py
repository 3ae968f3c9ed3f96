"""Synthetic RGB-D scenes of a tilted plane with exact ground truth.

Also writes ready-to-run batches (images, depth maps, manifest, replay answers and a
pipeline config) used by the end-to-end checks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import Annotation, ManifestSample, dump_manifest, write_pgm16
from .errors import NotVisible
from .grounding import GroundingRecord, format_grounding_output, normalize_box
from .perception import CameraModel, PlaneModel, pixel_ray
from .registry import ZUSANLI_ID
from .spatial import rot_x, rot_y


@dataclass(frozen=True)
class SceneSpec:
    tilt_x_deg: float = 0.0
    tilt_y_deg: float = 0.0
    distance: float = 1.0  # metres along the optical axis
    noise_mm: float = 0.0
    outlier_fraction: float = 0.0
    contact_uv: tuple[float, float] | None = None  # defaults to the principal point


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth_mm: np.ndarray  # (H, W) float64, 0 = invalid
    plane_normal: np.ndarray  # camera frame, toward the camera
    plane_point: np.ndarray
    contact_point: np.ndarray  # camera frame, metres
    contact_uv: tuple[float, float]
    camera: CameraModel

    @property
    def depth_m(self) -> np.ndarray:
        return self.depth_mm / 1000.0

    def depth_u16(self) -> np.ndarray:
        return np.clip(np.rint(self.depth_mm), 0, 65535).astype(np.uint16)

    @property
    def plane(self) -> PlaneModel:
        return PlaneModel(self.plane_normal, -float(self.plane_normal @ self.plane_point))


def plane_normal_for_tilt(tilt_x_deg: float, tilt_y_deg: float) -> np.ndarray:
    """Camera-facing normal of a plane tilted about camera x, then camera y."""
    R = rot_y(np.radians(tilt_y_deg)) @ rot_x(np.radians(tilt_x_deg))
    return R @ np.array([0.0, 0.0, -1.0])


def render_plane_depth(normal: np.ndarray, point: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Exact per-pixel depth (metres, z component) of a plane; 0 where the ray misses."""
    vv, uu = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    rx = (uu - cam.cx) / cam.fx
    ry = (vv - cam.cy) / cam.fy
    denom = normal[0] * rx + normal[1] * ry + normal[2]
    num = float(normal @ point)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = num / denom
    return np.where(np.isfinite(z) & (z > 0), z, 0.0)


def synth_scene(spec: SceneSpec, camera: CameraModel, seed: int = 0) -> SyntheticScene:
    if spec.distance <= 0:
        raise ValueError("distance must be positive")
    if not 0 <= spec.outlier_fraction < 0.5:
        raise ValueError("outlier fraction must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    n = plane_normal_for_tilt(spec.tilt_x_deg, spec.tilt_y_deg)
    p0 = np.array([0.0, 0.0, spec.distance])

    uv = spec.contact_uv if spec.contact_uv is not None else (camera.cx, camera.cy)
    u, v = float(uv[0]), float(uv[1])
    if not (0 <= u <= camera.width - 1 and 0 <= v <= camera.height - 1):
        raise NotVisible(f"contact pixel {uv} is outside the image")
    ray = pixel_ray(u, v, camera)
    denom = float(n @ ray)
    s = float(n @ p0) / denom if denom != 0 else -1.0
    if not s > 0:
        raise NotVisible(f"contact pixel {uv} does not hit the plane")
    contact = s * ray

    z = render_plane_depth(n, p0, camera) * 1000.0
    z[z > 65535] = 0.0
    valid = z > 0
    if spec.noise_mm > 0:
        z = np.where(valid, z + rng.normal(0.0, spec.noise_mm, size=z.shape), 0.0)
    if spec.outlier_fraction > 0:
        salt = valid & (rng.random(z.shape) < spec.outlier_fraction)
        lo, hi = 0.5 * spec.distance * 1000.0, 1.5 * spec.distance * 1000.0
        z = np.where(salt, rng.uniform(lo, hi, size=z.shape), z)
    z = np.where(valid, np.maximum(z, 1.0), 0.0)

    # Lambert-ish shading of the surface with a marker at the contact pixel.
    shade = np.clip(-n[2], 0.2, 1.0)
    rgb = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
    rgb[valid] = (np.array([224, 182, 160]) * shade).astype(np.uint8)
    vv, uu = np.mgrid[0:camera.height, 0:camera.width]
    rgb[(uu - u) ** 2 + (vv - v) ** 2 <= 9] = (200, 30, 30)

    return SyntheticScene(rgb, z, n, p0, contact, (u, v), camera)


def default_camera() -> CameraModel:
    """640x480 camera 1.3 m above the base plane looking straight down.

    Camera x -> base -y, camera y -> base -x, camera z -> base -z.
    """
    R = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    return CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480, R, np.array([0.45, 0.0, 1.3]))


def contact_box(uv: tuple[float, float], half: float, width: int, height: int) -> tuple[float, ...]:
    u, v = uv
    return (max(u - half, 0.0), max(v - half, 0.0), min(u + half, float(width)), min(v + half, float(height)))


def write_scene(scene: SyntheticScene, out_dir: Path, stem: str, spec: SceneSpec | None = None,
                seed: int | None = None) -> dict[str, str]:
    from PIL import Image

    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"image": f"{stem}.png", "depth": f"{stem}_depth.pgm", "truth": f"{stem}.json"}
    Image.fromarray(scene.rgb).save(out_dir / files["image"])
    write_pgm16(out_dir / files["depth"], scene.depth_mm)
    truth = {
        "plane_normal_cam": scene.plane_normal.tolist(),
        "plane_point_cam": scene.plane_point.tolist(),
        "contact_point_cam": scene.contact_point.tolist(),
        "contact_uv": list(scene.contact_uv),
        "camera": scene.camera.to_dict(),
        "spec": asdict(spec) if spec is not None else None,
        "seed": seed,
    }
    (out_dir / files["truth"]).write_text(json.dumps(truth, indent=1), encoding="utf-8")
    return files


def synth_batch(out_dir: str | Path, count: int, seed: int, *, max_tilt_deg: float = 30.0,
                tilt_deg: tuple[float, float] | None = None, distance: float = 1.0,
                noise_mm: float = 2.0, outlier_fraction: float = 0.2,
                camera: CameraModel | None = None, contact_spread_px: float = 80.0,
                box_half_px: float = 12.0, acupoint_id: int = ZUSANLI_ID,
                acupoint_name: str = "Zusanli") -> list[dict]:
    """Write ``count`` scenes plus ``manifest.jsonl``, exact ``replay/`` answers and
    ``config.json``. With ``tilt_deg`` fixed every scene uses it; otherwise the tilt
    magnitude is drawn from ``[0, max_tilt_deg]`` with a random azimuth."""
    out = Path(out_dir)
    camera = camera or default_camera()
    rng = np.random.default_rng(seed)
    (out / "replay").mkdir(parents=True, exist_ok=True)
    samples, truths = [], []
    for i in range(count):
        if tilt_deg is not None:
            tx, ty = tilt_deg
        else:
            mag, az = rng.uniform(0.0, max_tilt_deg), rng.uniform(0.0, 2 * np.pi)
            tx, ty = float(mag * np.cos(az)), float(mag * np.sin(az))
        uv = (float(np.round(camera.cx + rng.uniform(-contact_spread_px, contact_spread_px), 2)),
              float(np.round(camera.cy + rng.uniform(-contact_spread_px, contact_spread_px), 2)))
        spec = SceneSpec(tx, ty, distance, noise_mm, outlier_fraction, uv)
        scene_seed = seed * 1000 + i
        scene = synth_scene(spec, camera, scene_seed)
        stem = f"scene_{i:03d}"
        files = write_scene(scene, out, stem, spec, scene_seed)
        box = contact_box(uv, box_half_px, camera.width, camera.height)
        samples.append(ManifestSample(
            image_ref=files["image"], width=camera.width, height=camera.height,
            depth_ref=files["depth"], lighting="natural", background="synthetic",
            annotations=(Annotation(acupoint_id, acupoint_name, box),),
        ))
        record = GroundingRecord(acupoint_id, acupoint_name, normalize_box(box, camera.width, camera.height))
        (out / "replay" / f"{stem}.txt").write_text(format_grounding_output([record]), encoding="utf-8")
        truths.append({"image": files["image"], "truth": files["truth"], "tilt_deg": [tx, ty]})
    dump_manifest(samples, out / "manifest.jsonl")
    config = {
        "manifest": "manifest.jsonl",
        "replay_dir": "replay",
        "camera": camera.to_dict(),
    }
    (out / "config.json").write_text(json.dumps(config, indent=1), encoding="utf-8")
    return truths
