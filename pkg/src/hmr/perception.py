"""Pixel -> 3D contact pose: pinhole geometry, depth patches, RANSAC planes and
the perpendicular-approach ("vertical tapping") orientation rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    Degenerate,
    DegeneratePlane,
    InvalidDepth,
    NoConsensus,
    TooFewPoints,
    ValidationError,
    ZeroVector,
)
from .spatial import Pose6, is_rotation


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus the camera->base extrinsic transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if not is_rotation(R):
            raise ValidationError("extrinsic rotation is not in SO(3)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
            d.get("rotation", np.eye(3)), d.get("translation", np.zeros(3)),
        )


def deproject(u: float, v: float, depth: float, cam: CameraModel) -> np.ndarray:
    """Pixel + metric depth -> point in the camera frame."""
    if not depth > 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    return np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth])


def project(p: np.ndarray, cam: CameraModel) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise BehindCamera(f"point has z={z}")
    return cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy


def pixel_ray(u: float, v: float, cam: CameraModel) -> np.ndarray:
    """Ray direction through a pixel, scaled so its z component is 1."""
    return np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])


def camera_to_base(p: np.ndarray, cam: CameraModel) -> np.ndarray:
    return cam.rotation @ np.asarray(p, dtype=float) + cam.translation


def base_to_camera(p: np.ndarray, cam: CameraModel) -> np.ndarray:
    return cam.rotation.T @ (np.asarray(p, dtype=float) - cam.translation)


@dataclass(frozen=True)
class Patch:
    points: np.ndarray  # (N, 3), camera frame
    pixels: np.ndarray  # (N, 2) as (u, v)
    valid_fraction: float


def extract_patch(depth_m: np.ndarray, center: tuple[float, float], radius: float,
                  cam: CameraModel) -> Patch:
    """Deproject every valid pixel within ``radius`` of ``center``.

    ``depth_m`` is indexed ``[v, u]`` in metres; zero (or non-finite) marks an invalid reading.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1 px")
    h, w = depth_m.shape
    u0, v0 = center
    ulo, uhi = max(int(np.floor(u0 - radius)), 0), min(int(np.ceil(u0 + radius)), w - 1)
    vlo, vhi = max(int(np.floor(v0 - radius)), 0), min(int(np.ceil(v0 + radius)), h - 1)
    if ulo > uhi or vlo > vhi:
        raise TooFewPoints("patch lies outside the image")
    vv, uu = np.mgrid[vlo:vhi + 1, ulo:uhi + 1]
    in_disc = (uu - u0) ** 2 + (vv - v0) ** 2 <= radius * radius
    z = depth_m[vlo:vhi + 1, ulo:uhi + 1]
    valid = in_disc & np.isfinite(z) & (z > 0)
    n_disc = int(in_disc.sum())
    n_valid = int(valid.sum())
    if n_valid < 3:
        raise TooFewPoints(f"only {n_valid} valid depth pixels in the patch")
    u = uu[valid].astype(float)
    v = vv[valid].astype(float)
    zz = z[valid].astype(float)
    pts = np.column_stack([(u - cam.cx) * zz / cam.fx, (v - cam.cy) * zz / cam.fy, zz])
    return Patch(pts, np.column_stack([u, v]), n_valid / max(n_disc, 1))


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``normal . p + d = 0`` with the normal oriented toward the frame origin."""

    normal: np.ndarray
    d: float
    inlier_count: int = 3
    inlier_rms: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0:
            raise DegeneratePlane("plane normal is zero")
        n = n / norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)

    @property
    def point(self) -> np.ndarray:
        """Foot of the perpendicular from the origin."""
        return -self.d * self.normal

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.normal + self.d

    def intersect_ray(self, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
        denom = float(self.normal @ direction)
        if abs(denom) < 1e-12:
            raise DegeneratePlane("ray is parallel to the plane")
        s = -(float(self.normal @ origin) + self.d) / denom
        if s <= 0:
            raise BehindCamera("plane intersection lies behind the ray origin")
        return origin + s * direction

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "PlaneModel":
        """Express the plane in a frame where points map as ``R p + t``."""
        n = R @ self.normal
        return PlaneModel(n, self.d - float(n @ t), self.inlier_count, self.inlier_rms)

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "d": self.d,
                "inlier_count": self.inlier_count, "inlier_rms": self.inlier_rms}


def plane_to_base(plane: PlaneModel, cam: CameraModel) -> PlaneModel:
    return plane.transformed(cam.rotation, cam.translation)


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_threshold: float = 0.006
    min_inliers: int | None = None  # None -> max(20, 30% of the points)
    seed: int = 0


def _fit_lsq(pts: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ centroid)


def _orient(n: np.ndarray, d: float) -> tuple[np.ndarray, float]:
    # toward the origin means n . (0 - p) > 0, i.e. d > 0
    return (-n, -d) if d < 0 else (n, d)


def ransac_plane(points: np.ndarray, params: RansacParams = RansacParams()) -> PlaneModel:
    """Robust plane fit: best sampled model by inlier count (ties -> lower RMS),
    then least-squares refit on the consensus set."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise TooFewPoints("need at least 3 points")
    n_pts = len(pts)
    min_inliers = params.min_inliers
    if min_inliers is None:
        min_inliers = min(max(20, int(np.ceil(0.3 * n_pts))), n_pts)
    thr = params.inlier_threshold
    rng = np.random.default_rng(params.seed)

    scale = max(float(np.ptp(pts, axis=0).max()), 1e-12)
    normals = np.zeros((params.iterations, 3))
    offsets = np.zeros(params.iterations)
    ok = np.zeros(params.iterations, dtype=bool)
    # degenerate (collinear or repeated) samples are redrawn a bounded number of times
    for _ in range(20):
        todo = np.flatnonzero(~ok)
        if len(todo) == 0:
            break
        idx = rng.integers(0, n_pts, size=(len(todo), 3))
        a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
        cr = np.cross(b - a, c - a)
        norm = np.linalg.norm(cr, axis=1)
        good = norm > 1e-9 * scale * scale
        rows = todo[good]
        normals[rows] = cr[good] / norm[good, None]
        offsets[rows] = -np.einsum("ij,ij->i", normals[rows], a[good])
        ok[rows] = True
    if not ok.any():
        raise Degenerate("every sampled triple was collinear")

    normals, offsets = normals[ok], offsets[ok]
    resid = np.abs(pts @ normals.T + offsets)  # (N, M)
    inl = resid <= thr
    counts = inl.sum(axis=0)
    sq = np.where(inl, resid * resid, 0.0).sum(axis=0)
    rms = np.sqrt(sq / np.maximum(counts, 1))
    best = int(np.lexsort((rms, -counts))[0])
    if counts[best] < min_inliers:
        raise NoConsensus(f"best model has {counts[best]} inliers, need {min_inliers}")

    mask = inl[:, best]
    n, d = _fit_lsq(pts[mask])
    # one re-selection against the refined plane; LSQ keeps the inlier RMS under the threshold
    mask2 = np.abs(pts @ n + d) <= thr
    if mask2.sum() >= max(3, min_inliers):
        n2, d2 = _fit_lsq(pts[mask2])
        if np.sqrt(np.mean((pts[mask2] @ n2 + d2) ** 2)) <= thr:
            n, d, mask = n2, d2, mask2
    n, d = _orient(n, d)
    r = pts[mask] @ n + d
    return PlaneModel(n, d, int(mask.sum()), float(np.sqrt(np.mean(r * r))))


def normal_angle(n1, n2) -> float:
    """Angle in [0, pi] between two directions."""
    a = np.asarray(n1, dtype=float)
    b = np.asarray(n2, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("normal_angle needs non-zero vectors")
    return float(np.arccos(np.clip((a / na) @ (b / nb), -1.0, 1.0)))


_WORLD_X = np.array([1.0, 0.0, 0.0])
_WORLD_Y = np.array([0.0, 1.0, 0.0])


def pose_from_contact(contact: np.ndarray, plane: PlaneModel, standoff: float = 0.0) -> Pose6:
    """Tool pose for a perpendicular press at ``contact`` (base frame).

    The approach axis (tool +z) is the inward normal ``-n``; the remaining roll is
    fixed by projecting world x (world y when nearly parallel) onto the contact plane.
    """
    if standoff < 0:
        raise ValueError("standoff must be >= 0")
    n = np.asarray(plane.normal, dtype=float)
    if not np.isfinite(n).all() or abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise DegeneratePlane("plane normal is not a unit vector")
    z = -n
    ref = _WORLD_Y if abs(_WORLD_X @ z) > 0.99 else _WORLD_X
    x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    position = np.asarray(contact, dtype=float) + standoff * n
    return Pose6(position, np.column_stack([x, y, z]))
