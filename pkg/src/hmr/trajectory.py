"""Joint-space planning through IK waypoints and quintic-spline timing.

Segments are quintic polynomials in normalized time. Interior knot velocities and
accelerations come from a linear solve that makes jerk and snap continuous too, so
the result is the clamped quintic interpolating spline (rest-to-rest at both ends).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    IkFailed,
    LimitViolation,
    NonmonotonicTiming,
    NotConverged,
    TrajectoryOutOfRange,
)
from .kinematics import IKParams, KinematicChain, check_limits, forward_kinematics, solve_ik
from .spatial import Pose6, geodesic_distance, interpolate_pose

TIME_EPS = 1e-12


def _segment_coeffs(dp, V0, A0, V1, A1) -> np.ndarray:
    """Normalized quintic coefficients c1..c5 (c0 is the start position).

    ``V`` and ``A`` are velocity*h and acceleration*h^2 so the segment runs on s in [0, 1].
    """
    c1 = V0
    c2 = A0 / 2.0
    c3 = (20 * dp - 8 * V1 - 12 * V0 - 3 * A0 + A1) / 2.0
    c4 = (-30 * dp + 14 * V1 + 16 * V0 + 3 * A0 - 2 * A1) / 2.0
    c5 = (12 * dp - 6 * V1 - 6 * V0 - A0 + A1) / 2.0
    return np.stack([c1, c2, c3, c4, c5])


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    knot_times: np.ndarray  # (K+1,)
    positions: np.ndarray  # (K+1, n)
    velocities: np.ndarray  # (K+1, n)
    accelerations: np.ndarray  # (K+1, n)
    coeffs: np.ndarray = field(init=False)  # (K, 6, n), normalized time

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise NonmonotonicTiming("knot times must start at 0 and increase strictly")
        P = np.atleast_2d(np.asarray(self.positions, dtype=float))
        V = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        A = np.atleast_2d(np.asarray(self.accelerations, dtype=float))
        h = np.diff(t)[:, None]
        c = np.zeros((len(t) - 1, 6, P.shape[1]))
        if len(t) > 1:
            c[:, 0] = P[:-1]
            c[:, 1:] = np.moveaxis(_segment_coeffs(
                P[1:] - P[:-1], V[:-1] * h, A[:-1] * h * h, V[1:] * h, A[1:] * h * h), 0, 1)
        for name, arr in (("knot_times", t), ("positions", P), ("velocities", V),
                          ("accelerations", A), ("coeffs", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def duration(self) -> float:
        return float(self.knot_times[-1])

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    @property
    def waypoints(self) -> np.ndarray:
        return self.positions

    @classmethod
    def hold(cls, q) -> "JointTrajectory":
        """Zero-duration trajectory resting at ``q``."""
        q = np.asarray(q, dtype=float)[None, :]
        return cls(np.zeros(1), q, np.zeros_like(q), np.zeros_like(q))

    def _locate(self, t: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.knot_times, t, side="right") - 1, 0, max(len(self.knot_times) - 2, 0))

    def sample_many(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < -TIME_EPS) or np.any(ts > self.duration + TIME_EPS):
            raise TrajectoryOutOfRange(f"time outside [0, {self.duration}]")
        if len(self.knot_times) == 1:
            q = np.repeat(self.positions, len(ts), axis=0)
            return q, np.zeros_like(q), np.zeros_like(q)
        ts = np.clip(ts, 0.0, self.duration)
        k = self._locate(ts)
        h = (self.knot_times[k + 1] - self.knot_times[k])[:, None]
        s = ((ts - self.knot_times[k])[:, None]) / h
        c = self.coeffs[k]  # (m, 6, n)
        q = c[:, 0] + s * (c[:, 1] + s * (c[:, 2] + s * (c[:, 3] + s * (c[:, 4] + s * c[:, 5]))))
        qd = c[:, 1] + s * (2 * c[:, 2] + s * (3 * c[:, 3] + s * (4 * c[:, 4] + s * 5 * c[:, 5])))
        qdd = 2 * c[:, 2] + s * (6 * c[:, 3] + s * (12 * c[:, 4] + s * 20 * c[:, 5]))
        return q, qd / h, qdd / (h * h)

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        q, qd, qdd = self.sample_many([t])
        return q[0], qd[0], qdd[0]

    def to_dict(self) -> dict:
        return {
            "knot_times": self.knot_times.tolist(),
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
            "accelerations": self.accelerations.tolist(),
            "coeffs_normalized": self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointTrajectory":
        return cls(np.array(d["knot_times"]), np.array(d["positions"]),
                   np.array(d["velocities"]), np.array(d["accelerations"]))

    def write_csv(self, path: str | Path, rate: float = 100.0) -> None:
        n = self.n_joints
        steps = max(int(math.floor(self.duration * rate + 1e-9)), 0)
        ts = np.arange(steps + 1) / rate
        if ts[-1] < self.duration:
            ts = np.append(ts, self.duration)
        q, qd, qdd = self.sample_many(ts)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
                       + [f"qdd{i}" for i in range(n)])
            for row in zip(ts, q, qd, qdd):
                w.writerow([repr(float(row[0]))] + [repr(float(v)) for v in np.concatenate(row[1:])])


def _knot_residual(h: np.ndarray, P: np.ndarray, V: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Jerk and snap mismatch at every interior knot, physical units."""
    c = _segment_coeffs(P[1:] - P[:-1], V[:-1] * h, A[:-1] * h * h, V[1:] * h, A[1:] * h * h)
    _, _, c3, c4, c5 = c
    jerk_start = 6 * c3 / h ** 3
    jerk_end = (6 * c3 + 24 * c4 + 60 * c5) / h ** 3
    snap_start = 24 * c4 / h ** 4
    snap_end = (24 * c4 + 120 * c5) / h ** 4
    return np.concatenate([jerk_end[:-1] - jerk_start[1:], snap_end[:-1] - snap_start[1:]])


def segment_durations(waypoints: np.ndarray, v_cap: float, floor: float = 0.1) -> np.ndarray:
    """Per segment, the largest joint displacement divided by ``v_cap`` (at least ``floor``)."""
    if v_cap <= 0:
        raise ValueError("velocity cap must be positive")
    dq = np.abs(np.diff(waypoints, axis=0)).max(axis=1)
    return np.maximum(dq / v_cap, floor)


def fit_spline(waypoints, durations: Sequence[float] | None = None, *, v_cap: float | None = None,
               min_segment: float = 0.1) -> JointTrajectory:
    """Clamped quintic spline through ``waypoints`` (rows are configurations).

    Timing is either explicit ``durations`` (one per segment) or derived from ``v_cap``.
    """
    W = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if W.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    if durations is None:
        if v_cap is None:
            raise ValueError("give segment durations or a velocity cap")
        h = segment_durations(W, v_cap, min_segment)
    else:
        h = np.asarray(durations, dtype=float)
        if h.shape != (W.shape[0] - 1,) or np.any(~np.isfinite(h)) or np.any(h <= 0):
            raise NonmonotonicTiming("segment durations must be positive, one per segment")
    K = h.shape[0]
    V = np.zeros_like(W)
    A = np.zeros_like(W)
    if K > 1:
        hh = h[:, None]
        m = 2 * (K - 1)
        # The residual is affine in the interior (v, a); build its matrix column by column.
        r0 = _knot_residual(hh, W, V, A)
        G = np.zeros((m, m))
        for j in range(K - 1):
            for kind in (0, 1):
                Vt, At = np.zeros_like(V[:, :1]), np.zeros_like(A[:, :1])
                (Vt if kind == 0 else At)[j + 1, 0] = 1.0
                Z = np.zeros_like(W[:, :1])
                G[:, 2 * j + kind] = _knot_residual(hh, Z, Vt, At)[:, 0]
        x = np.linalg.solve(G, -r0)
        V[1:-1] = x[0::2]
        A[1:-1] = x[1::2]
    return JointTrajectory(np.concatenate([[0.0], np.cumsum(h)]), W, V, A)


@dataclass
class ValidationReport:
    ok: bool
    min_position_margin: list[float]  # rad, per joint; negative = violation
    min_velocity_margin: list[float]  # rad/s, per joint
    violations: list[dict]
    samples: int

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "min_position_margin": self.min_position_margin,
            "min_velocity_margin": self.min_velocity_margin,
            "violations": self.violations,
            "samples": self.samples,
        }


def validate(traj: JointTrajectory, chain: KinematicChain, rate: float = 1000.0,
             obstacles: Sequence[tuple[Sequence[float], float]] = ()) -> ValidationReport:
    """Dense check of joint position and velocity limits (and optional tool-point spheres)."""
    steps = max(int(math.ceil(traj.duration * rate - 1e-9)), 0)
    ts = np.linspace(0.0, traj.duration, steps + 1)
    q, qd, _ = traj.sample_many(ts)
    lo, hi, vmax = chain.lower, chain.upper, chain.vel_limits
    pos_margin = np.minimum(q - lo, hi - q)
    vel_margin = vmax - np.abs(qd)
    violations = []
    for j in range(chain.n):
        for kind, margin, value in (("position", pos_margin[:, j], q[:, j]),
                                    ("velocity", vel_margin[:, j], qd[:, j])):
            bad = np.flatnonzero(margin < 0)
            if len(bad):
                worst = bad[np.argmin(margin[bad])]
                violations.append({"joint": j, "kind": kind, "t": float(ts[worst]),
                                   "value": float(value[worst]), "margin": float(margin[worst])})
    if obstacles:
        stride = max(1, int(rate // 50))
        for i in range(0, len(ts), stride):
            p = forward_kinematics(chain, q[i]).position
            for center, radius in obstacles:
                gap = float(np.linalg.norm(p - np.asarray(center))) - radius
                if gap < 0:
                    violations.append({"joint": None, "kind": "obstacle", "t": float(ts[i]),
                                       "value": gap, "margin": gap})
    return ValidationReport(
        ok=not violations,
        min_position_margin=pos_margin.min(axis=0).tolist(),
        min_velocity_margin=vel_margin.min(axis=0).tolist(),
        violations=violations,
        samples=len(ts),
    )


def plan_path(chain: KinematicChain, start_q, target: Pose6, via: Sequence[Pose6] = (), *,
              ik: IKParams = IKParams(), max_step: float = 0.35, max_depth: int = 6) -> list[np.ndarray]:
    """IK waypoints from ``start_q`` through ``via`` to ``target``.

    Each solve is seeded by the previous waypoint. When consecutive waypoints are more
    than ``max_step`` rad apart (any joint), intermediate poses interpolated in Cartesian
    space are inserted and solved in turn.
    """
    q0 = np.asarray(start_q, dtype=float)
    if not check_limits(chain, q0).ok:
        raise LimitViolation("start configuration is outside the joint limits")
    goals = list(via) + [target]
    path = [q0]

    def reach(q_from: np.ndarray, pose_from: Pose6, goal: Pose6, index: int, depth: int) -> list[np.ndarray]:
        try:
            q_goal = solve_ik(chain, goal, q_from, ik).q
        except NotConverged as exc:
            if depth >= max_depth or _close(pose_from, goal):
                raise IkFailed(index, exc) from exc
            q_goal = None
        if q_goal is not None and np.max(np.abs(q_goal - q_from)) <= max_step:
            return [q_goal]
        if depth >= max_depth:
            if q_goal is None:
                raise IkFailed(index)
            return [q_goal]
        mid = interpolate_pose(pose_from, goal, 0.5)
        first = reach(q_from, pose_from, mid, index, depth + 1)
        second = reach(first[-1], mid, goal, index, depth + 1)
        return first + second

    for index, goal in enumerate(goals):
        q_from = path[-1]
        pose_from = forward_kinematics(chain, q_from)
        for q in reach(q_from, pose_from, goal, index, 0):
            if not check_limits(chain, q).ok:
                raise LimitViolation(f"waypoint for goal {index} leaves the joint limits")
            if not np.array_equal(q, path[-1]):
                path.append(q)
    return path


def _close(a: Pose6, b: Pose6) -> bool:
    return float(np.linalg.norm(a.position - b.position)) < 1e-3 and geodesic_distance(a.rotation, b.rotation) < 1e-2
