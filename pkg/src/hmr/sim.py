"""Kinematic execution with per-joint feedforward + PD tracking.

Each joint is a unit-inertia double integrator ``qdd = u + disturbance`` driven by
``u = qdd_ref + kp (q_ref - q) + kd (qd_ref - qd)``. The closed loop is stepped with
semi-implicit Euler in tracking-error coordinates; the reference itself comes from
the closed-form spline, so an undisturbed run that starts on the reference stays on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch
from .kinematics import KinematicChain, forward_kinematics
from .spatial import Pose6
from .trajectory import JointTrajectory

Disturbance = Union[None, np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True, eq=False)
class ControllerGains:
    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("gains must be positive")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @classmethod
    def uniform(cls, n: int, kp: float = 100.0, kd: float = 20.0) -> "ControllerGains":
        return cls(np.full(n, kp), np.full(n, kd))

    @classmethod
    def critically_damped(cls, n: int, kp: float = 100.0) -> "ControllerGains":
        return cls(np.full(n, kp), np.full(n, 2.0 * math.sqrt(kp)))


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    max_err: np.ndarray = field(default=None)
    sq_err: np.ndarray = field(default=None)  # running sum of squared position error
    steps: int = 0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if self.max_err is None:
            object.__setattr__(self, "max_err", np.zeros_like(q))
        if self.sq_err is None:
            object.__setattr__(self, "sq_err", np.zeros_like(q))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))

    @property
    def rms_err(self) -> np.ndarray:
        return np.sqrt(self.sq_err / self.steps) if self.steps else np.zeros_like(self.q)


def _disturbance_at(disturbance: Disturbance, t: float, n: int) -> np.ndarray:
    if disturbance is None:
        return np.zeros(n)
    if callable(disturbance):
        return np.broadcast_to(np.asarray(disturbance(t), dtype=float), (n,))
    return np.broadcast_to(np.asarray(disturbance, dtype=float), (n,))


def step(state: SimState, traj: JointTrajectory, gains: ControllerGains, dt: float,
         disturbance: Disturbance = None) -> SimState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = traj.n_joints
    if state.q.shape != (n,) or state.qd.shape != (n,):
        raise DimensionMismatch(f"state has {state.q.shape} joints, trajectory has {n}")
    t1 = state.t + dt
    if t1 > traj.duration + 1e-9:
        raise ValueError("step would run past the end of the trajectory")
    t1 = min(t1, traj.duration)
    q_ref, qd_ref, _ = traj.sample(state.t)
    e = state.q - q_ref
    ed = state.qd - qd_ref
    # plant minus reference: edd = -kp e - kd ed + disturbance
    edd = -gains.kp * e - gains.kd * ed + _disturbance_at(disturbance, state.t, n)
    ed = ed + dt * edd
    e = e + dt * ed
    q1_ref, qd1_ref, _ = traj.sample(t1)
    err = np.abs(e)
    return SimState(
        t=t1,
        q=q1_ref + e,
        qd=qd1_ref + ed,
        max_err=np.maximum(state.max_err, err),
        sq_err=state.sq_err + err * err,
        steps=state.steps + 1,
    )


@dataclass
class ExecutionReport:
    max_err_rad: list[float]
    rms_err_rad: list[float]
    final_pos_err_m: float | None
    goal_reached: bool | None
    steps: int
    final_q: list[float]
    final_pose: dict | None = None
    log: list[list[float]] | None = None

    def to_dict(self) -> dict:
        d = {
            "max_err_rad": self.max_err_rad,
            "rms_err_rad": self.rms_err_rad,
            "final_pos_err_m": self.final_pos_err_m,
            "goal_reached": self.goal_reached,
            "steps": self.steps,
            "final_q": self.final_q,
        }
        if self.final_pose is not None:
            d["final_pose"] = self.final_pose
        return d


def run_tracking(traj: JointTrajectory, gains: ControllerGains, dt: float = 1e-3,
                 disturbance: Disturbance = None, *, chain: KinematicChain | None = None,
                 goal: Pose6 | None = None, goal_tol: float = 0.002,
                 initial_q: np.ndarray | None = None, initial_qd: np.ndarray | None = None,
                 keep_log: bool = False) -> ExecutionReport:
    """Simulate the whole trajectory. With a ``chain``, the final end-effector position is
    recomputed by forward kinematics and compared to ``goal`` (default: the pose at the
    last waypoint)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    q0, qd0, _ = traj.sample(0.0)
    state = SimState(0.0, q0 if initial_q is None else initial_q, qd0 if initial_qd is None else initial_qd)
    n_steps = int(math.ceil(traj.duration / dt - 1e-9)) if traj.duration > 0 else 0
    log = [] if keep_log else None
    for k in range(n_steps):
        h = min(dt, traj.duration - state.t)
        if h <= 0:
            break
        state = step(state, traj, gains, h, disturbance)
        if log is not None:
            log.append([state.t, *state.q.tolist()])

    final_pos_err = goal_reached = final_pose = None
    if chain is not None:
        if goal is None:
            goal = forward_kinematics(chain, traj.positions[-1])
        pose = forward_kinematics(chain, state.q)
        final_pos_err = float(np.linalg.norm(pose.position - goal.position))
        goal_reached = final_pos_err <= goal_tol
        final_pose = pose.to_dict()
    return ExecutionReport(
        max_err_rad=state.max_err.tolist(),
        rms_err_rad=state.rms_err.tolist(),
        final_pos_err_m=final_pos_err,
        goal_reached=goal_reached,
        steps=state.steps,
        final_q=state.q.tolist(),
        final_pose=final_pose,
        log=log,
    )
