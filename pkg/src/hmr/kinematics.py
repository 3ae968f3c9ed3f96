"""Serial-chain kinematics (standard Denavit-Hartenberg), geometric Jacobian and
damped-least-squares inverse kinematics with joint limits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, NotConverged, Unreachable
from .spatial import Pose6, is_rotation, rotation_error


@dataclass(frozen=True)
class Joint:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    lo: float = -np.pi
    hi: float = np.pi
    vel: float = 2.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"joint limits must satisfy lo < hi, got [{self.lo}, {self.hi}]")


def dh_matrix(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """Standard DH link transform Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple[Joint, ...]
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = ""
    home: np.ndarray | None = None

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ConfigError("a chain needs at least one joint")
        T = np.asarray(self.tool, dtype=float).reshape(4, 4)
        if not is_rotation(T[:3, :3]):
            raise ConfigError("tool rotation is not in SO(3)")
        T.setflags(write=False)
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "tool", T)
        if self.home is not None:
            home = np.asarray(self.home, dtype=float)
            if home.shape != (len(self.joints),):
                raise ConfigError("home configuration has the wrong length")
            object.__setattr__(self, "home", home)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lo for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.hi for j in self.joints])

    @property
    def vel_limits(self) -> np.ndarray:
        return np.array([j.vel for j in self.joints])

    @property
    def midrange(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        conv = data.get("convention", "dh_standard")
        if conv != "dh_standard":
            raise ConfigError(f"unsupported convention {conv!r}")
        joints = tuple(
            Joint(j["a"], j["alpha"], j["d"], j.get("theta_offset", 0.0),
                  j.get("lo", -np.pi), j.get("hi", np.pi), j.get("vel", 2.0))
            for j in data["joints"]
        )
        tool = np.eye(4)
        t = data.get("tool") or {}
        if "rotation" in t:
            tool[:3, :3] = np.asarray(t["rotation"], dtype=float)
        if "translation" in t:
            tool[:3, 3] = np.asarray(t["translation"], dtype=float)
        return cls(joints, tool, data.get("name", ""), data.get("home"))

    @classmethod
    def load(cls, path: str | Path) -> "KinematicChain":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def default(cls) -> "KinematicChain":
        return cls.load(default_chain_path())


def default_chain_path() -> Path:
    return Path(str(resources.files("hmr") / "data" / "chain_default.json"))


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise DimensionMismatch(f"expected {chain.n} joint values, got shape {q.shape}")
    return q


def link_frames(chain: KinematicChain, q) -> list[np.ndarray]:
    """Base-frame transforms of frames 0..n, with the tool frame appended."""
    q = _check_q(chain, q)
    T = np.eye(4)
    frames = [T]
    for j, qi in zip(chain.joints, q):
        T = T @ dh_matrix(j.a, j.alpha, j.d, qi + j.theta_offset)
        frames.append(T)
    frames.append(T @ chain.tool)
    return frames


def fk_matrix(chain: KinematicChain, q) -> np.ndarray:
    return link_frames(chain, q)[-1]


def forward_kinematics(chain: KinematicChain, q) -> Pose6:
    return Pose6.from_matrix(fk_matrix(chain, q))


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6xn geometric Jacobian at the tool point, base frame; rows are (v, w)."""
    frames = link_frames(chain, q)
    p_tool = frames[-1][:3, 3]
    J = np.zeros((6, chain.n))
    for i in range(chain.n):
        z = frames[i][:3, 2]
        o = frames[i][:3, 3]
        J[:3, i] = np.cross(z, p_tool - o)
        J[3:, i] = z
    return J


@dataclass(frozen=True)
class JointCheck:
    within: np.ndarray  # per-joint bool

    @property
    def ok(self) -> bool:
        return bool(self.within.all())

    @property
    def violations(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~self.within)]


def check_limits(chain: KinematicChain, q) -> JointCheck:
    q = _check_q(chain, q)
    return JointCheck((q >= chain.lower) & (q <= chain.upper))


@dataclass(frozen=True)
class IKParams:
    damping: float = 0.05
    max_iters: int = 200
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    nullspace_bias: float = 0.1
    max_step: float = 0.5  # rad, cap on the per-iteration joint update norm
    nullspace_fade: float = 0.05  # task residual below which the null-space pull tapers off
    stall_window: int = 10
    stall_rel: float = 1e-10


@dataclass(frozen=True)
class IKSolution:
    q: np.ndarray
    iterations: int
    pos_err: float
    rot_err: float


def pose_error(chain: KinematicChain, q, target: Pose6) -> np.ndarray:
    T = fk_matrix(chain, q)
    return np.concatenate([target.position - T[:3, 3], rotation_error(target.rotation, T[:3, :3])])


def solve_ik(chain: KinematicChain, target: Pose6, seed_q, params: IKParams = IKParams()) -> IKSolution:
    """Damped least squares with a midrange null-space bias and per-step limit clamping.

    Raises :class:`Unreachable` when the residual stalls and :class:`NotConverged`
    after ``max_iters``.
    """
    q = chain.clamp(_check_q(chain, seed_q).copy())
    lam2 = params.damping ** 2
    history: list[float] = []
    for it in range(params.max_iters + 1):
        e = pose_error(chain, q, target)
        ep, er = float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:]))
        if ep <= params.pos_tol and er <= params.rot_tol:
            return IKSolution(q, it, ep, er)
        if it == params.max_iters:
            break
        residual = float(np.linalg.norm(e))
        history.append(residual)
        w = params.stall_window
        if len(history) > w and history[-1] > history[-1 - w] * (1.0 - params.stall_rel):
            raise Unreachable(residual, q, it)
        dq = _clamped_step(chain, q, jacobian(chain, q), e, lam2, params)
        q = chain.clamp(q + dq)
    e = pose_error(chain, q, target)
    raise NotConverged(float(np.linalg.norm(e)), q, params.max_iters)


def _clamped_step(chain: KinematicChain, q: np.ndarray, J: np.ndarray, e: np.ndarray,
                  lam2: float, params: IKParams) -> np.ndarray:
    """One DLS + null-space update. Joints that would cross a limit are pinned to it
    and the remaining joints are re-solved against the leftover error."""
    lo, hi = chain.lower, chain.upper
    free = np.ones(chain.n, dtype=bool)
    pinned = np.zeros(chain.n)
    dq = pinned
    for _ in range(chain.n):
        Jf = J[:, free]
        ef = e - J @ pinned
        dq = pinned.copy()
        step = Jf.T @ np.linalg.solve(Jf @ Jf.T + lam2 * np.eye(6), ef)
        if params.nullspace_bias:
            N = np.eye(Jf.shape[1]) - np.linalg.pinv(Jf) @ Jf
            # gradient of sum(((q - mid) / half_range)^2) / 2, i.e. range-normalized
            pull = (chain.midrange - q) / ((chain.upper - chain.lower) / 2.0) ** 2
            # fades out near convergence so second-order drift cannot stall the task
            fade = min(1.0, float(np.linalg.norm(e)) / params.nullspace_fade)
            step = step + N @ (params.nullspace_bias * fade * pull[free])
        dq[free] = step
        norm = np.linalg.norm(dq)
        if norm > params.max_step:
            dq *= params.max_step / norm
        q_new = q + dq
        over = free & ((q_new < lo) | (q_new > hi))
        if not over.any():
            break
        pinned[over] = np.clip(q_new, lo, hi)[over] - q[over]
        free &= ~over
        if not free.any():
            dq = pinned
            break
    return dq
