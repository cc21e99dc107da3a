"""Rheonomic motion sources: SE(3) utilities, scripted drivers, track
steering, and joint-velocity-driven kinematic chains.

Body twists are reported as (omega, v_origin): world-frame angular
velocity plus the world velocity of the body-frame origin point, so the
velocity of a world point p on the body is v_origin + omega x (p - pos).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def identity_pose() -> np.ndarray:
    return np.eye(4)


def make_pose(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def se3_compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def se3_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = w / theta
    K = skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return (
        theta
        / (2.0 * np.sin(theta))
        * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    )


def skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def se3_exp(twist: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Exponential of a twist (omega, v) scaled by dt."""
    twist = np.asarray(twist, dtype=np.float64)
    w = twist[:3] * dt
    v = twist[3:] * dt
    theta = np.linalg.norm(w)
    R = so3_exp(w)
    if theta < 1e-12:
        V = np.eye(3) + skew(w) / 2.0
    else:
        K = skew(w / theta)
        V = (
            np.eye(3)
            + (1.0 - np.cos(theta)) / theta * K
            + (theta - np.sin(theta)) / theta * (K @ K)
        )
    return make_pose(R, V @ v)


def reorthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def rotation_error(R: np.ndarray) -> float:
    return float(np.abs(R.T @ R - np.eye(3)).max())


# ---------------------------------------------------------------------------
# Motion drivers


class MotionDriver:
    """Pose and twist as pure functions of time and commanded inputs."""

    def pose_at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def twist_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(omega, v_origin) of the body at time t."""
        raise NotImplementedError


@dataclass
class StaticDriver(MotionDriver):
    pose: np.ndarray = field(default_factory=identity_pose)

    def pose_at(self, t):
        return self.pose

    def twist_at(self, t):
        return np.zeros(3), np.zeros(3)


@dataclass
class SpinDriver(MotionDriver):
    """Constant-rate rotation about a world axis through ``center``."""

    axis: np.ndarray
    rate: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_pose: np.ndarray = field(default_factory=identity_pose)
    phase: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        self.axis = a / np.linalg.norm(a)
        self.center = np.asarray(self.center, dtype=np.float64)

    def pose_at(self, t):
        R = so3_exp(self.axis * (self.rate * t + self.phase))
        spin = make_pose(R, self.center - R @ self.center)
        return spin @ self.base_pose

    def twist_at(self, t):
        omega = self.axis * self.rate
        pos = self.pose_at(t)[:3, 3]
        return omega, np.cross(omega, pos - self.center)


@dataclass
class ScriptedDriver(MotionDriver):
    """Arbitrary time -> SE(3) sampler; twist by central differences."""

    sampler: object  # callable t -> 4x4 pose
    fd_step: float = 1e-5

    def pose_at(self, t):
        return self.sampler(t)

    def twist_at(self, t):
        h = self.fd_step
        Ta = self.sampler(t - h)
        Tb = self.sampler(t + h)
        omega = so3_log(Tb[:3, :3] @ Ta[:3, :3].T) / (2.0 * h)
        v = (Tb[:3, 3] - Ta[:3, 3]) / (2.0 * h)
        return omega, v


@dataclass
class TrackSteeringState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0


def track_steering_advance(
    state: TrackSteeringState,
    action: np.ndarray,
    dt: float,
    scale_v: float = 1.0,
    scale_omega: float = 1.0,
) -> TrackSteeringState:
    """Advance a tracked-vehicle state by one control step.

    Actions live in [-1,1]^2: (forward velocity, yaw rate).  Heading is
    integrated before position (semi-implicit), so the position advance
    uses the post-update heading.
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    theta = state.theta + dt * scale_omega * a[1]
    x = state.x + dt * scale_v * a[0] * np.cos(theta)
    y = state.y + dt * scale_v * a[0] * np.sin(theta)
    return TrackSteeringState(x=x, y=y, theta=theta)


@dataclass
class TrackSteeringDriver(MotionDriver):
    """Command-driven planar vehicle; z, roll, and pitch stay fixed."""

    state: TrackSteeringState = field(default_factory=TrackSteeringState)
    z: float = 0.0
    scale_v: float = 1.0
    scale_omega: float = 1.0
    base_pose: np.ndarray = field(default_factory=identity_pose)
    _action: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def command(self, action: np.ndarray) -> None:
        self._action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)

    def advance(self, dt: float) -> None:
        self.state = track_steering_advance(
            self.state, self._action, dt, self.scale_v, self.scale_omega
        )

    def pose_at(self, t):
        R = so3_exp(np.array([0.0, 0.0, self.state.theta]))
        base = make_pose(R, np.array([self.state.x, self.state.y, self.z]))
        return base @ self.base_pose

    def twist_at(self, t):
        omega = np.array([0.0, 0.0, self.scale_omega * self._action[1]])
        heading = np.array([np.cos(self.state.theta), np.sin(self.state.theta), 0.0])
        v_vehicle = self.scale_v * self._action[0] * heading
        # body origin may be offset from the vehicle frame by base_pose
        pos = self.pose_at(t)[:3, 3]
        ref = np.array([self.state.x, self.state.y, self.z])
        return omega, v_vehicle + np.cross(omega, pos - ref)


# ---------------------------------------------------------------------------
# Kinematic chains


@dataclass
class ChainLink:
    parent: int  # -1 for world
    origin: np.ndarray  # fixed parent-to-joint transform, 4x4
    joint_type: str  # "revolute" | "prismatic"
    axis: np.ndarray  # unit, in the joint frame
    velocity_limit: float = np.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        a = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("joint axis must be nonzero")
        self.axis = a / n
        if self.joint_type not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint type {self.joint_type!r}")


class KinematicChain:
    """Velocity-controlled kinematic tree rooted at the world frame."""

    def __init__(self, links: list[ChainLink], base_pose: np.ndarray | None = None):
        for idx, link in enumerate(links):
            if not (-1 <= link.parent < idx):
                raise ValueError(
                    f"link {idx}: parent {link.parent} does not precede it (tree required)"
                )
        self.links = links
        self.base_pose = identity_pose() if base_pose is None else np.asarray(base_pose)
        self.q = np.zeros(len(links))
        self.qd = np.zeros(len(links))

    def fk(self, q: np.ndarray | None = None):
        """Link poses and twists for joint positions q.

        Returns (poses, twists): 4x4 world poses plus (omega, v_origin)
        pairs so particle contacts see correct surface velocities.
        """
        q = self.q if q is None else np.asarray(q, dtype=np.float64)
        poses: list[np.ndarray] = []
        twists: list[tuple[np.ndarray, np.ndarray]] = []
        for idx, link in enumerate(self.links):
            parent_pose = self.base_pose if link.parent < 0 else poses[link.parent]
            joint_frame = parent_pose @ link.origin
            axis_w = joint_frame[:3, :3] @ link.axis
            if link.joint_type == "revolute":
                motion = make_pose(so3_exp(link.axis * q[idx]), np.zeros(3))
                j_omega = axis_w * self.qd[idx]
                j_v0 = -np.cross(j_omega, joint_frame[:3, 3])
            else:
                motion = make_pose(np.eye(3), link.axis * q[idx])
                j_omega = np.zeros(3)
                j_v0 = axis_w * self.qd[idx]
            poses.append(joint_frame @ motion)
            if link.parent < 0:
                p_omega, p_v0 = np.zeros(3), np.zeros(3)
            else:
                p_omega, p_v0 = twists[link.parent]
            twists.append((p_omega + j_omega, p_v0 + j_v0))
        # convert (omega, v at world origin) -> (omega, v at link origin)
        out_twists = [
            (w, v0 + np.cross(w, poses[i][:3, 3])) for i, (w, v0) in enumerate(twists)
        ]
        return poses, out_twists

    def advance(self, qd_cmd: np.ndarray, dt: float) -> None:
        limits = np.array([l.velocity_limit for l in self.links])
        self.qd = np.clip(np.asarray(qd_cmd, dtype=np.float64), -limits, limits)
        self.q = self.q + dt * self.qd


@dataclass
class ChainLinkDriver(MotionDriver):
    """Drives a rigid body from one link of a kinematic chain."""

    chain: KinematicChain
    link_index: int

    def pose_at(self, t):
        poses, _ = self.chain.fk()
        return poses[self.link_index]

    def twist_at(self, t):
        _, twists = self.chain.fk()
        return twists[self.link_index]
