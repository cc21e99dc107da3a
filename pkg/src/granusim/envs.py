"""Task environments and benchmark scenes: bulldozing, excavation, and
the spinning-gear tower.

Environments follow the reset/step convention: ``reset(seed)`` returns an
observation; ``step(action)`` returns (observation, reward, done, info).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sdf
from .kinematics import (
    ChainLink,
    ChainLinkDriver,
    KinematicChain,
    SpinDriver,
    TrackSteeringDriver,
    TrackSteeringState,
    make_pose,
)
from .meshes import make_gear_mesh
from .render import DepthCamera, render_depth
from .scene import (
    BoxRegion,
    CyclicBoundary,
    CylinderRegion,
    MaterialParams,
    ParticleSet,
    RigidBody,
    Scene,
    seed_particles_grid,
)
from .stepper import PipelineMode, step


@dataclass
class GoalBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if not np.all(self.min < self.max):
            raise ValueError("goal box requires min < max componentwise")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.min) & (p <= self.max), axis=1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance to the closest box point (0 inside)."""
        p = np.atleast_2d(points)
        d = np.maximum(np.maximum(self.min - p, p - self.max), 0.0)
        return np.linalg.norm(d, axis=1)


def bulldozer_reward(positions: np.ndarray, goal: GoalBox) -> float:
    """+100/n per particle inside the goal box (boundary inclusive),
    -d/n per particle outside, d its distance to the box."""
    p = np.atleast_2d(positions)
    n = len(p)
    if n == 0:
        raise ValueError("reward is undefined for zero particles")
    inside = goal.contains(p)
    d = goal.distance(p)
    return float(np.where(inside, 100.0 / n, -d / n).sum())


@dataclass
class EnvObservation:
    ego: np.ndarray  # (36, 36) float32 depth, meters
    sky: np.ndarray  # (36, 72) float32 depth, meters
    pose: np.ndarray  # (x, y, yaw)


@dataclass
class BulldozerEnvConfig:
    n_particles: int = 400
    radius: float = 0.05
    friction: float = 0.5
    timestep: float = 2e-3
    frame_skip: int = 10  # physics substeps per control step
    time_budget: float = 20.0  # simulated seconds per episode
    scale_v: float = 1.0
    scale_omega: float = 1.0
    bed_min: tuple = (-1.0, -1.0, 0.05)
    bed_max: tuple = (1.0, 1.0, 0.45)
    goal_min: tuple = (1.5, -1.0, 0.0)
    goal_max: tuple = (3.0, 1.0, 1.0)
    blade_half_extents: tuple = (0.05, 0.5, 0.25)
    blade_offset: float = 0.45  # blade center ahead of the vehicle frame
    jitter: float = 0.3
    sky_extent: tuple = (8.0, 4.0)
    sky_height: float = 6.0
    far: float = 20.0


class BulldozerEnv:
    """Tracked vehicle pushing granular material into a goal box."""

    action_shape = (2,)

    def __init__(self, config: BulldozerEnvConfig | None = None,
                 mode: PipelineMode = PipelineMode.TWO_LOOPS_SPLIT):
        self.config = config or BulldozerEnvConfig()
        self.mode = mode
        self.scene: Scene | None = None
        self._steps = 0
        cfg = self.config
        self.episode_length = int(round(cfg.time_budget / (cfg.frame_skip * cfg.timestep)))
        self.goal = GoalBox(cfg.goal_min, cfg.goal_max)
        # ego camera: from the cockpit, looking forward and slightly down
        tilt = make_pose(
            np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]).T,
            np.array([-0.2, 0.0, 0.8]),
        )
        pitch = 0.35
        tilt[:3, :3] = tilt[:3, :3] @ np.array(
            [
                [np.cos(pitch), 0.0, -np.sin(pitch)],
                [0.0, 1.0, 0.0],
                [np.sin(pitch), 0.0, np.cos(pitch)],
            ]
        )
        self.ego_camera = DepthCamera(
            kind="perspective", pose=tilt, width=36, height=36, fov=np.pi / 2.5, far=cfg.far
        )
        sky_pose = make_pose(
            np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
            np.array([0.0, 0.0, cfg.sky_height]),
        )
        self.sky_camera = DepthCamera(
            kind="orthographic",
            pose=sky_pose,
            width=72,
            height=36,
            extent=cfg.sky_extent,
            far=cfg.far,
        )

    def _build_scene(self, seed: int) -> Scene:
        cfg = self.config
        rng = np.random.default_rng(seed)
        params = MaterialParams(
            radius=cfg.radius, friction=cfg.friction, timestep=cfg.timestep
        )
        particles = seed_particles_grid(
            BoxRegion(np.array(cfg.bed_min), np.array(cfg.bed_max)),
            cfg.radius,
            jitter=cfg.jitter,
            rng=rng,
        )
        if particles.count > cfg.n_particles:
            particles = ParticleSet(
                particles.positions[: cfg.n_particles],
                particles.velocities[: cfg.n_particles],
            )
        ground = RigidBody(sdf.HalfSpace(), name="ground")
        self.driver = TrackSteeringDriver(
            state=TrackSteeringState(x=-2.0, y=0.0, theta=0.0),
            z=0.0,
            scale_v=cfg.scale_v,
            scale_omega=cfg.scale_omega,
            base_pose=make_pose(
                np.eye(3), np.array([cfg.blade_offset, 0.0, cfg.blade_half_extents[2]])
            ),
        )
        blade = RigidBody(
            sdf.Box(np.array(cfg.blade_half_extents)), driver=self.driver, name="blade"
        )
        return Scene(particles=particles, bodies=[ground, blade], params=params, seed=seed)

    def _observe(self) -> EnvObservation:
        ego_pose = self.driver.pose_at(self.scene.t)
        # camera rides the vehicle frame, not the blade offset
        vehicle = ego_pose.copy()
        vehicle[:3, 3] -= ego_pose[:3, :3] @ self.driver.base_pose[:3, 3]
        ego = render_depth(
            self.scene,
            DepthCamera(
                kind="perspective",
                pose=vehicle @ self.ego_camera.pose,
                width=36,
                height=36,
                fov=self.ego_camera.fov,
                far=self.config.far,
            ),
        )
        sky = render_depth(self.scene, self.sky_camera)
        st = self.driver.state
        return EnvObservation(
            ego=ego, sky=sky, pose=np.array([st.x, st.y, st.theta])
        )

    def reset(self, seed: int = 0) -> EnvObservation:
        self.scene = self._build_scene(seed)
        self._steps = 0
        return self._observe()

    def step(self, action) -> tuple[EnvObservation, float, bool, dict]:
        if self.scene is None:
            raise RuntimeError("step called before reset")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != self.action_shape:
            raise ValueError(f"action shape must be {self.action_shape}, got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action must be finite")
        self.driver.command(action)
        report = None
        for _ in range(self.config.frame_skip):
            self.driver.advance(self.scene.params.timestep)
            _, report = step(self.scene, self.mode)
        obs = self._observe()
        reward = bulldozer_reward(self.scene.particles.positions, self.goal)
        self._steps += 1
        done = self._steps >= self.episode_length
        info = {
            "n_contacts": report.n_contacts,
            "max_penetration": report.max_penetration,
            "kinetic_energy": report.kinetic_energy,
            "t": self.scene.t,
        }
        return obs, reward, done, info

    def close(self) -> None:
        self.scene = None


class ExcavationEnv:
    """Velocity-controlled 7-joint arm with a scoop over a particle bed.

    Task-less sandbox: observations and actions only, reward is always 0.
    """

    action_shape = (7,)

    def __init__(self, n_particles: int = 300, frame_skip: int = 10,
                 time_budget: float = 20.0, timestep: float = 2e-3):
        self.frame_skip = frame_skip
        self.n_particles = n_particles
        self.timestep = timestep
        self.episode_length = int(round(time_budget / (frame_skip * timestep)))
        self.scene: Scene | None = None
        self._steps = 0

    def _build_chain(self) -> KinematicChain:
        up = np.array([0.0, 0.0, 1.0])
        side = np.array([0.0, 1.0, 0.0])
        links = []
        axes = [up, side, up, side, up, side, np.array([1.0, 0.0, 0.0])]
        heights = [0.3, 0.3, 0.25, 0.25, 0.2, 0.15, 0.1]
        for k in range(7):
            links.append(
                ChainLink(
                    parent=k - 1,
                    origin=make_pose(np.eye(3), np.array([0.0, 0.0, heights[k]])),
                    joint_type="revolute",
                    axis=axes[k],
                    velocity_limit=1.0,
                )
            )
        return KinematicChain(links)

    def reset(self, seed: int = 0) -> EnvObservation:
        rng = np.random.default_rng(seed)
        params = MaterialParams(radius=0.05, timestep=self.timestep)
        particles = seed_particles_grid(
            BoxRegion(np.array([0.2, -0.6, 0.05]), np.array([1.4, 0.6, 0.35])),
            params.radius,
            jitter=0.3,
            rng=rng,
        )
        if particles.count > self.n_particles:
            particles = ParticleSet(
                particles.positions[: self.n_particles],
                particles.velocities[: self.n_particles],
            )
        self.chain = self._build_chain()
        scoop = RigidBody(
            sdf.Box(np.array([0.15, 0.1, 0.04])),
            driver=ChainLinkDriver(self.chain, 6),
            name="scoop",
        )
        ground = RigidBody(sdf.HalfSpace(), name="ground")
        self.scene = Scene(particles=particles, bodies=[ground, scoop], params=params, seed=seed)
        self._steps = 0
        return self._observe()

    def _observe(self) -> EnvObservation:
        poses, _ = self.chain.fk()
        end = poses[-1]
        yaw = np.arctan2(end[1, 0], end[0, 0])
        sky = render_depth(
            self.scene,
            DepthCamera(
                kind="orthographic",
                pose=make_pose(
                    np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
                    np.array([0.7, 0.0, 4.0]),
                ),
                width=72,
                height=36,
                extent=(4.0, 2.0),
                far=10.0,
            ),
        )
        ego = render_depth(
            self.scene,
            DepthCamera(
                kind="perspective",
                pose=end @ make_pose(
                    np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]).T,
                    np.array([0.0, 0.0, 0.2]),
                ),
                width=36,
                height=36,
                far=10.0,
            ),
        )
        return EnvObservation(
            ego=ego, sky=sky, pose=np.array([end[0, 3], end[1, 3], yaw])
        )

    def step(self, action) -> tuple[EnvObservation, float, bool, dict]:
        if self.scene is None:
            raise RuntimeError("step called before reset")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != self.action_shape:
            raise ValueError(f"action shape must be {self.action_shape}, got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action must be finite")
        a = np.clip(action, -1.0, 1.0)
        limits = np.array([l.velocity_limit for l in self.chain.links])
        report = None
        for _ in range(self.frame_skip):
            self.chain.advance(a * limits, self.scene.params.timestep)
            _, report = step(self.scene)
        self._steps += 1
        done = self._steps >= self.episode_length
        info = {"n_contacts": report.n_contacts, "t": self.scene.t}
        return self._observe(), 0.0, done, info

    def close(self) -> None:
        self.scene = None


def make_column_scene(
    n_particles: int,
    r: float = 0.05,
    aspect: float = 4.0,
    params: MaterialParams | None = None,
    jitter: float = 0.2,
    seed: int = 0,
) -> Scene:
    """Particles inside a tall cylindrical column with a floor.

    The column radius is chosen so the requested particle count fills a
    cylinder ``aspect`` times taller than wide, maximizing interparticle
    collision candidates once the material settles.
    """
    params = params or MaterialParams(radius=r, friction=0.5)
    r = params.radius
    # volume heuristic: lattice packing, one particle per (2r)^3 cell
    vol = n_particles * (2.0 * r) ** 3
    radius = max((vol / (np.pi * 2.0 * aspect)) ** (1.0 / 3.0), 3.0 * r)
    height = 2.0 * aspect * radius
    rng = np.random.default_rng(seed)
    particles = seed_particles_grid(
        CylinderRegion([0.0, 0.0], radius, 0.0, height), r, jitter=jitter, rng=rng
    )
    while particles.count < n_particles:
        height *= 1.5
        particles = seed_particles_grid(
            CylinderRegion([0.0, 0.0], radius, 0.0, height), r, jitter=jitter,
            rng=np.random.default_rng(seed),
        )
    particles = ParticleSet(
        particles.positions[:n_particles], particles.velocities[:n_particles]
    )
    bodies = [
        RigidBody(sdf.HalfSpace(), name="floor",
                  spec={"geometry": {"type": "half_space"}}),
        RigidBody(sdf.Tube(radius), name="wall",
                  spec={"geometry": {"type": "tube", "radius": radius}}),
    ]
    return Scene(particles=particles, bodies=bodies, params=params, seed=seed)


def make_gear_tower_scene(
    n_bodies: int,
    n_particles: int,
    rng_seed: int = 0,
    container_radius: float = 2.0,
    r: float = 0.05,
    grid_divisions: int = 32,
    params: MaterialParams | None = None,
) -> Scene:
    """Cylindrical containment tower with spinning helical gears and a
    cyclic vertical boundary.

    All gears share a single baked distance grid; each spins about the
    tower axis at its own uniformly random rate.
    """
    if n_bodies < 0 or n_particles < 0:
        raise ValueError("n_bodies and n_particles must be >= 0")
    rng = np.random.default_rng(rng_seed)
    params = params or MaterialParams(radius=r, friction=0.3)
    r = params.radius

    # stack enough particle layers to reach the requested count
    per_layer = max(
        seed_particles_grid(
            CylinderRegion([0.0, 0.0], container_radius, 0.0, 2.0 * r), r
        ).count,
        1,
    )
    layers = max(int(np.ceil(n_particles / per_layer)), 1)
    height = layers * 2.0 * r + 2.0 * r
    particles = seed_particles_grid(
        CylinderRegion([0.0, 0.0], container_radius, 0.0, height), r
    )
    particles = ParticleSet(
        particles.positions[:n_particles], particles.velocities[:n_particles]
    )

    bodies = [RigidBody(sdf.Tube(container_radius), name="container",
                        spec={"geometry": {"type": "tube", "radius": container_radius}})]
    if n_bodies > 0:
        verts, faces = make_gear_mesh(tip_radius=0.8 * container_radius,
                                      root_radius=0.5 * container_radius)
        spacing = (verts.max(0) - verts.min(0)).max() / grid_divisions
        grid = sdf.bake_mesh_sdf(verts, faces, spacing)
        z_top = max(height, 1.0)
        for k in range(n_bodies):
            rate = rng.uniform(0.5, 2.0) * (1 if rng.uniform() < 0.5 else -1)
            z_k = (k + 0.5) * z_top / n_bodies
            bodies.append(
                RigidBody(
                    grid,
                    driver=SpinDriver(
                        axis=np.array([0.0, 0.0, 1.0]),
                        rate=rate,
                        base_pose=make_pose(np.eye(3), np.array([0.0, 0.0, z_k])),
                        center=np.array([0.0, 0.0, z_k]),
                    ),
                    name=f"gear{k}",
                )
            )
    boundary = CyclicBoundary(z_min=-2.0 * r, z_max=height + 2.0 * r)
    return Scene(
        particles=particles, bodies=bodies, params=params, boundary=boundary, seed=rng_seed
    )
