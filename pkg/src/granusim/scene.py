"""Simulation state and parameters: particles, bodies, material, and
scene-description loading.

Scenes are described by a YAML document (see README for the schema) and
validated on load; every invariant violation is reported by name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import meshes, sdf
from .kinematics import (
    ChainLink,
    ChainLinkDriver,
    KinematicChain,
    MotionDriver,
    SpinDriver,
    StaticDriver,
    TrackSteeringDriver,
    TrackSteeringState,
    identity_pose,
    make_pose,
    rotation_error,
    so3_exp,
)

DEFAULT_PARTICLE_MASS = 1.0  # kg; source material does not state one


class SceneError(ValueError):
    pass


class SceneParseError(SceneError):
    pass


class ValidationError(SceneError):
    pass


@dataclass
class MaterialParams:
    """Shared material and solver parameters (homogeneous media)."""

    radius: float = 0.05
    particle_mass: float = DEFAULT_PARTICLE_MASS
    friction: float = 0.5
    baumgarte_alpha: float = 0.2
    timestep: float = 1e-3
    solver_iterations: int = 10
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    gamma: float = 1.0  # weight on the neighbor velocity in the contact solve

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if not self.radius > 0:
            raise ValidationError(f"radius must be > 0, got {self.radius}")
        if not self.particle_mass > 0:
            raise ValidationError(f"particle_mass must be > 0, got {self.particle_mass}")
        if not self.friction >= 0:
            raise ValidationError(f"friction must be >= 0, got {self.friction}")
        if not 0.0 <= self.baumgarte_alpha <= 1.0:
            raise ValidationError(
                f"baumgarte_alpha must be in [0, 1], got {self.baumgarte_alpha}"
            )
        if not self.timestep > 0:
            raise ValidationError(f"timestep must be > 0, got {self.timestep}")
        if not (isinstance(self.solver_iterations, (int, np.integer)) and self.solver_iterations >= 1):
            raise ValidationError(
                f"solver_iterations must be a positive integer, got {self.solver_iterations}"
            )
        if self.gravity.shape != (3,) or not np.all(np.isfinite(self.gravity)):
            raise ValidationError(f"gravity must be a finite 3-vector, got {self.gravity}")


@dataclass
class ParticleSet:
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64)).reshape(-1, 3)
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=np.float64)).reshape(-1, 3)
        self.validate()

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        if self.positions.shape != self.velocities.shape:
            raise ValidationError(
                f"positions and velocities must have equal shape, got "
                f"{self.positions.shape} vs {self.velocities.shape}"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("positions must be finite")
        if not np.all(np.isfinite(self.velocities)):
            raise ValidationError("velocities must be finite")

    @staticmethod
    def empty() -> "ParticleSet":
        return ParticleSet(np.zeros((0, 3)), np.zeros((0, 3)))


@dataclass
class CyclicBoundary:
    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValidationError(
                f"cyclic boundary requires z_min < z_max, got [{self.z_min}, {self.z_max}]"
            )


ROTATION_TOL = 1e-9


class RigidBody:
    """Kinematically driven rigid body: pose and twist are functions of
    time through the driver; reaction forces are never accumulated."""

    def __init__(
        self,
        geometry: sdf.SdfGeometry,
        driver: MotionDriver | None = None,
        name: str = "",
        spec: dict | None = None,
    ):
        self.geometry = geometry
        self.driver = driver or StaticDriver()
        self.name = name
        self.spec = spec  # config entry this body was built from, if any
        self.pose = identity_pose()
        self.omega = np.zeros(3)
        self.v_origin = np.zeros(3)
        self.update(0.0)

    def update(self, t: float) -> None:
        self.pose = np.asarray(self.driver.pose_at(t), dtype=np.float64)
        self.omega, self.v_origin = self.driver.twist_at(t)
        self.validate()

    def validate(self) -> None:
        R = self.pose[:3, :3]
        if rotation_error(R) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError(
                f"body {self.name!r}: rotation is not orthonormal "
                f"(residual {rotation_error(R):.3e})"
            )

    def velocity_at(self, points: np.ndarray) -> np.ndarray:
        """World velocity of body surface points."""
        p = np.atleast_2d(points)
        return self.v_origin + np.cross(self.omega, p - self.pose[:3, 3])


@dataclass
class Scene:
    particles: ParticleSet
    bodies: list[RigidBody]
    params: MaterialParams
    boundary: CyclicBoundary | None = None
    t: float = 0.0
    hashmap_size: int | None = None
    chains: dict[str, KinematicChain] = field(default_factory=dict)
    seed: int = 0
    config: dict | None = None

    def validate(self) -> None:
        self.params.validate()
        self.particles.validate()
        for body in self.bodies:
            body.validate()


# ---------------------------------------------------------------------------
# Particle seeding


@dataclass
class BoxRegion:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if not np.all(self.min < self.max):
            raise ValidationError("box region requires min < max componentwise")


@dataclass
class CylinderRegion:
    center: np.ndarray  # (x, y) axis location
    radius: float
    z_min: float
    z_max: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (self.radius > 0 and self.z_min < self.z_max):
            raise ValidationError("cylinder region requires radius > 0 and z_min < z_max")


def _axis_lattice(lo: float, hi: float, r: float, spacing: float) -> np.ndarray:
    eff = (hi - lo) - 2.0 * r  # keep whole spheres inside the region
    if eff < -1e-12:
        raise ValidationError("region too small for even one particle of this radius")
    n = int(np.floor(max(eff, 0.0) / spacing + 1e-9)) + 1
    start = (lo + hi) / 2.0 - (n - 1) * spacing / 2.0
    return start + spacing * np.arange(n)


def seed_particles_grid(
    region: BoxRegion | CylinderRegion,
    r: float,
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ParticleSet:
    """Seed resting particles on a cubic lattice inside a region.

    The lattice spacing is widened from 2r by the worst-case relative
    jitter displacement, so seeded particles never start in overlap.
    All spheres lie fully inside the region; velocities are zero.
    """
    if not 0.0 <= jitter < 1.0:
        raise ValidationError(f"jitter must be in [0, 1), got {jitter}")
    spacing = 2.0 * r + 2.0 * jitter * r * np.sqrt(3.0)
    if isinstance(region, BoxRegion):
        ax = [_axis_lattice(region.min[a], region.max[a], r, spacing) for a in range(3)]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    elif isinstance(region, CylinderRegion):
        R = region.radius
        xs = _axis_lattice(region.center[0] - R, region.center[0] + R, r, spacing)
        ys = _axis_lattice(region.center[1] - R, region.center[1] + R, r, spacing)
        zs = _axis_lattice(region.z_min, region.z_max, r, spacing)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        rho = np.hypot(pts[:, 0] - region.center[0], pts[:, 1] - region.center[1])
        pts = pts[rho <= R - r + 1e-12]
        if len(pts) == 0:
            raise ValidationError("region too small for even one particle of this radius")
    else:
        raise ValidationError(f"unknown region type {type(region).__name__}")
    if jitter > 0:
        rng = rng or np.random.default_rng(0)
        pts = pts + rng.uniform(-jitter * r, jitter * r, size=pts.shape)
    return ParticleSet(pts, np.zeros_like(pts))


# ---------------------------------------------------------------------------
# Config loading


_sentinel = object()


def _get(d: dict, key: str, where: str, default=_sentinel):
    if key in d:
        return d[key]
    if default is not _sentinel:
        return default
    raise ValidationError(f"{where}: missing required key {key!r}")


def _pose_from_spec(spec: dict) -> np.ndarray:
    pos = np.asarray(spec.get("position", [0.0, 0.0, 0.0]), dtype=np.float64)
    rpy = np.asarray(spec.get("rpy", [0.0, 0.0, 0.0]), dtype=np.float64)
    R = (
        so3_exp(np.array([0.0, 0.0, rpy[2]]))
        @ so3_exp(np.array([0.0, rpy[1], 0.0]))
        @ so3_exp(np.array([rpy[0], 0.0, 0.0]))
    )
    return make_pose(R, pos)


def build_geometry(spec: dict, base_dir: str = ".") -> sdf.SdfGeometry:
    kind = _get(spec, "type", "geometry")
    if kind == "sphere":
        return sdf.Sphere(radius=float(_get(spec, "radius", "sphere geometry")))
    if kind == "box":
        return sdf.Box(half_extents=_get(spec, "half_extents", "box geometry"))
    if kind == "cylinder":
        return sdf.Cylinder(
            radius=float(_get(spec, "radius", "cylinder geometry")),
            half_height=float(_get(spec, "half_height", "cylinder geometry")),
        )
    if kind == "half_space":
        return sdf.HalfSpace(
            normal=np.asarray(spec.get("normal", [0.0, 0.0, 1.0]), dtype=np.float64),
            offset=float(spec.get("offset", 0.0)),
        )
    if kind == "tube":
        return sdf.Tube(radius=float(_get(spec, "radius", "tube geometry")))
    if kind == "gear":
        verts, faces = meshes.make_gear_mesh(
            n_teeth=int(spec.get("n_teeth", 8)),
            root_radius=float(spec.get("root_radius", 0.6)),
            tip_radius=float(spec.get("tip_radius", 1.0)),
            thickness=float(spec.get("thickness", 0.4)),
            helix_angle=float(spec.get("helix_angle", 0.4)),
        )
        spacing = float(spec.get("spacing", (verts.max(0) - verts.min(0)).max() / 64.0))
        return sdf.bake_mesh_sdf(verts, faces, spacing)
    if kind == "mesh":
        path = _get(spec, "path", "mesh geometry")
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(full):
            raise ValidationError(f"mesh file does not exist: {full}")
        verts, faces = meshes.load_mesh(full)
        spacing = float(spec.get("spacing", (verts.max(0) - verts.min(0)).max() / 64.0))
        margin = spec.get("margin")
        cache = spec.get("cache")
        if cache:
            cache_full = cache if os.path.isabs(cache) else os.path.join(base_dir, cache)
            want_hash = sdf.mesh_content_hash(verts, faces)
            if os.path.exists(cache_full):
                grid = sdf.load_grid(cache_full)
                if grid.mesh_hash == want_hash:
                    return grid
            grid = sdf.bake_mesh_sdf(verts, faces, spacing, margin)
            sdf.save_grid(cache_full, grid)
            return grid
        return sdf.bake_mesh_sdf(verts, faces, spacing, margin)
    raise ValidationError(f"unknown geometry type {kind!r}")


def build_driver(spec: dict, chains: dict[str, KinematicChain]) -> MotionDriver:
    kind = spec.get("type", "static")
    if kind == "static":
        return StaticDriver(pose=_pose_from_spec(spec))
    if kind == "spin":
        return SpinDriver(
            axis=np.asarray(_get(spec, "axis", "spin driver"), dtype=np.float64),
            rate=float(_get(spec, "rate", "spin driver")),
            center=np.asarray(spec.get("center", [0.0, 0.0, 0.0]), dtype=np.float64),
            base_pose=_pose_from_spec(spec),
            phase=float(spec.get("phase", 0.0)),
        )
    if kind == "track_steering":
        return TrackSteeringDriver(
            state=TrackSteeringState(
                x=float(spec.get("x", 0.0)),
                y=float(spec.get("y", 0.0)),
                theta=float(spec.get("theta", 0.0)),
            ),
            z=float(spec.get("z", 0.0)),
            scale_v=float(spec.get("scale_v", 1.0)),
            scale_omega=float(spec.get("scale_omega", 1.0)),
            base_pose=_pose_from_spec(spec.get("base", {})),
        )
    if kind == "chain_link":
        chain_name = _get(spec, "chain", "chain_link driver")
        if chain_name not in chains:
            raise ValidationError(f"chain_link driver references unknown chain {chain_name!r}")
        return ChainLinkDriver(chain=chains[chain_name], link_index=int(_get(spec, "link", "chain_link driver")))
    raise ValidationError(f"unknown driver type {kind!r}")


def build_chain(spec: dict) -> KinematicChain:
    links = []
    for entry in _get(spec, "links", "chain"):
        links.append(
            ChainLink(
                parent=int(entry.get("parent", len(links) - 1)),
                origin=_pose_from_spec(entry),
                joint_type=entry.get("joint", "revolute"),
                axis=np.asarray(entry.get("axis", [0.0, 0.0, 1.0]), dtype=np.float64),
                velocity_limit=float(entry.get("velocity_limit", np.inf)),
            )
        )
    return KinematicChain(links, base_pose=_pose_from_spec(spec.get("base", {})))


def region_from_spec(spec: dict) -> BoxRegion | CylinderRegion:
    kind = _get(spec, "type", "particle region")
    if kind == "box":
        return BoxRegion(min=_get(spec, "min", "box region"), max=_get(spec, "max", "box region"))
    if kind == "cylinder":
        return CylinderRegion(
            center=spec.get("center", [0.0, 0.0]),
            radius=float(_get(spec, "radius", "cylinder region")),
            z_min=float(_get(spec, "z_min", "cylinder region")),
            z_max=float(_get(spec, "z_max", "cylinder region")),
        )
    raise ValidationError(f"unknown region type {kind!r}")


def load_scene(config_text: str, base_dir: str = ".") -> Scene:
    """Parse and validate a YAML scene description."""
    try:
        config = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise SceneParseError(f"scene config parse error: {exc}") from exc
    if config is None:
        config = {}
    if not isinstance(config, dict):
        raise SceneParseError("scene config must be a mapping")
    return scene_from_config(config, base_dir=base_dir)


def scene_from_config(config: dict, base_dir: str = ".") -> Scene:
    params = MaterialParams(**{k: v for k, v in config.get("material", {}).items()})
    seed = int(config.get("seed", 0))
    rng = np.random.default_rng(seed)

    pconf = config.get("particles", {}) or {}
    state = pconf.get("state")
    if state is not None:
        particles = ParticleSet(
            np.asarray(state["positions"], dtype=np.float64).reshape(-1, 3),
            np.asarray(
                state.get("velocities", np.zeros((len(state["positions"]), 3))),
                dtype=np.float64,
            ).reshape(-1, 3),
        )
    else:
        parts = [ParticleSet.empty()]
        for rspec in pconf.get("regions", []) or []:
            region = region_from_spec(rspec)
            parts.append(
                seed_particles_grid(region, params.radius, float(rspec.get("jitter", 0.0)), rng)
            )
        particles = ParticleSet(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.velocities for p in parts]),
        )

    chains = {name: build_chain(cspec) for name, cspec in (config.get("chains") or {}).items()}

    bodies = []
    for bspec in config.get("bodies", []) or []:
        geometry = build_geometry(_get(bspec, "geometry", "body"), base_dir)
        driver = build_driver(bspec.get("driver", {"type": "static"}), chains)
        bodies.append(
            RigidBody(geometry=geometry, driver=driver, name=bspec.get("name", ""), spec=bspec)
        )

    boundary = None
    if config.get("boundary") is not None:
        bspec = config["boundary"]
        boundary = CyclicBoundary(
            z_min=float(_get(bspec, "z_min", "boundary")),
            z_max=float(_get(bspec, "z_max", "boundary")),
        )

    hashmap_size = config.get("hashmap_size")
    if hashmap_size is not None:
        hashmap_size = int(hashmap_size)
        if hashmap_size < 1:
            raise ValidationError(f"hashmap_size must be >= 1, got {hashmap_size}")

    scene = Scene(
        particles=particles,
        bodies=bodies,
        params=params,
        boundary=boundary,
        hashmap_size=hashmap_size,
        chains=chains,
        seed=seed,
        config=config,
    )
    scene.validate()
    return scene


def serialize_scene(scene: Scene) -> str:
    """Serialize a scene back to the config document form.

    Particle state is embedded explicitly (full-precision floats), so a
    load of the result reproduces the state bit-for-bit.
    """
    config = dict(scene.config or {})
    config["material"] = {
        "radius": scene.params.radius,
        "particle_mass": scene.params.particle_mass,
        "friction": scene.params.friction,
        "baumgarte_alpha": scene.params.baumgarte_alpha,
        "timestep": scene.params.timestep,
        "solver_iterations": int(scene.params.solver_iterations),
        "gravity": scene.params.gravity.tolist(),
        "gamma": scene.params.gamma,
    }
    config["seed"] = scene.seed
    config["particles"] = {
        "state": {
            "positions": scene.particles.positions.tolist(),
            "velocities": scene.particles.velocities.tolist(),
        }
    }
    if scene.boundary is not None:
        config["boundary"] = {"z_min": scene.boundary.z_min, "z_max": scene.boundary.z_max}
    if scene.hashmap_size is not None:
        config["hashmap_size"] = scene.hashmap_size
    if scene.bodies and all(b.spec is not None for b in scene.bodies):
        config["bodies"] = [b.spec for b in scene.bodies]
    return yaml.safe_dump(config, sort_keys=False, default_flow_style=None)
