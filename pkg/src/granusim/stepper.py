"""One simulation step: drive bodies, rebuild broadphase, detect,
solve, integrate (symplectic Euler), apply boundaries.

Three pipeline modes expose the detection/solve loop structure as a
measurable choice while producing identical physics:

* ONE_LOOP        - narrowphase re-evaluated inline per candidate inside
                    every solver sweep, no contact list.
* TWO_LOOPS_FUSED - narrowphase marked once over all candidates, solve
                    runs over the masked candidate array in one pass.
* TWO_LOOPS_SPLIT - narrowphase results compacted into a contact list,
                    solve runs over the compact list (the default).
"""

from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .broadphase import build_hashmap, default_table_size
from .contact import (
    ContactSet,
    narrowphase_contacts,
    narrowphase_from_hashmap,
    solve_contacts_pja,
)
from .scene import CyclicBoundary, ParticleSet, Scene


class PipelineMode(enum.Enum):
    ONE_LOOP = "one-loop"
    TWO_LOOPS_FUSED = "two-loops-fused"
    TWO_LOOPS_SPLIT = "two-loops-split"


@dataclass
class StepReport:
    wall_time: float = 0.0
    n_contacts: int = 0  # particle-particle contacts (both owners counted)
    n_candidates: int = 0  # particle-particle candidates from the broadphase
    candidate_hit_rate: float = 0.0
    max_penetration: float = 0.0
    kinetic_energy: float = 0.0
    n_body_contacts: int = 0
    n_coincident_skipped: int = 0
    n_degenerate_skipped: int = 0
    max_cone_violation: float = 0.0
    min_normal_impulse: float = 0.0
    body_momentum: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    step_index: int = -1


def step(
    scene: Scene, mode: PipelineMode = PipelineMode.TWO_LOOPS_SPLIT, step_index: int = -1
) -> tuple[Scene, StepReport]:
    """Advance the scene by one timestep in place and report diagnostics."""
    t0 = time.perf_counter()
    params = scene.params
    dt = params.timestep

    scene.t += dt
    for body in scene.bodies:
        body.update(scene.t)

    x = scene.particles.positions
    v = scene.particles.velocities
    n_h = scene.hashmap_size or default_table_size(len(x))
    hmap = build_hashmap(x, params.radius, n_h)

    try:
        if mode is PipelineMode.TWO_LOOPS_SPLIT:
            # the compact path never materializes full candidate arrays
            cand = narrowphase_contacts(x, params.radius, hmap, scene.bodies)
            buf = solve_contacts_pja(cand, v, params, n_bodies=len(scene.bodies))
        elif mode is PipelineMode.TWO_LOOPS_FUSED:
            cand = narrowphase_from_hashmap(x, params.radius, hmap, scene.bodies)
            # mark-then-solve within one pass over the candidate array
            buf = solve_contacts_pja(
                cand, v, params, n_bodies=len(scene.bodies), inline_narrowphase_mask=True
            )
        else:
            # naive single loop: the collision test is repeated inside the
            # solve for every candidate, every sweep
            cand = narrowphase_from_hashmap(x, params.radius, hmap, scene.bodies)
            buf = solve_contacts_pja(
                cand,
                v,
                params,
                n_bodies=len(scene.bodies),
                inline_narrowphase_mask=True,
                refresh_candidates=lambda: narrowphase_from_hashmap(
                    x, params.radius, hmap, scene.bodies
                ),
            )
    except Exception as exc:
        raise type(exc)(f"step {step_index}: {exc}") from exc

    v += dt * params.gravity + buf.delta_v
    x += dt * v

    if scene.boundary is not None:
        apply_cyclic_boundary(scene.particles, scene.boundary)

    if isinstance(cand, ContactSet):
        n_pp = int((cand.kind == 0).sum())
        n_body = len(cand) - n_pp
        max_pen = float(cand.psi.max()) if len(cand) else 0.0
    else:
        pp_mask = cand.kind == 0
        hits = cand.colliding
        n_pp = int((hits & pp_mask).sum())
        n_body = int((hits & ~pp_mask).sum())
        max_pen = float(cand.psi[hits].max()) if hits.any() else 0.0
    ke = 0.5 * params.particle_mass * float(np.einsum("ij,ij->", v, v))

    report = StepReport(
        wall_time=time.perf_counter() - t0,
        n_contacts=n_pp,
        n_candidates=cand.n_pp_candidates,
        candidate_hit_rate=n_pp / max(cand.n_pp_candidates, 1),
        max_penetration=max_pen,
        kinetic_energy=ke,
        n_body_contacts=n_body,
        n_coincident_skipped=cand.n_coincident,
        n_degenerate_skipped=cand.n_degenerate,
        max_cone_violation=buf.max_cone_violation,
        min_normal_impulse=buf.min_normal_impulse,
        body_momentum=buf.body_momentum,
        step_index=step_index,
    )
    return scene, report


def apply_cyclic_boundary(particles: ParticleSet, boundary: CyclicBoundary) -> ParticleSet:
    """Transport particles below z_min back up by the band height,
    velocities unchanged."""
    z = particles.positions[:, 2]
    below = z < boundary.z_min
    z[below] += boundary.z_max - boundary.z_min
    return particles


@dataclass
class Trajectory:
    """Recorded snapshots of particle state every ``stride`` steps."""

    dt: float
    stride: int
    positions: list[np.ndarray] = field(default_factory=list)
    velocities: list[np.ndarray] | None = None

    def record(self, particles: ParticleSet) -> None:
        self.positions.append(particles.positions.astype(np.float32))
        if self.velocities is not None:
            self.velocities.append(particles.velocities.astype(np.float32))


def run(
    scene: Scene,
    n_steps: int,
    mode: PipelineMode = PipelineMode.TWO_LOOPS_SPLIT,
    snapshot_stride: int = 0,
    record_velocities: bool = False,
) -> tuple[Trajectory, list[StepReport]]:
    """Apply ``step`` n_steps times, recording snapshots and reports.

    With a positive ``snapshot_stride`` the initial state and every
    stride-th stepped state are recorded.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    traj = Trajectory(
        dt=scene.params.timestep,
        stride=snapshot_stride,
        velocities=[] if record_velocities else None,
    )
    if snapshot_stride > 0:
        traj.record(scene.particles)
    reports = []
    for k in range(n_steps):
        _, report = step(scene, mode, step_index=k)
        reports.append(report)
        if snapshot_stride > 0 and (k + 1) % snapshot_stride == 0:
            traj.record(scene.particles)
    return traj, reports


# ---------------------------------------------------------------------------
# Trajectory file format: header + per-snapshot little-endian float32
# positions (and optionally velocities), row-major (n_p, 3).

TRAJ_MAGIC = b"GTRJ"
TRAJ_VERSION = 1


def save_trajectory(path: str, traj: Trajectory) -> None:
    n_p = traj.positions[0].shape[0] if traj.positions else 0
    has_vel = traj.velocities is not None
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(
            struct.pack(
                "<IIdII",
                TRAJ_VERSION,
                n_p,
                traj.dt,
                max(traj.stride, 0),
                1 if has_vel else 0,
            )
        )
        for k, pos in enumerate(traj.positions):
            fh.write(np.ascontiguousarray(pos, dtype="<f4").tobytes())
            if has_vel:
                fh.write(np.ascontiguousarray(traj.velocities[k], dtype="<f4").tobytes())


def load_trajectory(path: str) -> Trajectory:
    with open(path, "rb") as fh:
        if fh.read(4) != TRAJ_MAGIC:
            raise ValueError(f"{path!r} is not a trajectory file")
        version, n_p, dt, stride, has_vel = struct.unpack("<IIdII", fh.read(24))
        if version != TRAJ_VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        data = fh.read()
    frame_floats = n_p * 3 * (2 if has_vel else 1)
    frame_bytes = frame_floats * 4
    traj = Trajectory(dt=dt, stride=stride, velocities=[] if has_vel else None)
    if n_p == 0:
        return traj
    for off in range(0, len(data), frame_bytes):
        chunk = np.frombuffer(data[off : off + frame_bytes], dtype="<f4")
        traj.positions.append(chunk[: n_p * 3].reshape(n_p, 3).copy())
        if has_vel:
            traj.velocities.append(chunk[n_p * 3 :].reshape(n_p, 3).copy())
    return traj
