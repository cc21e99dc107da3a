"""Ray-based depth rendering: analytic ray-sphere tests for particles,
sphere tracing against body SDFs.

Depth is distance along the ray; pixels with no hit read ``far``.
Camera frame convention: +x right, +y down, +z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import identity_pose
from .scene import Scene


@dataclass
class DepthCamera:
    kind: str = "perspective"  # "perspective" | "orthographic"
    pose: np.ndarray = field(default_factory=identity_pose)
    width: int = 36
    height: int = 36
    fov: float = np.pi / 3  # vertical, radians (perspective)
    extent: tuple[float, float] = (10.0, 10.0)  # world width x height (orthographic)
    far: float = 100.0
    attach_body: int | None = None  # follow this body's pose if set

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be at least 1x1")
        if self.far <= 0:
            raise ValueError("camera far plane must be positive")

    def rays(self, pose: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel ray origins and unit directions, row-major pixels."""
        T = self.pose if pose is None else pose
        R, t = T[:3, :3], T[:3, 3]
        px = (np.arange(self.width) + 0.5) / self.width - 0.5
        py = (np.arange(self.height) + 0.5) / self.height - 0.5
        gx, gy = np.meshgrid(px, py)  # (h, w)
        if self.kind == "perspective":
            tan_half = np.tan(self.fov / 2.0)
            aspect = self.width / self.height
            d = np.stack(
                [gx * 2.0 * tan_half * aspect, gy * 2.0 * tan_half, np.ones_like(gx)],
                axis=-1,
            ).reshape(-1, 3)
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            origins = np.broadcast_to(t, d.shape).copy()
            return origins, d @ R.T
        if self.kind == "orthographic":
            w, h = self.extent
            local = np.stack([gx * w, gy * h, np.zeros_like(gx)], axis=-1).reshape(-1, 3)
            origins = local @ R.T + t
            d = np.broadcast_to(R[:, 2], origins.shape).copy()
            return origins, d
        raise ValueError(f"unknown camera kind {self.kind!r}")


def ray_spheres_depth(
    origins: np.ndarray,
    dirs: np.ndarray,
    centers: np.ndarray,
    radius: float,
    far: float,
    chunk: int = 4096,
) -> np.ndarray:
    """Nearest positive ray-sphere intersection per ray (``far`` if none)."""
    depth = np.full(len(origins), far)
    for s in range(0, len(centers), chunk):
        c = centers[s : s + chunk]
        oc = origins[:, None, :] - c[None, :, :]  # (P, S, 3)
        b = np.einsum("psj,pj->ps", oc, dirs)
        cterm = np.einsum("psj,psj->ps", oc, oc) - radius * radius
        disc = b * b - cterm
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = -b - sq
        t = np.where(hit & (t > 0.0), t, np.inf)
        depth = np.minimum(depth, t.min(axis=1))
    return np.minimum(depth, far)


def sphere_trace_depth(
    origins: np.ndarray,
    dirs: np.ndarray,
    scene: Scene,
    far: float,
    eps: float = 1e-4,
    max_steps: int = 128,
) -> np.ndarray:
    """Sphere-trace every body SDF; returns per-ray depth (``far`` if none)."""
    depth = np.full(len(origins), far)
    for body in scene.bodies:
        R, tb = body.pose[:3, :3], body.pose[:3, 3]
        o_local = (origins - tb) @ R
        d_local = dirs @ R
        t = np.zeros(len(origins))
        active = np.ones(len(origins), dtype=bool)
        hit = np.zeros(len(origins), dtype=bool)
        for _ in range(max_steps):
            if not active.any():
                break
            p = o_local[active] + t[active, None] * d_local[active]
            f = np.atleast_1d(body.geometry.distance(p))
            arrived = f < eps
            idx = np.nonzero(active)[0]
            hit[idx[arrived]] = True
            # 0.9 safety factor: grid extrapolation outside the box is not
            # a strict lower bound on the true distance
            t[idx] += np.where(arrived, 0.0, np.maximum(f, eps) * 0.9)
            still = ~arrived & (t[idx] < far)
            active[idx] = still
        depth = np.minimum(depth, np.where(hit, t, far))
    return depth


def render_depth(scene: Scene, camera: DepthCamera) -> np.ndarray:
    """Depth image (height, width) float32 meters."""
    pose = None
    if camera.attach_body is not None:
        pose = scene.bodies[camera.attach_body].pose @ camera.pose
    origins, dirs = camera.rays(pose)
    depth = np.full(len(origins), camera.far)
    if scene.particles.count:
        depth = np.minimum(
            depth,
            ray_spheres_depth(
                origins, dirs, scene.particles.positions, scene.params.radius, camera.far
            ),
        )
    if scene.bodies:
        depth = np.minimum(depth, sphere_trace_depth(origins, dirs, scene, camera.far))
    return depth.reshape(camera.height, camera.width).astype(np.float32)
