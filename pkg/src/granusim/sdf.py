"""Signed distance geometry: closed-form primitives, mesh-baked grids,
trilinear queries, and sphere penetration tests.

All distance functions are negative inside the solid, positive outside.
Mesh geometry is baked onto a regular rectilinear grid once; queries are
then O(1) trilinear lookups regardless of mesh complexity.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .meshes import check_watertight

DEGENERATE_GRADIENT_EPS = 1e-9


def _as_points(x) -> tuple[np.ndarray, bool]:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim == 1:
        return p[None, :], True
    return p, False


class SdfGeometry:
    """Base interface: vectorized signed distance and gradient."""

    def distance(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contact_bounds(self, r: float) -> tuple[np.ndarray, np.ndarray] | None:
        """Local AABB outside of which a sphere of radius ``r`` cannot touch
        the geometry, or None when no such box exists (unbounded solids)."""
        return None


@dataclass
class Sphere(SdfGeometry):
    radius: float

    def distance(self, points):
        p, single = _as_points(points)
        d = np.linalg.norm(p, axis=1) - self.radius
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        n = np.linalg.norm(p, axis=1, keepdims=True)
        g = np.divide(p, n, out=np.zeros_like(p), where=n > 0)
        return g[0] if single else g

    def contact_bounds(self, r):
        e = self.radius + r
        return -np.full(3, e), np.full(3, e)


@dataclass
class HalfSpace(SdfGeometry):
    """Solid half-space; ``normal`` points out of the material."""

    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)

    def distance(self, points):
        p, single = _as_points(points)
        d = p @ self.normal - self.offset
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        g = np.broadcast_to(self.normal, p.shape).copy()
        return g[0] if single else g


@dataclass
class Box(SdfGeometry):
    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)

    def distance(self, points):
        p, single = _as_points(points)
        q = np.abs(p) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        d = outside + inside
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        q = np.abs(p) - self.half_extents
        qpos = np.maximum(q, 0.0)
        norm = np.linalg.norm(qpos, axis=1, keepdims=True)
        sgn = np.where(p >= 0.0, 1.0, -1.0)
        g_out = np.divide(qpos, norm, out=np.zeros_like(qpos), where=norm > 0) * sgn
        # inside: push along the least-penetrated axis
        axis = q.argmax(axis=1)
        g_in = np.zeros_like(p)
        g_in[np.arange(len(p)), axis] = sgn[np.arange(len(p)), axis]
        g = np.where(norm > 0, g_out, g_in)
        return g[0] if single else g

    def contact_bounds(self, r):
        return -(self.half_extents + r), self.half_extents + r


@dataclass
class Cylinder(SdfGeometry):
    """Capped cylinder, axis along z."""

    radius: float
    half_height: float

    def distance(self, points):
        p, single = _as_points(points)
        rho = np.hypot(p[:, 0], p[:, 1])
        dr = rho - self.radius
        dz = np.abs(p[:, 2]) - self.half_height
        d2 = np.stack([dr, dz], axis=1)
        d = np.minimum(d2.max(axis=1), 0.0) + np.linalg.norm(np.maximum(d2, 0.0), axis=1)
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        rho = np.hypot(p[:, 0], p[:, 1])
        safe_rho = np.maximum(rho, 1e-300)
        radial = np.stack([p[:, 0] / safe_rho, p[:, 1] / safe_rho, np.zeros(len(p))], axis=1)
        axial = np.stack(
            [np.zeros(len(p)), np.zeros(len(p)), np.where(p[:, 2] >= 0, 1.0, -1.0)], axis=1
        )
        dr = rho - self.radius
        dz = np.abs(p[:, 2]) - self.half_height
        g_out = radial * np.maximum(dr, 0.0)[:, None] + axial * np.maximum(dz, 0.0)[:, None]
        norm = np.linalg.norm(g_out, axis=1, keepdims=True)
        g_out = np.divide(g_out, norm, out=np.zeros_like(g_out), where=norm > 0)
        g_in = np.where((dr > dz)[:, None], radial, axial)
        g = np.where(norm > 0, g_out, g_in)
        return g[0] if single else g

    def contact_bounds(self, r):
        e = np.array([self.radius + r, self.radius + r, self.half_height + r])
        return -e, e


@dataclass
class Tube(SdfGeometry):
    """Infinite cylindrical wall solid outside ``radius``; container interior."""

    radius: float

    def distance(self, points):
        p, single = _as_points(points)
        d = self.radius - np.hypot(p[:, 0], p[:, 1])
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        rho = np.maximum(np.hypot(p[:, 0], p[:, 1]), 1e-300)
        g = np.stack([-p[:, 0] / rho, -p[:, 1] / rho, np.zeros(len(p))], axis=1)
        return g[0] if single else g


# ---------------------------------------------------------------------------
# Gridded SDFs


@dataclass
class SdfGrid(SdfGeometry):
    """Regular rectilinear grid of signed distances with trilinear query.

    Queries outside the grid box use the documented extrapolation rule:
    the value at the clamped boundary point plus the outward Euclidean
    distance from the query point to the box.
    """

    origin: np.ndarray
    spacing: np.ndarray
    dims: np.ndarray
    values: np.ndarray
    mesh_hash: bytes = b"\0" * 32

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.spacing = np.asarray(self.spacing, dtype=np.float64)
        self.dims = np.asarray(self.dims, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(tuple(self.dims))
        if np.any(self.dims < 2):
            raise ValueError("grid dims must be >= 2 on every axis")

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (self.dims - 1) * self.spacing

    def knot_points(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    def distance(self, points):
        p, single = _as_points(points)
        clamped = np.clip(p, self.origin, self.upper)
        outward = np.linalg.norm(p - clamped, axis=1)
        u = (clamped - self.origin) / self.spacing
        i0 = np.minimum(np.floor(u).astype(np.int64), self.dims - 2)
        f = u - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = v[ix, iy, iz] * (1 - fx) + v[ix + 1, iy, iz] * fx
        c10 = v[ix, iy + 1, iz] * (1 - fx) + v[ix + 1, iy + 1, iz] * fx
        c01 = v[ix, iy, iz + 1] * (1 - fx) + v[ix + 1, iy, iz + 1] * fx
        c11 = v[ix, iy + 1, iz + 1] * (1 - fx) + v[ix + 1, iy + 1, iz + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        d = c0 * (1 - fz) + c1 * fz + outward
        return d[0] if single else d

    def gradient(self, points):
        p, single = _as_points(points)
        h = float(self.spacing.min()) / 2.0
        g = np.empty_like(p)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            g[:, a] = (self.distance(p + dp) - self.distance(p - dp)) / (2.0 * h)
        return g[0] if single else g

    def contact_bounds(self, r):
        return self.origin - r, self.upper + r


# ---------------------------------------------------------------------------
# Mesh signed distance (exact, used for baking)


class MeshDistance:
    """Exact signed distance to a watertight triangle mesh.

    Sign comes from the angle-weighted pseudonormal at the nearest feature
    (vertex, edge, or face), which is robust for closed orientable meshes.
    """

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        check_watertight(vertices, faces)
        self.vertices = vertices
        self.faces = faces
        self.a = vertices[faces[:, 0]]
        self.b = vertices[faces[:, 1]]
        self.c = vertices[faces[:, 2]]
        n = np.cross(self.b - self.a, self.c - self.a)
        self.face_n = n / np.linalg.norm(n, axis=1, keepdims=True)
        self._build_pseudonormals()

    def contact_bounds(self, r):
        return self.vertices.min(axis=0) - r, self.vertices.max(axis=0) + r

    def _build_pseudonormals(self) -> None:
        V, F = self.vertices, self.faces
        # angle-weighted vertex pseudonormals
        vert_pn = np.zeros_like(V)
        for k in range(3):
            i0 = F[:, k]
            e1 = V[F[:, (k + 1) % 3]] - V[i0]
            e2 = V[F[:, (k + 2) % 3]] - V[i0]
            cosang = np.einsum("ij,ij->i", e1, e2) / (
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vert_pn, i0, self.face_n * ang[:, None])
        self.vert_pn = vert_pn / np.maximum(
            np.linalg.norm(vert_pn, axis=1, keepdims=True), 1e-300
        )
        # edge pseudonormals: sum of the two adjacent face normals
        edge_sum: dict[tuple[int, int], np.ndarray] = {}
        for t, (i, j, k) in enumerate(F):
            for a_, b_ in ((i, j), (j, k), (k, i)):
                key = (a_, b_) if a_ < b_ else (b_, a_)
                edge_sum[key] = edge_sum.get(key, 0.0) + self.face_n[t]
        edge_pn = np.zeros((len(F), 3, 3))
        for t, (i, j, k) in enumerate(F):
            for e, (a_, b_) in enumerate(((i, j), (j, k), (k, i))):
                key = (a_, b_) if a_ < b_ else (b_, a_)
                n = edge_sum[key]
                edge_pn[t, e] = n / max(np.linalg.norm(n), 1e-300)
        self.edge_pn = edge_pn
        self.corner_pn = self.vert_pn[F]  # (T, 3, 3)

    def _closest_on_triangles(self, p: np.ndarray):
        """Closest point & barycentrics on every triangle for each point.

        Returns (cp: (B,T,3), bary: (B,T,3)).  Region-based algorithm.
        """
        a, b, c = self.a[None], self.b[None], self.c[None]
        p = p[:, None, :]
        ab = b - a
        ac = c - a
        ap = p - a
        d1 = np.einsum("btj,btj->bt", ab, ap)
        d2 = np.einsum("btj,btj->bt", ac, ap)
        bp = p - b
        d3 = np.einsum("btj,btj->bt", ab, bp)
        d4 = np.einsum("btj,btj->bt", ac, bp)
        cp_ = p - c
        d5 = np.einsum("btj,btj->bt", ab, cp_)
        d6 = np.einsum("btj,btj->bt", ac, cp_)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4

        with np.errstate(divide="ignore", invalid="ignore"):
            v_ab = np.clip(d1 / (d1 - d3), 0.0, 1.0)
            w_ac = np.clip(d2 / (d2 - d6), 0.0, 1.0)
            w_bc = np.clip((d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0, 1.0)
            denom = va + vb + vc
            v_f = vb / denom
            w_f = vc / denom
        v_ab = np.nan_to_num(v_ab)
        w_ac = np.nan_to_num(w_ac)
        w_bc = np.nan_to_num(w_bc)
        v_f = np.nan_to_num(v_f)
        w_f = np.nan_to_num(w_f)

        bary = np.stack([1.0 - v_f - w_f, v_f, w_f], axis=-1)
        reg_a = (d1 <= 0) & (d2 <= 0)
        reg_b = (d3 >= 0) & (d4 <= d3)
        reg_c = (d6 >= 0) & (d5 <= d6)
        reg_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        reg_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        reg_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        # later assignments win; order from face to vertices
        for mask, w in (
            (reg_bc, np.stack([np.zeros_like(w_bc), 1.0 - w_bc, w_bc], axis=-1)),
            (reg_ac, np.stack([1.0 - w_ac, np.zeros_like(w_ac), w_ac], axis=-1)),
            (reg_ab, np.stack([1.0 - v_ab, v_ab, np.zeros_like(v_ab)], axis=-1)),
            (reg_c, np.broadcast_to([0.0, 0.0, 1.0], bary.shape)),
            (reg_b, np.broadcast_to([0.0, 1.0, 0.0], bary.shape)),
            (reg_a, np.broadcast_to([1.0, 0.0, 0.0], bary.shape)),
        ):
            bary = np.where(mask[..., None], w, bary)
        cp = bary[..., 0:1] * a + bary[..., 1:2] * b + bary[..., 2:3] * c
        return cp, bary

    def signed_distance(self, points: np.ndarray, chunk: int = 2048) -> np.ndarray:
        p, single = _as_points(points)
        T = len(self.faces)
        chunk = max(1, min(chunk, max(1, 2_000_000 // T)))
        out = np.empty(len(p))
        eps = 1e-9
        for s in range(0, len(p), chunk):
            q = p[s : s + chunk]
            cp, bary = self._closest_on_triangles(q)
            d2 = np.einsum("btj,btj->bt", q[:, None, :] - cp, q[:, None, :] - cp)
            t = d2.argmin(axis=1)
            rows = np.arange(len(q))
            cpt = cp[rows, t]
            w = bary[rows, t]
            # nearest-feature pseudonormal
            near_zero = w < eps
            n_zero = near_zero.sum(axis=1)
            pn = self.face_n[t].copy()
            # edge: exactly one barycentric ~0; edges are (v0v1, v1v2, v2v0)
            edge_idx = np.array([2, 0, 1])  # zero corner k -> opposite edge
            is_edge = n_zero == 1
            if is_edge.any():
                zc = near_zero[is_edge].argmax(axis=1)
                pn[is_edge] = self.edge_pn[t[is_edge], edge_idx[zc]]
            # vertex: two barycentrics ~0
            is_vert = n_zero == 2
            if is_vert.any():
                vc_ = (~near_zero[is_vert]).argmax(axis=1)
                pn[is_vert] = self.corner_pn[t[is_vert], vc_]
            diff = q - cpt
            dist = np.sqrt(d2[rows, t])
            sign = np.where(np.einsum("ij,ij->i", diff, pn) >= 0.0, 1.0, -1.0)
            out[s : s + chunk] = sign * dist
        return out[0] if single else out


def bake_mesh_sdf(
    vertices: np.ndarray,
    faces: np.ndarray,
    spacing: float | np.ndarray,
    margin: float | None = None,
) -> SdfGrid:
    """Sample a mesh's signed distance onto a regular grid.

    The grid box covers the mesh bounding box plus ``margin`` (default two
    spacings) on every side.  Raises for non-watertight meshes.
    """
    md = MeshDistance(vertices, faces)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), 3).copy()
    if margin is None:
        margin = 2.0 * float(spacing.max())
    lo = vertices.min(axis=0) - margin
    hi = vertices.max(axis=0) + margin
    dims = np.maximum(np.ceil((hi - lo) / spacing).astype(np.int64) + 1, 2)
    grid = SdfGrid(
        origin=lo,
        spacing=spacing,
        dims=dims,
        values=np.zeros(tuple(dims)),
        mesh_hash=mesh_content_hash(vertices, faces),
    )
    grid.values = md.signed_distance(grid.knot_points()).reshape(tuple(dims))
    return grid


def mesh_content_hash(vertices: np.ndarray, faces: np.ndarray) -> bytes:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(faces, dtype=np.int64).tobytes())
    return h.digest()


# ---------------------------------------------------------------------------
# Grid cache file format: header + raw little-endian float32 knot values.

GRID_MAGIC = b"GSDF"
GRID_VERSION = 1


def save_grid(path: str, grid: SdfGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I", GRID_VERSION))
        fh.write(struct.pack("<3I", *[int(d) for d in grid.dims]))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<3d", *grid.spacing))
        fh.write(grid.mesh_hash[:32].ljust(32, b"\0"))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid(path: str) -> SdfGrid:
    with open(path, "rb") as fh:
        if fh.read(4) != GRID_MAGIC:
            raise ValueError(f"{path!r} is not an SDF grid cache file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != GRID_VERSION:
            raise ValueError(f"unsupported grid cache version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        origin = struct.unpack("<3d", fh.read(24))
        spacing = struct.unpack("<3d", fh.read(24))
        mesh_hash = fh.read(32)
        values = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    return SdfGrid(
        origin=np.array(origin),
        spacing=np.array(spacing),
        dims=np.array(dims),
        values=values.reshape(dims),
        mesh_hash=mesh_hash,
    )


# ---------------------------------------------------------------------------
# Sphere-vs-geometry penetration


def penetration_depth(
    geom: SdfGeometry,
    body_pose: np.ndarray,
    world_points: np.ndarray,
    r: float,
):
    """Penetration of spheres of radius r (centers in world frame) into a
    posed geometry.

    Returns ``(psi, normal_world, in_contact, n_degenerate)``.  psi is the
    non-negative depth max(0, r - f(p_local)); the normal is the normalized
    body-frame SDF gradient rotated into the world frame.  Contacts whose
    gradient is degenerate are discarded and counted.
    """
    if r <= 0:
        raise ValueError("particle radius must be positive")
    p, single = _as_points(world_points)
    R = body_pose[:3, :3]
    t = body_pose[:3, 3]
    local = (p - t) @ R  # R^T @ (p - t), row-wise
    d = np.atleast_1d(geom.distance(local))
    in_contact = d < r
    psi = np.where(in_contact, r - d, 0.0)
    normals = np.zeros_like(p)
    n_degenerate = 0
    if in_contact.any():
        g = np.atleast_2d(geom.gradient(local[in_contact]))
        gn = np.linalg.norm(g, axis=1)
        ok = gn > DEGENERATE_GRADIENT_EPS
        n_degenerate = int((~ok).sum())
        gw = np.zeros_like(g)
        gw[ok] = (g[ok] / gn[ok, None]) @ R.T
        normals[in_contact] = gw
        if n_degenerate:
            bad = np.zeros(len(p), dtype=bool)
            bad[np.nonzero(in_contact)[0][~ok]] = True
            in_contact = in_contact & ~bad
            psi = np.where(in_contact, psi, 0.0)
    if single:
        return float(psi[0]), normals[0], bool(in_contact[0]), n_degenerate
    return psi, normals, in_contact, n_degenerate
