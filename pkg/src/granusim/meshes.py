"""Triangle mesh generation and IO (STL / OBJ).

Meshes are (vertices, faces) pairs: float64 (V, 3) coordinates and int64
(T, 3) vertex indices with outward-facing counter-clockwise winding.
"""

from __future__ import annotations

import struct

import numpy as np


class MeshError(ValueError):
    pass


def mesh_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    """Signed volume via divergence theorem; positive for outward winding."""
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def ensure_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Flip all faces if the signed volume is negative."""
    if mesh_volume(vertices, faces) < 0.0:
        faces = faces[:, ::-1].copy()
    return faces


def open_edge_count(faces: np.ndarray) -> int:
    """Number of directed edges without an opposite partner (0 if watertight)."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    fwd = {tuple(x) for x in e.tolist()}
    return sum(1 for a, b in fwd if (b, a) not in fwd)


def check_watertight(vertices: np.ndarray, faces: np.ndarray) -> None:
    if len(faces) == 0:
        raise MeshError("mesh has no triangles")
    n_open = open_edge_count(faces)
    if n_open:
        raise MeshError(f"mesh is not watertight: {n_open} open edges")


# ---------------------------------------------------------------------------
# Generators


def make_icosphere(subdivisions: int = 2, radius: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Subdivided icosahedron approximating a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
            (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
            (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
            (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
            (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
            (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        vlist = verts.tolist()
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key in cache:
                return cache[key]
            m = np.asarray(vlist[a]) + np.asarray(vlist[b])
            m /= np.linalg.norm(m)
            cache[key] = len(vlist)
            vlist.append(m.tolist())
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.asarray(vlist)
        faces = np.asarray(new_faces, dtype=np.int64)
    return verts * radius, faces


def make_box_mesh(half_extents) -> tuple[np.ndarray, np.ndarray]:
    hx, hy, hz = np.asarray(half_extents, dtype=np.float64)
    v = np.array(
        [(sx * hx, sy * hy, sz * hz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    faces = ensure_outward(v, np.asarray(faces, dtype=np.int64))
    return v, faces


def make_gear_mesh(
    n_teeth: int = 8,
    root_radius: float = 0.6,
    tip_radius: float = 1.0,
    thickness: float = 0.4,
    helix_angle: float = 0.4,
    n_layers: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Watertight helical gear mesh with trapezoidal tooth flanks.

    The tooth profile is a star-shaped polygon approximating an involute
    gear (flat root, flat tip, sloped flanks).  Extruded along z with a
    linear twist of ``helix_angle`` radians over the full thickness.
    """
    # 2D star polygon: per tooth 4 arc segments (root, flank up, tip, flank down)
    angles = []
    radii = []
    pitch = 2.0 * np.pi / n_teeth
    for k in range(n_teeth):
        a0 = k * pitch
        for frac, rad in ((0.0, root_radius), (0.3, root_radius),
                          (0.45, tip_radius), (0.75, tip_radius)):
            angles.append(a0 + frac * pitch)
            radii.append(rad)
    angles = np.asarray(angles)
    radii = np.asarray(radii)
    m = len(angles)

    verts: list[tuple[float, float, float]] = []
    zs = np.linspace(-thickness / 2.0, thickness / 2.0, n_layers + 1)
    for li, z in enumerate(zs):
        twist = helix_angle * (z / thickness + 0.5)
        a = angles + twist
        for x, y in zip(radii * np.cos(a), radii * np.sin(a)):
            verts.append((x, y, z))
    bottom_center = len(verts)
    verts.append((0.0, 0.0, zs[0]))
    top_center = len(verts)
    verts.append((0.0, 0.0, zs[-1]))

    faces: list[tuple[int, int, int]] = []
    for li in range(n_layers):
        lo = li * m
        hi = (li + 1) * m
        for k in range(m):
            kn = (k + 1) % m
            faces += [(lo + k, lo + kn, hi + kn), (lo + k, hi + kn, hi + k)]
    for k in range(m):  # caps: fans from the center (profile is star-shaped)
        kn = (k + 1) % m
        faces.append((bottom_center, kn, k))
        top0 = n_layers * m
        faces.append((top_center, top0 + k, top0 + kn))
    v = np.asarray(verts, dtype=np.float64)
    f = ensure_outward(v, np.asarray(faces, dtype=np.int64))
    return v, f


# ---------------------------------------------------------------------------
# IO


def weld_vertices(tri_verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge exactly-equal vertices of a triangle soup into an indexed mesh."""
    flat = tri_verts.reshape(-1, 3)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    faces = inv.reshape(-1, 3).astype(np.int64)
    return uniq, faces


def load_stl(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            rec = np.frombuffer(
                data,
                dtype=np.dtype(
                    [("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]
                ),
                count=count,
                offset=84,
            )
            return weld_vertices(rec["v"].astype(np.float64))
    # ASCII fallback
    tris = []
    cur: list[list[float]] = []
    for line in data.decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if parts[:1] == ["vertex"]:
            cur.append([float(x) for x in parts[1:4]])
            if len(cur) == 3:
                tris.append(cur)
                cur = []
    if not tris:
        raise MeshError(f"no triangles found in STL file {path!r}")
    return weld_vertices(np.asarray(tris, dtype=np.float64))


def load_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):  # fan triangulation
                    faces.append((idx[0], idx[k], idx[k + 1]))
    if not faces:
        raise MeshError(f"no faces found in OBJ file {path!r}")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def load_mesh(path: str) -> tuple[np.ndarray, np.ndarray]:
    lower = path.lower()
    if lower.endswith(".stl"):
        return load_stl(path)
    if lower.endswith(".obj"):
        return load_obj(path)
    raise MeshError(f"unsupported mesh format: {path!r} (expected .stl or .obj)")


def save_obj(path: str, vertices: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w") as fh:
        for v in vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_stl(path: str, vertices: np.ndarray, faces: np.ndarray) -> None:
    tri = vertices[faces]  # (T, 3, 3)
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norms > 0, n / np.maximum(norms, 1e-300), 0.0)
    rec = np.zeros(
        len(faces),
        dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
    )
    rec["n"] = n
    rec["v"] = tri
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", len(faces)))
        fh.write(rec.tobytes())
