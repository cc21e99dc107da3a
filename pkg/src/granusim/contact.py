"""Narrowphase contact detection, contact frames, and the projected
Jacobi contact-impulse solver.

Contact ownership: every contact belongs to exactly one particle i and
only that particle's velocity correction is written.  A particle pair in
contact therefore appears twice, once per owner, with opposite normals,
which yields equal-and-opposite corrections without shared writes.

Solver sweeps are Jacobi-synchronous: within a sweep every contact reads
the correction accumulated in previous sweeps only, and the sweep's
impulses are buffered before being applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .broadphase import SpatialHashmap, candidate_pairs_with_distances
from .scene import MaterialParams, RigidBody
from .sdf import penetration_depth

COINCIDENT_EPS = 1e-12
KIND_PARTICLE = 0
KIND_BODY = 1


class SolverError(RuntimeError):
    pass


def make_contact_frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal completion of a unit contact normal.

    Crosses the normal with the coordinate axis of its smallest-magnitude
    component, which is robust for every orientation including the poles.
    """
    e1 = np.asarray(normal, dtype=np.float64)
    n = np.linalg.norm(e1)
    if n < 1e-12:
        raise ValueError("contact normal must be nonzero")
    e2, e3 = contact_frames(e1[None, :] / n)
    return e2[0], e3[0]


def contact_frames(e1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized tangent-basis construction; (e1, e2, e3) right-handed."""
    m = len(e1)
    axis = np.abs(e1).argmin(axis=1)
    pick = np.zeros((m, 3))
    pick[np.arange(m), axis] = 1.0
    e2 = np.cross(e1, pick)
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    e3 = np.cross(e1, e2)
    return e2, e3


def project_friction_cone(
    b: np.ndarray, mu: float, psi: float | np.ndarray, alpha: float, dt: float
) -> np.ndarray:
    """Project a contact-frame impulse onto the Coulomb friction cone.

    Adds the stabilization term alpha*psi/dt to the normal component,
    clamps it non-negative, then rescales the tangential part so that
    ||b[1:]|| <= mu * b[0].
    """
    if mu < 0 or dt <= 0:
        raise ValueError("require mu >= 0 and dt > 0")
    b = np.array(b, dtype=np.float64)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    psi = np.broadcast_to(np.asarray(psi, dtype=np.float64), b.shape[0])
    b[:, 0] = np.maximum(b[:, 0] + alpha * psi / dt, 0.0)
    tnorm = np.hypot(b[:, 1], b[:, 2])
    lim = mu * b[:, 0]
    over = tnorm > lim
    scale = np.where(over, lim / np.maximum(tnorm, 1e-300), 1.0)
    b[:, 1] *= scale
    b[:, 2] *= scale
    return b[0] if single else b


@dataclass
class Contact:
    """A single contact pair, for inspection and tests."""

    kind: int  # KIND_PARTICLE or KIND_BODY
    i: int
    j: int  # particle index or body index
    e1: np.ndarray  # unit normal, pointing from j toward i
    e2: np.ndarray
    e3: np.ndarray
    psi: float

    @property
    def frame(self) -> np.ndarray:
        """Rotation mapping world vectors into (e1, e2, e3) coordinates."""
        return np.stack([self.e1, self.e2, self.e3])


@dataclass
class CandidateContacts:
    """Narrowphase results over all broadphase candidates (uncompressed).

    ``colliding`` marks the actual contacts; keeping the full candidate
    arrays lets the fused/inline pipeline modes solve without building a
    compacted contact list.
    """

    owner: np.ndarray  # (m,) owning particle index
    kind: np.ndarray  # (m,)
    other: np.ndarray  # (m,) particle or body index
    e1: np.ndarray  # (m, 3)
    psi: np.ndarray  # (m,)
    vj: np.ndarray  # (m, 3) neighbor velocity (body contacts only; pp filled at solve)
    colliding: np.ndarray  # (m,) bool
    n_pp_candidates: int = 0
    n_coincident: int = 0
    n_degenerate: int = 0

    def __len__(self) -> int:
        return len(self.owner)


class ContactSet:
    """Compressed list of actual contacts (sequence of :class:`Contact`)."""

    def __init__(self, cand: CandidateContacts | None = None):
        if cand is None:
            return
        keep = np.nonzero(cand.colliding)[0]
        self._init_arrays(
            cand.owner[keep],
            cand.kind[keep],
            cand.other[keep],
            cand.e1[keep],
            cand.psi[keep],
            cand.vj[keep],
            cand.n_pp_candidates,
            cand.n_coincident,
            cand.n_degenerate,
        )

    def _init_arrays(
        self, owner, kind, other, e1, psi, vj, n_pp_candidates, n_coincident, n_degenerate
    ):
        self.owner = owner
        self.kind = kind
        self.other = other
        self.e1 = e1
        self.psi = psi
        self.vj = vj
        self.e2, self.e3 = contact_frames(self.e1) if len(self.owner) else (
            np.zeros((0, 3)),
            np.zeros((0, 3)),
        )
        self.n_pp_candidates = n_pp_candidates
        self.n_coincident = n_coincident
        self.n_degenerate = n_degenerate

    def __len__(self) -> int:
        return len(self.owner)

    def __getitem__(self, k: int) -> Contact:
        return Contact(
            kind=int(self.kind[k]),
            i=int(self.owner[k]),
            j=int(self.other[k]),
            e1=self.e1[k],
            e2=self.e2[k],
            e3=self.e3[k],
            psi=float(self.psi[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def pair_set(self) -> set[tuple[int, int]]:
        """Undirected particle-particle contact pairs (i < j)."""
        pp = self.kind == KIND_PARTICLE
        a = np.minimum(self.owner[pp], self.other[pp])
        b = np.maximum(self.owner[pp], self.other[pp])
        return set(zip(a.tolist(), b.tolist()))


def _near_body(positions: np.ndarray, r: float, body: RigidBody) -> np.ndarray:
    """Indices of particles that could possibly touch the body.

    Conservative world-AABB prefilter from the geometry's local contact
    bounds; unbounded geometries (half-spaces, tube walls) return all.
    """
    bounds = body.geometry.contact_bounds(r)
    if bounds is None:
        return np.arange(len(positions), dtype=np.int64)
    lo, hi = bounds
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    world = corners @ body.pose[:3, :3].T + body.pose[:3, 3]
    wlo, whi = world.min(axis=0), world.max(axis=0)
    inside = np.all((positions >= wlo) & (positions <= whi), axis=1)
    return np.nonzero(inside)[0].astype(np.int64)


def narrowphase_candidates(
    positions: np.ndarray,
    r: float,
    ci: np.ndarray,
    cj: np.ndarray,
    bodies: list[RigidBody],
) -> CandidateContacts:
    """Evaluate the exact contact test on every candidate.

    Particle pair (i, j) collides iff ||x_i - x_j|| < 2r; each pair shows
    up once per owner with e1 pointing from j toward i.  Every particle is
    a candidate against every body; the body pass uses the signed-distance
    penetration test.
    """
    positions = np.asarray(positions, dtype=np.float64)
    d = positions[ci] - positions[cj]
    dist2 = np.einsum("ij,ij->i", d, d)
    return _assemble_candidates(positions, r, ci, cj, d, dist2, 0, bodies)


def narrowphase_from_hashmap(
    positions: np.ndarray,
    r: float,
    hmap: SpatialHashmap,
    bodies: list[RigidBody],
) -> CandidateContacts:
    """Fused broadphase traversal plus exact contact test.

    Produces the same contacts as :func:`candidate_pairs` followed by
    :func:`narrowphase_candidates`; the fused path keeps self-pairs in
    the candidate arrays (they are coincident, hence never contacts) and
    excludes them from the reported candidate count.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ci, cj, d, dist2, n_self = candidate_pairs_with_distances(hmap, positions)
    return _assemble_candidates(positions, r, ci, cj, d, dist2, n_self, bodies)


def narrowphase_contacts(
    positions: np.ndarray,
    r: float,
    hmap: SpatialHashmap,
    bodies: list[RigidBody],
) -> ContactSet:
    """Broadphase plus narrowphase compacted directly to a :class:`ContactSet`.

    Produces bit-identical contacts to ``ContactSet`` built from
    :func:`narrowphase_from_hashmap`, but skips the full-length candidate
    arrays: frames, depths, and bookkeeping are only materialized for the
    contacts that pass the exact test.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ci, cj, d, dist2, n_self = candidate_pairs_with_distances(hmap, positions)
    m_pp = len(ci)
    not_coincident = dist2 >= COINCIDENT_EPS * COINCIDENT_EPS
    colliding = dist2 < (2.0 * r) ** 2
    colliding &= not_coincident
    n_coincident = m_pp - int(np.count_nonzero(not_coincident)) - n_self
    hit = np.nonzero(colliding)[0]
    dist_hit = np.sqrt(dist2[hit])

    owners = [ci[hit]]
    kinds = [np.full(len(hit), KIND_PARTICLE, dtype=np.int64)]
    others = [cj[hit]]
    e1s = [d[hit] / dist_hit[:, None]]
    psis = [2.0 * r - dist_hit]
    vjs = [np.zeros((len(hit), 3))]
    n_degenerate = 0
    for b_idx, body in enumerate(bodies):
        near = _near_body(positions, r, body)
        pts = positions[near]
        bpsi, bnormal, bmask, ndeg = penetration_depth(body.geometry, body.pose, pts, r)
        n_degenerate += ndeg
        contact_pts = pts - bnormal * (r - bpsi)[:, None]
        bk = np.nonzero(bmask)[0]
        owners.append(near[bk])
        kinds.append(np.full(len(bk), KIND_BODY, dtype=np.int64))
        others.append(np.full(len(bk), b_idx, dtype=np.int64))
        e1s.append(bnormal[bk])
        psis.append(bpsi[bk])
        vjs.append(body.velocity_at(contact_pts)[bk])

    out = ContactSet()
    out._init_arrays(
        np.concatenate(owners),
        np.concatenate(kinds),
        np.concatenate(others),
        np.concatenate(e1s),
        np.concatenate(psis),
        np.concatenate(vjs),
        m_pp - n_self,
        n_coincident,
        n_degenerate,
    )
    return out


def _assemble_candidates(
    positions: np.ndarray,
    r: float,
    ci: np.ndarray,
    cj: np.ndarray,
    d: np.ndarray,
    dist2: np.ndarray,
    n_self: int,
    bodies: list[RigidBody],
) -> CandidateContacts:
    m_pp = len(ci)
    coincident = dist2 < COINCIDENT_EPS * COINCIDENT_EPS
    pp_colliding = (dist2 < (2.0 * r) ** 2) & ~coincident
    hit = np.nonzero(pp_colliding)[0]
    dist_hit = np.sqrt(dist2[hit])

    body_results = []
    n_degenerate = 0
    for b_idx, body in enumerate(bodies):
        near = _near_body(positions, r, body)
        pts = positions[near]
        bpsi, bnormal, bmask, ndeg = penetration_depth(body.geometry, body.pose, pts, r)
        n_degenerate += ndeg
        contact_pts = pts - bnormal * (r - bpsi)[:, None]
        body_results.append((near, b_idx, bpsi, bnormal, bmask, body.velocity_at(contact_pts)))

    # Output arrays are preallocated once; alias candidates dominate the
    # candidate count, so they get no frame or depth and no extra copies.
    total = m_pp + sum(len(t[0]) for t in body_results)
    owner = np.empty(total, dtype=np.int64)
    kind = np.full(total, KIND_PARTICLE, dtype=np.int64)
    other = np.empty(total, dtype=np.int64)
    e1 = np.zeros((total, 3))
    psi = np.zeros(total)
    vj = np.zeros((total, 3))
    colliding = np.empty(total, dtype=bool)

    owner[:m_pp] = ci
    other[:m_pp] = cj
    colliding[:m_pp] = pp_colliding
    e1[hit] = d[hit] / dist_hit[:, None]
    psi[hit] = 2.0 * r - dist_hit

    off = m_pp
    for near, b_idx, bpsi, bnormal, bmask, bvj in body_results:
        sl = slice(off, off + len(near))
        owner[sl] = near
        kind[sl] = KIND_BODY
        other[sl] = b_idx
        e1[sl] = bnormal
        psi[sl] = bpsi
        vj[sl] = bvj
        colliding[sl] = bmask
        off += len(near)

    return CandidateContacts(
        owner=owner,
        kind=kind,
        other=other,
        e1=e1,
        psi=psi,
        vj=vj,
        colliding=colliding,
        n_pp_candidates=m_pp - n_self,
        n_coincident=int(coincident.sum()) - n_self,
        n_degenerate=n_degenerate,
    )


def detect_contacts(
    positions: np.ndarray,
    r: float,
    hmap: SpatialHashmap,
    bodies: list[RigidBody] | None = None,
) -> ContactSet:
    """Detection pass only: broadphase candidates filtered by the exact test."""
    return narrowphase_contacts(np.asarray(positions, float), r, hmap, bodies or [])


@dataclass
class ImpulseBuffer:
    """Per-particle velocity corrections plus solver diagnostics."""

    delta_v: np.ndarray
    max_cone_violation: float = 0.0
    min_normal_impulse: float = 0.0
    body_momentum: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    n_contacts: int = 0


def solve_contacts_pja(
    contacts: ContactSet | CandidateContacts,
    velocities: np.ndarray,
    params: MaterialParams,
    n_bodies: int = 0,
    inline_narrowphase_mask: bool = False,
    refresh_candidates=None,
) -> ImpulseBuffer:
    """Projected Jacobi sweeps over a contact (or masked candidate) list.

    Runs ``params.solver_iterations`` sweeps.  Per contact the predicted
    relative velocity u = (v_i + dv_i) - gamma*(v_j + dv_j) + dt*g is
    expressed in the contact frame, where dv reads the corrections
    accumulated in previous sweeps; the impulse candidate b = -frame(u)
    is projected onto
    the Coulomb cone (with the alpha*psi/dt stabilization bias on the
    normal), scaled by the inverse of the contact's effective-mass factor
    (1/m_i + 1/m_j, so 1/2 for an equal-mass pair, 1 against a
    kinematic body), and accumulated into dv_i.  The scaling is the
    diagonal preconditioner of the underlying complementarity system;
    without it an equal-mass pair reflects its relative velocity instead
    of arresting it, and columns of resting particles gain energy.

    With ``inline_narrowphase_mask`` the input is the uncompressed
    candidate array and non-colliding candidates are masked to zero every
    sweep, which reproduces the inline detect-and-solve pipeline ordering.
    ``refresh_candidates`` (a zero-argument callable returning a fresh
    CandidateContacts) additionally redoes the narrowphase inside every
    sweep, matching the naive single-loop pipeline's cost profile while
    producing bitwise-identical results.
    """
    velocities = np.asarray(velocities, dtype=np.float64)
    n = len(velocities)
    dv = np.zeros((n, 3))
    body_momentum = np.zeros((max(n_bodies, 0), 3))
    m = len(contacts.owner)
    if m == 0:
        return ImpulseBuffer(delta_v=dv, body_momentum=body_momentum)

    own = contacts.owner
    is_pp = contacts.kind == KIND_PARTICLE
    psi = contacts.psi
    e1 = contacts.e1
    if inline_narrowphase_mask:
        mask = np.asarray(contacts.colliding, dtype=bool)
        e2, e3 = contact_frames(np.where(mask[:, None], e1, [1.0, 0.0, 0.0]))
    else:
        mask = None
        e2, e3 = contacts.e2, contacts.e3

    # Body surface velocities are fixed; a particle neighbor's velocity is
    # its start-of-step value plus the correction accumulated in previous
    # sweeps (read inside the loop), so both owners of a pair see the same
    # relative velocity and converge to a consistent impulse.
    vj0 = contacts.vj.copy()
    other = contacts.other
    pp_idx = np.nonzero(is_pp)[0]
    vj0[pp_idx] = velocities[other[pp_idx]]

    gdt = params.timestep * params.gravity
    mu = params.friction
    bias = params.baumgarte_alpha * psi / params.timestep
    gamma = params.gamma

    is_body_contact = contacts.kind == KIND_BODY
    # inverse effective mass ratio: both partners of a particle pair are
    # mobile, so the owner receives half the corrective impulse
    eff = np.where(is_pp, 0.5, 1.0)
    max_violation = 0.0
    min_normal = np.inf
    for sweep in range(params.solver_iterations):
        if refresh_candidates is not None and sweep > 0:
            fresh = refresh_candidates()
            e1, psi = fresh.e1, fresh.psi
            mask = np.asarray(fresh.colliding, dtype=bool)
            e2, e3 = contact_frames(np.where(mask[:, None], e1, [1.0, 0.0, 0.0]))
            bias = params.baumgarte_alpha * psi / params.timestep
        vj = vj0.copy()
        vj[pp_idx] += dv[other[pp_idx]]
        u = velocities[own] - gamma * vj + gdt + dv[own]
        b1 = np.maximum(-np.einsum("ij,ij->i", u, e1) + bias, 0.0)
        b2 = -np.einsum("ij,ij->i", u, e2)
        b3 = -np.einsum("ij,ij->i", u, e3)
        tnorm = np.hypot(b2, b3)
        lim = mu * b1
        scale = np.where(tnorm > lim, lim / np.maximum(tnorm, 1e-300), 1.0)
        b2 *= scale
        b3 *= scale
        if mask is not None:
            b1 = np.where(mask, b1, 0.0)
            b2 = np.where(mask, b2, 0.0)
            b3 = np.where(mask, b3, 0.0)
        imp = (e1 * b1[:, None] + e2 * b2[:, None] + e3 * b3[:, None]) * eff[:, None]
        dv_next = dv.copy()
        np.add.at(dv_next, own, imp)
        dv = dv_next
        if n_bodies and is_body_contact.any():
            # reaction momentum transferred to each body this sweep
            np.add.at(
                body_momentum,
                contacts.other[is_body_contact],
                -params.particle_mass * imp[is_body_contact],
            )
        live = mask if mask is not None else slice(None)
        tn = np.hypot(b2, b3)
        viol = tn[live] - mu * b1[live]
        if viol.size:
            max_violation = max(max_violation, float(viol.max()))
            min_normal = min(min_normal, float(b1[live].min()))

    if not np.all(np.isfinite(dv)):
        bad_particles = np.nonzero(~np.isfinite(dv).all(axis=1))[0]
        bad_contacts = np.nonzero(np.isin(own, bad_particles))[0]
        raise SolverError(
            f"non-finite velocity correction for particles {bad_particles[:5].tolist()} "
            f"(contacts {bad_contacts[:5].tolist()})"
        )

    n_live = int(mask.sum()) if mask is not None else m
    return ImpulseBuffer(
        delta_v=dv,
        max_cone_violation=max_violation,
        min_normal_impulse=float(min_normal) if np.isfinite(min_normal) else 0.0,
        body_momentum=body_momentum,
        n_contacts=n_live,
    )
