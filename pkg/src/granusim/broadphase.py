"""Spatial-hash broadphase for fixed-radius neighbor candidate generation.

Particle positions are discretized into cubic cells of edge length ``2r``.
Each cell hashes to a bucket of a linked hash table stored as two flat
integer arrays (``table`` holds chain heads, ``next`` holds chain links),
so the whole structure is two preallocated arrays regardless of occupancy.

Distinct cells may alias to the same bucket.  Chain traversal never
re-checks cell coordinates; aliased particles simply show up as extra
candidates and are rejected by the narrowphase distance test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Hashing primes and cell offset.  The offset is kept verbatim from the
# hashing rule this implements; hashes are reduced with a non-negative
# modulus (((v mod n_h) + n_h) mod n_h) so negative cells are well defined.
HASH_PRIMES = (73856093, 19349663, 83492791)
CELL_OFFSET = 100

EMPTY = -1

_NEIGHBOR_OFFSETS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
    dtype=np.int64,
)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def position_cells(positions: np.ndarray, r: float) -> np.ndarray:
    """Integer cell coordinates for particle centers, cell size 2r."""
    return round_half_away(np.asarray(positions) / (2.0 * r)).astype(np.int64)


def spatial_hash(cells: np.ndarray, n_h: int) -> np.ndarray:
    """Hash integer cell coordinates into [0, n_h).

    XOR of per-axis prime products of offset cell coordinates, computed in
    int64 two's-complement arithmetic, reduced to a non-negative residue.
    """
    if n_h < 1:
        raise ValueError("hash table size must be >= 1")
    c = np.asarray(cells, dtype=np.int64)
    t = (c - CELL_OFFSET) * np.asarray(HASH_PRIMES, dtype=np.int64)
    h = t[..., 0] ^ t[..., 1] ^ t[..., 2]
    return h % np.int64(n_h)


def default_table_size(n_p: int) -> int:
    """Heuristic table size: twice the particle count, next power of two."""
    return max(1, 1 << int(np.ceil(np.log2(max(2 * n_p, 1)))))


@dataclass
class SpatialHashmap:
    """Linked hash table over discretized 3D cells.

    ``table[h]`` is the head particle index of bucket h (EMPTY if none);
    ``next[i]`` links particle i to the rest of its chain.  ``cells`` and
    ``hashes`` cache the discretization used at build time.
    """

    table: np.ndarray
    next: np.ndarray
    cell_size: float
    n_h: int
    cells: np.ndarray
    hashes: np.ndarray

    def chain(self, h: int) -> list[int]:
        """Particle indices reachable from bucket h, in chain order."""
        out = []
        i = int(self.table[h])
        while i != EMPTY:
            out.append(i)
            i = int(self.next[i])
        return out


def build_hashmap(
    positions: np.ndarray,
    r: float,
    n_h: int,
    insertion_order: np.ndarray | None = None,
) -> SpatialHashmap:
    """Build the linked hashmap from particle positions.

    Reproduces head insertion under compare-and-swap semantics: inserting
    particles in ``insertion_order`` leaves each chain holding its bucket's
    particles in reverse insertion order.  The default order (0..n_p-1) is
    the serial deterministic mode; passing a permutation emulates the
    nondeterministic chain orderings of a parallel build.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must have shape (n, 3)")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    n = positions.shape[0]
    cells = position_cells(positions, r)
    hashes = spatial_hash(cells, n_h)

    nxt = np.full(n, EMPTY, dtype=np.int64)
    table = np.full(n_h, EMPTY, dtype=np.int64)
    if n:
        if insertion_order is None:
            rank = np.arange(n)
        else:
            rank = np.empty(n, dtype=np.int64)
            rank[np.asarray(insertion_order)] = np.arange(n)
        # Sort by (bucket, insertion rank): within a bucket, each particle's
        # chain successor is the one inserted just before it.
        order = np.lexsort((rank, hashes))
        hs = hashes[order]
        same = hs[1:] == hs[:-1]
        nxt[order[1:][same]] = order[:-1][same]
        last = np.r_[hs[1:] != hs[:-1], True]
        table[hs[last]] = order[last]
    return SpatialHashmap(
        table=table, next=nxt, cell_size=2.0 * r, n_h=n_h, cells=cells, hashes=hashes
    )


def query_candidates(hmap: SpatialHashmap, positions: np.ndarray, i: int) -> list[int]:
    """Candidate neighbor indices of particle i (chain walk over 27 cells).

    Guaranteed superset of all j != i with ||x_i - x_j|| <= 2r; may include
    non-colliding particles from cell aliasing.
    """
    nb = hmap.cells[i][None, :] + _NEIGHBOR_OFFSETS
    buckets = np.unique(spatial_hash(nb, hmap.n_h))
    out: list[int] = []
    for h in buckets:
        for j in hmap.chain(int(h)):
            if j != i:
                out.append(j)
    return out


def _candidate_csr(hmap: SpatialHashmap):
    """Directed candidate enumeration in CSR form.

    Returns (ci, gather, order, row_counts): candidate k pairs particle
    ci[k] with particle order[gather[k]].  For each particle the 27
    neighbor-cell buckets are visited (deduplicated), and every particle
    stored in those buckets is a candidate, including the particle itself
    (each particle sits in exactly one bucket, so it self-pairs once).
    """
    n = hmap.cells.shape[0]
    # Bucket contents in CSR layout: particles sorted by bucket hash.
    order = np.argsort(hmap.hashes, kind="stable")
    hs = hmap.hashes[order]
    starts = np.searchsorted(hs, np.arange(hmap.n_h + 1))

    nb = hmap.cells[:, None, :] + _NEIGHBOR_OFFSETS[None, :, :]
    H = spatial_hash(nb.reshape(-1, 3), hmap.n_h).reshape(n, 27)
    H.sort(axis=1)
    dup = np.zeros(H.shape, dtype=bool)
    dup[:, 1:] = H[:, 1:] == H[:, :-1]

    counts = starts[H + 1] - starts[H]
    counts[dup] = 0
    row_counts = counts.sum(axis=1)
    ci = np.repeat(np.arange(n, dtype=np.int64), row_counts)

    flat_counts = counts.ravel()
    nz = flat_counts > 0
    seg_starts = starts[H.ravel()[nz]]
    seg_counts = flat_counts[nz]
    offs = np.cumsum(seg_counts) - seg_counts
    gather = np.arange(seg_counts.sum(), dtype=np.int64)
    gather += np.repeat(seg_starts - offs, seg_counts)
    return ci, gather, order, row_counts


def candidate_pairs(hmap: SpatialHashmap) -> tuple[np.ndarray, np.ndarray]:
    """All directed candidate pairs (i, j) with j != i, vectorized.

    Equivalent to running :func:`query_candidates` for every particle.
    """
    n = hmap.cells.shape[0]
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    ci, gather, order, _ = _candidate_csr(hmap)
    cj = order[gather]
    keep = ci != cj
    return ci[keep], cj[keep]


def candidate_pairs_with_distances(
    hmap: SpatialHashmap, positions: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Directed candidate pairs with separation vectors, self-pairs kept.

    Returns (ci, cj, d, dist2, n_self) where d = x_i - x_j and dist2 is
    its squared norm.  Self-pairs (one per particle, distance zero) are
    retained so no filtering pass over the candidate arrays is needed;
    they fall below any contact threshold and callers subtract n_self
    from candidate counts.  Neighbor positions are gathered through the
    bucket-sorted layout, which is sequential per bucket segment.
    """
    n = hmap.cells.shape[0]
    if n == 0:
        empty = np.empty(0, np.int64)
        return empty, empty, np.empty((0, 3)), np.empty(0), 0
    ci, gather, order, row_counts = _candidate_csr(hmap)
    cj = order[gather]
    positions = np.asarray(positions, dtype=np.float64)
    d = np.repeat(positions, row_counts, axis=0)
    d -= positions[order][gather]
    dist2 = np.einsum("ij,ij->i", d, d)
    return ci, cj, d, dist2, n


def brute_force_pairs(positions: np.ndarray, r: float) -> set[tuple[int, int]]:
    """Exact all-pairs neighbor oracle: ||x_i - x_j||^2 <= (2r)^2, i < j.

    O(n^2); the test oracle the broadphase is checked against.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    out: set[tuple[int, int]] = set()
    lim = (2.0 * r) ** 2
    for i in range(n - 1):
        d = positions[i + 1 :] - positions[i]
        hits = np.nonzero(np.einsum("ij,ij->i", d, d) <= lim)[0]
        for k in hits:
            out.add((i, i + 1 + int(k)))
    return out
