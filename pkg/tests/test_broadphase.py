import numpy as np
import pytest

from granusim.broadphase import (
    CELL_OFFSET,
    EMPTY,
    HASH_PRIMES,
    SpatialHashmap,
    brute_force_pairs,
    build_hashmap,
    candidate_pairs,
    default_table_size,
    position_cells,
    query_candidates,
    round_half_away,
    spatial_hash,
)


def reference_hash(cell, n_h):
    # independent evaluation of the cell-hash rule: xor of prime-scaled
    # offset coordinates reduced with the double-mod trick, all in python
    # ints (arbitrary precision) truncated to 64-bit two's complement
    acc = 0
    for c, p in zip(cell, (73856093, 19349663, 83492791)):
        term = (int(c) - 100) * p
        term = ((term + 2**63) % 2**64) - 2**63  # wrap to int64
        acc ^= term & 0xFFFFFFFFFFFFFFFF
    acc = ((acc + 2**63) % 2**64) - 2**63
    return ((acc % n_h) + n_h) % n_h


def serial_reference_build(positions, r, n_h):
    """Literal head-insertion loop, one particle at a time."""
    table = np.full(n_h, EMPTY, dtype=np.int64)
    nxt = np.full(len(positions), EMPTY, dtype=np.int64)
    cells = position_cells(positions, r)
    for i in range(len(positions)):
        h = spatial_hash(cells[i], n_h)
        nxt[i] = table[h]
        table[h] = i
    return table, nxt


class TestSpatialHash:
    def test_modulus_one_is_zero(self):
        for cell in ([0, 0, 0], [5, -3, 2], [-100, 100, 7]):
            assert spatial_hash(np.array(cell), 1) == 0

    def test_same_cell_same_hash(self):
        r = 0.05
        a = np.array([0.01, 0.02, 0.03])
        b = np.array([0.03, 0.01, 0.04])  # same cell after rounding
        ca, cb = position_cells(np.stack([a, b]), r)
        assert np.array_equal(ca, cb)
        assert spatial_hash(ca, 512) == spatial_hash(cb, 512)

    def test_origin_cell_against_independent_script(self):
        assert spatial_hash(np.array([0, 0, 0]), 65536) == reference_hash((0, 0, 0), 65536)

    def test_random_cells_against_independent_script(self):
        rng = np.random.default_rng(7)
        cells = rng.integers(-500, 500, size=(200, 3))
        for n_h in (64, 1000, 65536):
            got = spatial_hash(cells, n_h)
            want = [reference_hash(c, n_h) for c in cells]
            assert np.array_equal(got, want)

    def test_hash_in_range(self):
        rng = np.random.default_rng(0)
        cells = rng.integers(-1000, 1000, size=(500, 3))
        h = spatial_hash(cells, 37)
        assert h.min() >= 0 and h.max() < 37


class TestRounding:
    def test_round_half_away_from_zero(self):
        x = np.array([0.5, -0.5, 1.5, -1.5, 0.4999, -0.4999, 2.5])
        assert np.array_equal(round_half_away(x), [1, -1, 2, -2, 0, 0, 3])

    def test_negative_cells(self):
        cells = position_cells(np.array([[-0.30, -0.01, 0.0]]), 0.05)
        assert np.array_equal(cells[0], [-3, 0, 0])


class TestBuildHashmap:
    def test_single_particle(self):
        pos = np.array([[0.3, 0.2, 0.1]])
        m = build_hashmap(pos, 0.05, 16)
        h = spatial_hash(position_cells(pos, 0.05)[0], 16)
        assert m.table[h] == 0
        assert m.next[0] == EMPTY
        assert np.sum(m.table != EMPTY) == 1

    def test_two_in_one_cell(self):
        pos = np.array([[0.01, 0.0, 0.0], [0.02, 0.0, 0.0]])
        m = build_hashmap(pos, 0.05, 8)
        h = spatial_hash(position_cells(pos, 0.05)[0], 8)
        assert sorted(m.chain(h)) == [0, 1]

    def test_partition_invariant(self):
        rng = np.random.default_rng(11)
        pos = rng.uniform(-1, 1, size=(300, 3))
        m = build_hashmap(pos, 0.05, 128)
        seen = []
        for h in range(128):
            seen.extend(m.chain(h))
        assert sorted(seen) == list(range(300))

    def test_chain_multisets_match_serial_reference(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(-2, 2, size=(500, 3))
        n_h = 256
        m = build_hashmap(pos, 0.05, n_h)
        table, nxt = serial_reference_build(pos, 0.05, n_h)
        for h in range(n_h):
            ref_chain = []
            i = table[h]
            while i != EMPTY:
                ref_chain.append(int(i))
                i = nxt[i]
            assert sorted(m.chain(h)) == sorted(ref_chain)

    def test_insertion_order_changes_chains_not_sets(self):
        rng = np.random.default_rng(5)
        pos = rng.uniform(-1, 1, size=(100, 3))
        m1 = build_hashmap(pos, 0.05, 64)
        m2 = build_hashmap(pos, 0.05, 64, insertion_order=rng.permutation(100))
        for h in range(64):
            assert sorted(m1.chain(h)) == sorted(m2.chain(h))

    def test_default_table_size(self):
        assert default_table_size(100) == 256
        assert default_table_size(1024) == 2048
        assert default_table_size(1) == 2


class TestQueries:
    def test_touching_pair_found_both_ways(self):
        r = 0.05
        pos = np.array([[0.0, 0.0, 0.0], [1.9 * r, 0.0, 0.0]])
        m = build_hashmap(pos, r, 16)
        assert 1 in query_candidates(m, pos, 0)
        assert 0 in query_candidates(m, pos, 1)

    def test_distant_pair_not_found(self):
        r = 0.05
        pos = np.array([[0.0, 0.0, 0.0], [10 * r, 0.0, 0.0]])
        m = build_hashmap(pos, r, 4096)
        c0, c1 = position_cells(pos, r)
        # only a valid probe when the far cell does not alias into the
        # neighborhood; with this table size it does not
        neigh = {
            spatial_hash(c0 + np.array([a, b, c]), 4096)
            for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
        }
        assert spatial_hash(c1, 4096) not in neigh
        assert 1 not in query_candidates(m, pos, 0)
        assert 0 not in query_candidates(m, pos, 1)

    def test_superset_of_brute_force(self):
        rng = np.random.default_rng(17)
        pos = rng.uniform(0, 1, size=(500, 3))
        r = 0.03
        m = build_hashmap(pos, r, default_table_size(500))
        oracle = brute_force_pairs(pos, r)
        for i, j in oracle:
            assert j in query_candidates(m, pos, i), (i, j)
            assert i in query_candidates(m, pos, j), (j, i)

    def test_candidate_pairs_match_query_per_particle(self):
        rng = np.random.default_rng(23)
        pos = rng.uniform(0, 0.5, size=(200, 3))
        m = build_hashmap(pos, 0.04, 128)
        ci, cj = candidate_pairs(m)
        grouped = {}
        for a, b in zip(ci, cj):
            grouped.setdefault(int(a), set()).add(int(b))
        for i in range(200):
            assert grouped.get(i, set()) == set(query_candidates(m, pos, i))

    def test_contact_set_stable_across_rebuild_orders(self):
        rng = np.random.default_rng(29)
        pos = rng.uniform(0, 1, size=(300, 3))
        r = 0.05
        oracle = brute_force_pairs(pos, r)

        def contacts(order):
            m = build_hashmap(pos, r, 512, insertion_order=order)
            ci, cj = candidate_pairs(m)
            d2 = np.sum((pos[ci] - pos[cj]) ** 2, axis=1)
            keep = d2 <= (2 * r) ** 2
            return {(min(a, b), max(a, b)) for a, b in zip(ci[keep], cj[keep])}

        assert contacts(None) == contacts(rng.permutation(300))
        assert contacts(None) == oracle


class TestBruteForce:
    def test_empty_and_single(self):
        assert brute_force_pairs(np.zeros((0, 3)), 0.1) == set()
        assert brute_force_pairs(np.zeros((1, 3)), 0.1) == set()

    def test_boundary_inclusive(self):
        pos = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
        assert brute_force_pairs(pos, 0.1) == {(0, 1)}

    def test_count_matches_independent_recomputation(self):
        rng = np.random.default_rng(41)
        pos = rng.uniform(0, 1, size=(100, 3))
        r = 0.06
        got = brute_force_pairs(pos, r)
        count = 0
        for i in range(100):
            for j in range(i + 1, 100):
                if np.dot(pos[i] - pos[j], pos[i] - pos[j]) <= (2 * r) ** 2:
                    count += 1
        assert len(got) == count


def test_hashmap_dataclass_fields():
    pos = np.array([[0.0, 0.0, 0.0]])
    m = build_hashmap(pos, 0.05, 8)
    assert isinstance(m, SpatialHashmap)
    assert m.n_h == 8
    assert m.cell_size == pytest.approx(0.1)
    assert list(HASH_PRIMES) == [73856093, 19349663, 83492791]
    assert CELL_OFFSET == 100
