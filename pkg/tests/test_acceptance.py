"""End-to-end acceptance suite.

Each test covers one acceptance criterion and reports a single PASS/FAIL
line in the terminal summary (see conftest).  The expensive fixtures
(settled multi-thousand-particle columns) are built once per session and
cloned by the tests that consume them.
"""

import time

import numpy as np
import pytest

from granusim.broadphase import brute_force_pairs, build_hashmap, default_table_size
from granusim.contact import ContactSet, detect_contacts, narrowphase_candidates, solve_contacts_pja
from granusim.cli import bench, clone_scene, resolve_scene
from granusim.envs import (
    GoalBox,
    bulldozer_reward,
    make_column_scene,
    make_gear_tower_scene,
)
from granusim.kinematics import StaticDriver, identity_pose, make_pose, so3_exp
from granusim.meshes import make_icosphere
from granusim.scene import (
    CylinderRegion,
    MaterialParams,
    ParticleSet,
    RigidBody,
    Scene,
    seed_particles_grid,
)
from granusim.sdf import HalfSpace, Sphere, bake_mesh_sdf, penetration_depth
from granusim.stepper import PipelineMode, run, save_trajectory, step

SETTLE_STEPS = 12000
COLUMN_N = 2000


@pytest.fixture(scope="module")
def settled_column():
    """2000-particle column settled to rest; hash table sized to keep the
    candidate statistics free of alias artifacts."""
    scene = make_column_scene(COLUMN_N, seed=0)
    scene.hashmap_size = 65536
    _, reports = run(scene, SETTLE_STEPS)
    assert reports[-1].kinetic_energy < 50.0, "column failed to settle"
    return scene


def test_broadphase_oracle_equivalence(criterion):
    with criterion("PRIMARY", "broadphase oracle equivalence, 50x500 random configs"):
        rng = np.random.default_rng(123)
        r = 0.03
        t0 = time.perf_counter()
        for _ in range(50):
            pos = rng.uniform(0.0, 1.0, size=(500, 3))
            m = build_hashmap(pos, r, default_table_size(500))
            got = detect_contacts(pos, r, m).pair_set()
            want = brute_force_pairs(pos, r)
            assert got == want
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"oracle comparison took {elapsed:.1f}s"


def test_friction_cone_feasibility(settled_column, criterion):
    with criterion("PRIMARY", "friction-cone feasibility, 2000 particles x 1000 steps"):
        scene = clone_scene(settled_column)
        _, reports = run(scene, 1000)
        worst = max(r.max_cone_violation for r in reports)
        least = min(r.min_normal_impulse for r in reports)
        assert worst <= 1e-9, f"cone violation {worst:.2e}"
        assert least >= 0.0, f"negative normal impulse {least:.2e}"


def test_ballistic_exactness(criterion):
    with criterion("PRIMARY", "ballistic closed form to 1e-12 relative over 1000 steps"):
        x0 = np.array([0.3, -0.2, 50.0])
        v0 = np.array([1.0, 2.0, 0.5])
        params = MaterialParams()
        scene = Scene(
            particles=ParticleSet(x0.copy()[None, :], v0.copy()[None, :]),
            bodies=[],
            params=params,
        )
        n = 1000
        for _ in range(n):
            step(scene)
        dt, g = params.timestep, params.gravity
        want_v = v0 + n * dt * g
        want_x = x0 + n * dt * v0 + dt * dt * g * n * (n + 1) / 2.0
        scale_x = max(1.0, float(np.abs(want_x).max()))
        scale_v = max(1.0, float(np.abs(want_v).max()))
        assert np.abs(scene.particles.positions[0] - want_x).max() / scale_x <= 1e-12
        assert np.abs(scene.particles.velocities[0] - want_v).max() / scale_v <= 1e-12


def test_single_contact_analytic_oracle(criterion):
    with criterion("PRIMARY", "single-contact oracles: resting residual, head-on pair"):
        params = MaterialParams(friction=0.5)
        r = params.radius
        floor = RigidBody(HalfSpace(), driver=StaticDriver(identity_pose()), name="floor")

        # resting particle: velocity change cancels gravity along the normal
        pos = np.array([[0.0, 0.0, r * (1.0 - 1e-9)]])
        vel = np.zeros((1, 3))
        m = build_hashmap(pos, r, 16)
        cand = narrowphase_candidates(pos, r, *_pairs(m), [floor])
        buf = solve_contacts_pja(ContactSet(cand), vel, params, n_bodies=1)
        residual = params.timestep * params.gravity[2] + buf.delta_v[0, 2]
        assert abs(residual) <= 1e-6, f"resting residual {residual:.2e}"

        # head-on symmetric pair: equal and opposite, non-penetrating after
        params0 = MaterialParams(friction=0.0, gravity=np.zeros(3))
        pos = np.array([[0.0, 0.0, 0.0], [1.9 * r, 0.0, 0.0]])
        vel = np.array([[0.4, 0.0, 0.0], [-0.4, 0.0, 0.0]])
        m = build_hashmap(pos, r, 16)
        cand = narrowphase_candidates(pos, r, *_pairs(m), [])
        buf = solve_contacts_pja(ContactSet(cand), vel, params0, n_bodies=0)
        assert np.abs(buf.delta_v[0] + buf.delta_v[1]).max() <= 1e-9
        post = vel + buf.delta_v
        assert np.dot(post[1] - post[0], [1.0, 0.0, 0.0]) >= -1e-9


def _pairs(hmap):
    from granusim.broadphase import candidate_pairs

    return candidate_pairs(hmap)


def test_baumgarte_stabilization(settled_column, criterion):
    with criterion(
        "PRIMARY", "Baumgarte: penetration <= 0.15r and no KE growth over 5000 steps"
    ):
        scene = clone_scene(settled_column)
        r = scene.params.radius
        _, reports = run(scene, 5000)
        max_pen = max(rep.max_penetration for rep in reports)
        ke = np.array([rep.kinetic_energy for rep in reports])
        assert max_pen <= 0.15 * r, f"max penetration {max_pen / r:.3f} r"
        assert ke[-500:].mean() <= ke[:500].mean() + 1e-9, "kinetic energy grew"


def _pour_pile(mu: float, seed: int) -> float:
    params = MaterialParams(friction=mu)
    parts = seed_particles_grid(
        CylinderRegion([0.0, 0.0], 0.25, 0.05, 3.0),
        params.radius,
        jitter=0.2,
        rng=np.random.default_rng(seed),
    )
    scene = Scene(particles=parts, bodies=[RigidBody(HalfSpace(), name="floor")],
                  params=params)
    run(scene, 4000)
    return float(scene.particles.positions[:, 2].max())


def test_friction_mounding(criterion):
    with criterion("PRIMARY", "friction mounding: mu=0.5 pile taller than mu=0, 3 seeds"):
        for seed in (0, 1, 2):
            peak_frictionless = _pour_pile(0.0, seed)
            peak_frictional = _pour_pile(0.5, seed)
            assert peak_frictional > peak_frictionless, (
                f"seed {seed}: {peak_frictional:.3f} <= {peak_frictionless:.3f}"
            )


def test_sdf_fidelity(criterion):
    with criterion("PRIMARY", "SDF fidelity: bake error <= 1 spacing, rigid invariance"):
        verts, faces = make_icosphere(3, radius=1.0)
        spacing = 0.08
        grid = bake_mesh_sdf(verts, faces, spacing)
        rng = np.random.default_rng(7)
        pts = rng.uniform(grid.origin, grid.upper, size=(10000, 3))
        got = grid.distance(pts)
        want = Sphere(1.0).distance(pts)
        err = np.abs(got - want).max()
        assert err <= spacing, f"bake error {err:.4f} > spacing {spacing}"

        r = 0.1
        R = so3_exp(np.array([0.4, -0.3, 0.9]))
        t = np.array([1.3, -0.6, 0.2])
        sample = rng.uniform(-1.2, 1.2, size=(2000, 3))
        psi0, n0, hit0, _ = penetration_depth(grid, identity_pose(), sample, r)
        psi1, n1, hit1, _ = penetration_depth(grid, make_pose(R, t), sample @ R.T + t, r)
        assert np.array_equal(hit0, hit1)
        assert np.abs(psi1 - psi0).max() <= 1e-9
        assert np.abs(n1 - n0 @ R.T).max() <= 1e-9


def test_pipeline_equivalence_and_hit_rate(settled_column, criterion):
    with criterion(
        "PRIMARY",
        "pipeline equivalence (3 modes) and candidate hit rate in [5%, 35%]",
    ):
        n_steps = 300
        scenes = {m: clone_scene(settled_column) for m in PipelineMode}
        all_reports = {m: run(scenes[m], n_steps, mode=m)[1] for m in PipelineMode}
        ref = PipelineMode.TWO_LOOPS_SPLIT
        for m in PipelineMode:
            counts = [r.n_contacts for r in all_reports[m]]
            ref_counts = [r.n_contacts for r in all_reports[ref]]
            assert counts == ref_counts, f"{m.value} contact counts diverge"
            pos = scenes[m].particles.positions
            ref_pos = scenes[ref].particles.positions
            scale = max(1.0, float(np.abs(ref_pos).max()))
            assert np.abs(pos - ref_pos).max() / scale <= 1e-12
        hit = sum(r.n_contacts for r in all_reports[ref]) / max(
            sum(r.n_candidates for r in all_reports[ref]), 1
        )
        assert 0.05 <= hit <= 0.35, f"hit rate {hit:.3f} outside [0.05, 0.35]"


def test_hash_size_heuristic(criterion):
    with criterion(
        "PRIMARY", "hash-size sweep: 2n_p within 10% of best, under 5 minutes"
    ):
        t0 = time.perf_counter()
        n_p = 10000
        base = make_column_scene(n_p, seed=0)
        run(base, 1500)  # bring the column to rest
        speedups = {}
        for n_h in (n_p // 4, n_p // 2, n_p, 2 * n_p, 4 * n_p, 8 * n_p):
            scene = clone_scene(base)
            scene.hashmap_size = n_h
            res = bench(scene, 60, PipelineMode.TWO_LOOPS_SPLIT, warmup=10)
            speedups[n_h] = res.speedup
        elapsed = time.perf_counter() - t0
        best = max(speedups.values())
        at_heuristic = speedups[2 * n_p]
        assert at_heuristic >= 0.9 * best, (
            f"2n_p speedup {at_heuristic:.3f} vs best {best:.3f}: "
            f"{at_heuristic / best:.3f} of best"
        )
        assert elapsed < 300.0, f"sweep took {elapsed:.0f}s"


def test_scaling_shape(criterion):
    with criterion("PRIMARY", "wall time per step scales with exponent < 1.5 in n_p"):
        sizes = [1000, 3162, 10000, 31623, 100000]
        per_step = []
        for n in sizes:
            scene = make_gear_tower_scene(0, n, rng_seed=1)
            res = bench(scene, 20, PipelineMode.TWO_LOOPS_SPLIT, warmup=5)
            per_step.append(res.wall_per_step)
        slope = np.polyfit(np.log(sizes), np.log(per_step), 1)[0]
        assert slope < 1.5, f"scaling exponent {slope:.2f}"


def test_bulldozer_reward_and_count_preservation(criterion):
    with criterion(
        "PRIMARY", "bulldozer reward values and cyclic-boundary count preservation"
    ):
        goal = GoalBox([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        rng = np.random.default_rng(5)
        inside = rng.uniform(0.0, 1.0, size=(40, 3))
        assert bulldozer_reward(inside, goal) == pytest.approx(100.0, abs=1e-12)
        # hand-placed configurations: one outsider at known distance d
        for d, outsider in ((2.0, [3.0, 0.5, 0.5]),
                            (0.5, [0.5, -0.5, 0.5]),
                            (np.sqrt(3.0), [2.0, 2.0, 2.0])):
            pts = np.vstack([inside[:9], outsider])
            want = 9 * (100.0 / 10) - d / 10
            assert bulldozer_reward(pts, goal) == pytest.approx(want, abs=1e-12)

        scene = make_gear_tower_scene(2, 400, rng_seed=3)
        n0 = scene.particles.count
        lo, hi = scene.boundary.z_min, scene.boundary.z_max
        _, reports = run(scene, 10000)
        assert scene.particles.count == n0
        assert np.all(np.isfinite(scene.particles.positions))
        assert scene.particles.positions[:, 2].min() >= lo - 1e-9


def test_determinism_byte_identical(tmp_path, criterion):
    with criterion("PRIMARY", "fixed seed produces byte-identical trajectory files"):
        paths = []
        for tag in ("a", "b"):
            scene = resolve_scene("column:200", seed=4)
            traj, _ = run(scene, 500, snapshot_stride=25, record_velocities=True)
            p = tmp_path / f"{tag}.traj"
            save_trajectory(str(p), traj)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()
