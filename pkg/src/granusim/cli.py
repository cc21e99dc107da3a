"""Command-line entry point: run scenes, record trajectories, and execute
the performance studies (hash-size sweep, pipeline comparison, scaling).

Scene arguments accept either a YAML scene file path or a builtin spec:
``column:<n_particles>`` or ``gears:<n_bodies>,<n_particles>``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import meshes, sdf
from .envs import BulldozerEnv, make_column_scene, make_gear_tower_scene
from .scene import Scene, load_scene
from .stepper import PipelineMode, run, save_trajectory, step

DEFAULT_WARMUP = 50


class BenchError(RuntimeError):
    pass


@dataclass
class BenchResult:
    label: str
    n_steps: int
    wall_time: float
    simulated_time: float
    reports: list

    @property
    def speedup(self) -> float:
        return self.simulated_time / self.wall_time

    @property
    def wall_per_step(self) -> float:
        return self.wall_time / max(self.n_steps, 1)


def resolve_scene(spec: str, seed: int = 0) -> Scene:
    if spec.startswith("column:"):
        return make_column_scene(int(spec.split(":", 1)[1]), seed=seed)
    if spec.startswith("gears:"):
        nb, np_ = spec.split(":", 1)[1].split(",")
        return make_gear_tower_scene(int(nb), int(np_), rng_seed=seed)
    with open(spec) as fh:
        return load_scene(fh.read(), base_dir=os.path.dirname(spec) or ".")


def clone_scene(scene: Scene) -> Scene:
    return copy.deepcopy(scene)


def bench(
    scene: Scene,
    steps: int,
    mode: PipelineMode,
    warmup: int = DEFAULT_WARMUP,
    label: str = "",
) -> BenchResult:
    """Time ``steps`` simulation steps, excluding ``warmup`` untimed steps."""
    for _ in range(warmup):
        step(scene, mode)
    reports = []
    t0 = time.perf_counter()
    for k in range(steps):
        _, rep = step(scene, mode, step_index=k)
        reports.append(rep)
    wall = time.perf_counter() - t0
    return BenchResult(
        label=label,
        n_steps=steps,
        wall_time=wall,
        simulated_time=steps * scene.params.timestep,
        reports=reports,
    )


def print_report(pairs: list[tuple[str, object]]) -> None:
    for key, value in pairs:
        print(f"{key}: {value}")


def write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(args) -> int:
    scene = resolve_scene(args.scene, seed=args.seed)
    _apply_overrides(scene, args)
    mode = PipelineMode(args.mode)
    t0 = time.perf_counter()
    traj, reports = run(scene, args.steps, mode, snapshot_stride=args.snapshot_stride)
    wall = time.perf_counter() - t0
    if args.out:
        save_trajectory(args.out, traj)
    simulated = args.steps * scene.params.timestep
    pairs = [
        ("steps", args.steps),
        ("n_particles", scene.particles.count),
        ("simulated_time_s", simulated),
        ("wall_time_s", wall),
        ("speedup", simulated / wall if wall > 0 else float("inf")),
        ("snapshots", len(traj.positions)),
    ]
    if reports:
        pairs += [
            ("mean_contacts", float(np.mean([r.n_contacts for r in reports]))),
            ("mean_hit_rate", float(np.mean([r.candidate_hit_rate for r in reports]))),
            ("final_kinetic_energy_j", reports[-1].kinetic_energy),
            ("max_penetration_m", max(r.max_penetration for r in reports)),
        ]
    print_report(pairs)
    if args.csv:
        write_csv(args.csv, [p[0] for p in pairs], [[p[1] for p in pairs]])
    return 0


def cmd_bake(args) -> int:
    verts, faces = meshes.load_mesh(args.mesh)
    spacing = args.spacing or (verts.max(0) - verts.min(0)).max() / 64.0
    grid = sdf.bake_mesh_sdf(verts, faces, spacing, args.margin)
    sdf.save_grid(args.out, grid)
    print_report(
        [
            ("mesh", args.mesh),
            ("dims", "x".join(str(int(d)) for d in grid.dims)),
            ("spacing", spacing),
            ("out", args.out),
        ]
    )
    return 0


def cmd_sweep_hashsize(args) -> int:
    base = resolve_scene(args.scene, seed=args.seed)
    _apply_overrides(base, args)
    sizes = [int(s) for s in args.sizes.split(",")]
    if not sizes:
        raise BenchError("at least one hash table size is required")
    rows = []
    for n_h in sizes:
        scene = clone_scene(base)
        scene.hashmap_size = n_h
        res = bench(scene, args.steps, PipelineMode(args.mode), args.warmup, label=str(n_h))
        rows.append([n_h, res.speedup, res.wall_per_step])
    write_csv(args.out, ["hashmap_size", "speedup", "wall_per_step_s"], rows)
    return 0


def cmd_compare_pipelines(args) -> int:
    base = resolve_scene(args.scene, seed=args.seed)
    _apply_overrides(base, args)
    results = {}
    for mode in PipelineMode:
        res = bench(clone_scene(base), args.steps, mode, args.warmup, label=mode.value)
        results[mode] = res
    counts = {
        m: [r.n_contacts + r.n_body_contacts for r in res.reports]
        for m, res in results.items()
    }
    ref_mode = PipelineMode.TWO_LOOPS_SPLIT
    for mode, c in counts.items():
        if c != counts[ref_mode]:
            bad = next(k for k, (a, b) in enumerate(zip(c, counts[ref_mode])) if a != b)
            raise BenchError(
                f"pipeline equivalence violation: {mode.value} diverges from "
                f"{ref_mode.value} at step {bad}"
            )
    rows = [
        [m.value, res.speedup, float(np.mean([r.candidate_hit_rate for r in res.reports]))]
        for m, res in results.items()
    ]
    write_csv(args.out, ["mode", "speedup", "mean_candidate_hit_rate"], rows)
    return 0


def cmd_scale(args) -> int:
    mode = PipelineMode(args.mode)
    rows = []
    if args.particles:
        for n in [int(x) for x in args.particles.split(",")]:
            scene = make_gear_tower_scene(args.bodies, n, rng_seed=args.seed)
            res = bench(scene, args.steps, mode, args.warmup, label=f"np={n}")
            rows.append([n, args.bodies, res.wall_per_step, res.speedup])
    elif args.body_counts:
        for nb in [int(x) for x in args.body_counts.split(",")]:
            scene = make_gear_tower_scene(nb, args.n_particles, rng_seed=args.seed)
            res = bench(scene, args.steps, mode, args.warmup, label=f"nb={nb}")
            rows.append([args.n_particles, nb, res.wall_per_step, res.speedup])
    else:
        raise BenchError("provide --particles or --body-counts")
    write_csv(args.out, ["n_particles", "n_bodies", "wall_per_step_s", "speedup"], rows)
    return 0


def cmd_env_demo(args) -> int:
    env = BulldozerEnv()
    env.reset(seed=args.seed)
    rng = np.random.default_rng(args.seed)
    for k in range(args.steps):
        action = np.array([1.0, 0.0]) if args.forward else rng.uniform(-1, 1, 2)
        obs, reward, done, info = env.step(action)
        print(
            f"step {k}: reward={reward:.4f} pose=({obs.pose[0]:.3f}, "
            f"{obs.pose[1]:.3f}, {obs.pose[2]:.3f}) contacts={info['n_contacts']} done={done}"
        )
        if done:
            break
    env.close()
    return 0


def _apply_overrides(scene: Scene, args) -> None:
    if getattr(args, "dt", None):
        scene.params.timestep = args.dt
        scene.params.validate()
    if getattr(args, "hashmap_size", None):
        scene.hashmap_size = args.hashmap_size


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--mode", choices=[m.value for m in PipelineMode],
                   default=PipelineMode.TWO_LOOPS_SPLIT.value)
    p.add_argument("--hashmap-size", type=int, default=None)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("GRANUSIM_WORKERS", "1")))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="granusim")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scene and record a trajectory")
    p.add_argument("scene")
    p.add_argument("--snapshot-stride", type=int, default=10)
    p.add_argument("--csv", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bake", help="bake a mesh SDF grid cache file")
    p.add_argument("mesh")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("sweep-hashsize", help="hash table size sweep")
    p.add_argument("scene")
    p.add_argument("--sizes", required=True, help="comma-separated table sizes")
    _add_common(p)
    p.set_defaults(func=cmd_sweep_hashsize)

    p = sub.add_parser("compare-pipelines", help="pipeline mode comparison")
    p.add_argument("scene")
    _add_common(p)
    p.set_defaults(func=cmd_compare_pipelines)

    p = sub.add_parser("scale", help="particle / body scaling study")
    p.add_argument("--particles", default=None, help="comma-separated particle counts")
    p.add_argument("--body-counts", default=None, help="comma-separated body counts")
    p.add_argument("--bodies", type=int, default=0)
    p.add_argument("--n-particles", type=int, default=2000)
    _add_common(p)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("env-demo", help="run the bulldozing environment")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forward", action="store_true")
    p.set_defaults(func=cmd_env_demo)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
