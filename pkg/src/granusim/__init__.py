"""Granular material simulator: spherical-particle DEM with rigid
frictional contacts, kinematically driven rigid bodies, spatial-hash
broadphase, SDF narrowphase, and depth-camera sensing.
"""

from .broadphase import build_hashmap, candidate_pairs, default_table_size, spatial_hash
from .contact import (
    ContactSet,
    detect_contacts,
    narrowphase_candidates,
    narrowphase_contacts,
    solve_contacts_pja,
)
from .envs import (
    BulldozerEnv,
    BulldozerEnvConfig,
    EnvObservation,
    ExcavationEnv,
    GoalBox,
    bulldozer_reward,
    make_column_scene,
    make_gear_tower_scene,
)
from .render import DepthCamera, render_depth
from .scene import (
    MaterialParams,
    ParticleSet,
    RigidBody,
    Scene,
    load_scene,
    scene_from_config,
    seed_particles_grid,
    serialize_scene,
)
from .sdf import SdfGrid, bake_mesh_sdf, load_grid, penetration_depth, save_grid
from .stepper import (
    PipelineMode,
    StepReport,
    Trajectory,
    load_trajectory,
    run,
    save_trajectory,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "BulldozerEnv",
    "BulldozerEnvConfig",
    "ContactSet",
    "DepthCamera",
    "EnvObservation",
    "ExcavationEnv",
    "GoalBox",
    "MaterialParams",
    "ParticleSet",
    "PipelineMode",
    "RigidBody",
    "Scene",
    "SdfGrid",
    "StepReport",
    "Trajectory",
    "bake_mesh_sdf",
    "build_hashmap",
    "bulldozer_reward",
    "candidate_pairs",
    "default_table_size",
    "load_grid",
    "load_scene",
    "load_trajectory",
    "make_column_scene",
    "make_gear_tower_scene",
    "detect_contacts",
    "narrowphase_candidates",
    "narrowphase_contacts",
    "penetration_depth",
    "render_depth",
    "run",
    "save_grid",
    "save_trajectory",
    "scene_from_config",
    "seed_particles_grid",
    "serialize_scene",
    "solve_contacts_pja",
    "spatial_hash",
    "step",
]
