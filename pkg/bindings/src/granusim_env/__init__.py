"""Gym-style bindings for the bulldozing environment.

The wrapper holds an opaque handle to a native environment instance and
forwards reset/step/close.  Every number returned here is produced by the
engine; the bindings only reshape the boundary: observations cross as the
engine's own contiguous row-major float32 buffers (no copy, no re-encode)
inside a plain mapping, and actions are validated against the action
space before being handed over.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from granusim.envs import BulldozerEnv, BulldozerEnvConfig

__all__ = [
    "ActionSpace",
    "BoundaryError",
    "GranularBulldozerEnv",
    "ObservationSpace",
    "make_env",
]

__version__ = "0.1.0"


class BoundaryError(RuntimeError):
    """Misuse of the binding boundary (bad shapes, use after close)."""


@dataclass(frozen=True)
class ActionSpace:
    """Box action space: each component in [low, high]."""

    shape: tuple = (2,)
    low: float = -1.0
    high: float = 1.0
    dtype: str = "float64"

    def contains(self, action: np.ndarray) -> bool:
        a = np.asarray(action)
        return a.shape == self.shape and bool(
            np.all(np.isfinite(a)) and np.all(a >= self.low) and np.all(a <= self.high)
        )


@dataclass(frozen=True)
class ObservationSpace:
    """Fixed-shape observation mapping descriptors."""

    ego_shape: tuple = (36, 36)
    sky_shape: tuple = (36, 72)
    pose_shape: tuple = (3,)
    image_dtype: str = "float32"
    pose_dtype: str = "float64"

    def contains(self, obs: dict) -> bool:
        try:
            return (
                obs["ego"].shape == self.ego_shape
                and obs["sky"].shape == self.sky_shape
                and obs["pose"].shape == self.pose_shape
                and obs["ego"].dtype == np.dtype(self.image_dtype)
                and obs["sky"].dtype == np.dtype(self.image_dtype)
            )
        except (KeyError, AttributeError):
            return False


class GranularBulldozerEnv:
    """Gym-style handle over a native bulldozing environment.

    ``native_factory`` exists so the boundary can be audited with a stub
    in place of the engine; by default the real environment is built.
    """

    metadata = {"render_modes": []}

    def __init__(self, config: BulldozerEnvConfig | None = None, native_factory=None):
        factory = native_factory or (lambda: BulldozerEnv(config))
        self._native = factory()
        self.action_space = ActionSpace()
        self.observation_space = ObservationSpace()
        self._closed = False

    def _check_open(self) -> None:
        if self._closed:
            raise BoundaryError("environment handle used after close")

    @staticmethod
    def _wrap_observation(native_obs) -> dict:
        # the arrays are handed through untouched: same buffers, same dtype
        return {"ego": native_obs.ego, "sky": native_obs.sky, "pose": native_obs.pose}

    def reset(self, seed: int = 0) -> dict:
        self._check_open()
        return self._wrap_observation(self._native.reset(seed=seed))

    def step(self, action) -> tuple[dict, float, bool, dict]:
        self._check_open()
        a = np.asarray(action, dtype=np.float64)
        if a.shape != self.action_space.shape:
            raise BoundaryError(
                f"action shape must be {self.action_space.shape}, got {a.shape}"
            )
        if not np.all(np.isfinite(a)):
            raise BoundaryError("action must be finite")
        obs, reward, done, info = self._native.step(a)
        return self._wrap_observation(obs), float(reward), bool(done), dict(info)

    def close(self) -> None:
        if not self._closed:
            self._native.close()
            self._closed = True

    def __enter__(self) -> "GranularBulldozerEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_env(config: BulldozerEnvConfig | None = None) -> GranularBulldozerEnv:
    return GranularBulldozerEnv(config)
