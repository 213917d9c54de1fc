"""Gym-style Z-axis pressing environment over a :class:`TactileSimulator`.

State is the end-effector position, the two actions move the probe up or
down by a fixed step, and the reward is the frame's pixel-intensity sum
scaled by ``1 / pixel_count``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .phantom import InclusionSpec, TactileFrame, TactileSimulator, Vec3

UP, DOWN = 0, 1
ACTIONS = (UP, DOWN)
ACTION_NAMES = ("UP", "DOWN")


@dataclass(frozen=True)
class ActionSpec:
    step_size: float = 1.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")

    def delta(self, action: int) -> Vec3:
        if action == UP:
            return (0.0, 0.0, self.step_size)
        if action == DOWN:
            return (0.0, 0.0, -self.step_size)
        raise ValueError(f"unknown action {action!r}")


@dataclass(frozen=True)
class EnvObservation:
    end_effector_pos: Vec3
    normalized: np.ndarray

    @staticmethod
    def build(pos: Sequence[float], lo: Sequence[float], hi: Sequence[float]) -> "EnvObservation":
        p = np.asarray(pos, dtype=np.float64)
        lo_, hi_ = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        norm = 2.0 * (p - lo_) / (hi_ - lo_) - 1.0
        return EnvObservation(tuple(float(v) for v in p), norm)

    @staticmethod
    def denormalize(norm: np.ndarray, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
        lo_, hi_ = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        return lo_ + (np.asarray(norm) + 1.0) * 0.5 * (hi_ - lo_)


@dataclass(frozen=True)
class EnvConfig:
    z_start: float = 25.0
    step_size: float = 1.0
    max_force: float = 10.0
    window: tuple[float, float] = (1.0, 10.0)
    max_steps: int = 100
    plateau_steps: int = 5
    z_bounds: tuple[float, float] = (-15.0, 30.0)
    # training resets: start height drawn from this range (None = z_start)
    z_start_range: Optional[tuple[float, float]] = None
    randomize_xy: bool = False
    xy_margin: float = 30.0
    training_inclusions: tuple[InclusionSpec, ...] = field(default_factory=tuple)


class ProbeEnv:
    """reset/step interface around a simulator.

    Episodes end on the step budget, on a force above ``max_force`` (safety
    cutoff, terminal, reward 0) or after ``plateau_steps`` consecutive frames
    inside the recording window. Only the safety cutoff is terminal for
    bootstrapping; the other two are reported as ``truncated``.
    """

    def __init__(self, sim: TactileSimulator, cfg: EnvConfig = EnvConfig()):
        self.sim = sim
        self.cfg = cfg
        self.actions = ActionSpec(cfg.step_size)
        rx, ry = sim.phantom.extent
        self.lo = (0.0, 0.0, cfg.z_bounds[0])
        self.hi = (rx, ry, cfg.z_bounds[1])
        self.t = 0
        self.in_window_run = 0
        self.last_frame: Optional[TactileFrame] = None

    def observe(self) -> EnvObservation:
        return EnvObservation.build(self.sim.pose, self.lo, self.hi)

    def _training_phantom(self) -> tuple[float, float]:
        cfg, sim = self.cfg, self.sim
        rng = sim.rng
        ph = sim.phantom
        rx, ry = ph.extent
        if cfg.randomize_xy:
            m = cfg.xy_margin
            x = float(rng.uniform(m, rx - m))
            y = float(rng.uniform(m, ry - m))
        else:
            x, y = rx / 2, ry / 2
        if cfg.training_inclusions:
            k = int(rng.integers(len(cfg.training_inclusions)))
            tmpl = cfg.training_inclusions[k]
            inc = InclusionSpec((x, y, tmpl.center_roi[2]), tmpl.diameter, tmpl.elasticity)
            sim.phantom = ph.with_inclusions([inc])
        return x, y

    def reset(self, xy: Optional[Sequence[float]] = None, z: Optional[float] = None) -> EnvObservation:
        cfg, sim = self.cfg, self.sim
        if cfg.training_inclusions:
            xy = self._training_phantom()
        if z is None:
            if cfg.z_start_range is not None:
                lo, hi = cfg.z_start_range
                z = float(sim.rng.uniform(lo, hi))
            else:
                z = cfg.z_start
        x, y = (sim.pose[0], sim.pose[1]) if xy is None else xy
        # retract, travel laterally, then descend to the start height
        top = max(z, sim.pose[2])
        sim.retract(top)
        if (x, y) != sim.pose[:2]:
            sim.move_to(x, y)
        if sim.pose[2] != z:
            sim.step((0.0, 0.0, z - sim.pose[2]))
        self.t = 0
        self.in_window_run = 0
        self.last_frame = None
        return self.observe()

    def step(self, action: int):
        """Returns ``(obs, reward, done, truncated, info)``."""
        self.sim.step(self.actions.delta(action))
        frame = self.sim.capture()
        self.last_frame = frame
        self.t += 1
        force = frame.applied_force
        lo, hi = self.cfg.window
        done = force > self.cfg.max_force
        reward = 0.0 if done else frame.pixel_sum / self.sim.cfg.pixel_count
        self.in_window_run = self.in_window_run + 1 if lo <= force <= hi else 0
        truncated = not done and (self.t >= self.cfg.max_steps
                                  or self.in_window_run >= self.cfg.plateau_steps)
        info = {"frame": frame, "force": force}
        return self.observe(), reward, done, truncated, info

