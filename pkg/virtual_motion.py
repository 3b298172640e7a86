"""
Virtual-world movement of each VR user.

The VR application's content-driven motion is modelled as a smoothed
correlated random walk with occasional pauses. Every user draws from its own
random substream so adding users never changes existing users' paths.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from config import RDW_CONFIG, SIMULATION_CONFIG, VIRTUAL_MOTION_CONFIG
from errors import ConfigurationError, DomainError
from geometry import Pose2, Vec2

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["tick", "x", "y", "heading"]


@dataclass(frozen=True)
class VirtualMotionConfig:
    seed: int = SIMULATION_CONFIG["seed"]
    tick_rate: float = SIMULATION_CONFIG["tick_rate"]
    duration: float = SIMULATION_CONFIG["duration"]
    mean_speed: float = VIRTUAL_MOTION_CONFIG["mean_speed"]
    turn_rate_std: float = VIRTUAL_MOTION_CONFIG["turn_rate_std"]
    pause_probability: float = VIRTUAL_MOTION_CONFIG["pause_probability"]
    min_pause: float = VIRTUAL_MOTION_CONFIG["min_pause"]
    max_pause: float = VIRTUAL_MOTION_CONFIG["max_pause"]

    def violations(self) -> List[str]:
        problems = []
        if not self.tick_rate > 0:
            problems.append(f"tick_rate must be > 0 (got {self.tick_rate})")
        if not self.duration > 0:
            problems.append(f"duration must be > 0 (got {self.duration})")
        if not self.mean_speed >= 0:
            problems.append(f"mean_speed must be >= 0 (got {self.mean_speed})")
        if not self.turn_rate_std >= 0:
            problems.append(f"turn_rate_std must be >= 0 (got {self.turn_rate_std})")
        if not 0.0 <= self.pause_probability <= 1.0:
            problems.append(f"pause_probability must lie in [0, 1] (got {self.pause_probability})")
        if not 0 < self.min_pause <= self.max_pause:
            problems.append(f"pauses need 0 < min_pause <= max_pause (got {self.min_pause}, {self.max_pause})")
        return problems

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.tick_rate))


@dataclass(frozen=True)
class VirtualTrajectory:
    positions: np.ndarray          # (n, 2) meters
    headings: np.ndarray           # (n,) radians in [-pi, pi)
    tick_rate: float
    frames: List[Pose2] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.positions.shape != (len(self.headings), 2):
            raise DomainError(f"positions {self.positions.shape} do not match {len(self.headings)} headings")
        frames = [Pose2(Vec2(float(x), float(y)), float(h))
                  for (x, y), h in zip(self.positions, self.headings)]
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.headings)


def _substream(seed: int, user_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(user_index)]))


def generate(cfg: VirtualMotionConfig, user_index: int) -> VirtualTrajectory:
    """Correlated random walk with pauses, deterministic in (seed, user_index)"""
    problems = cfg.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    if user_index < 0:
        raise DomainError(f"user_index must be non-negative, got {user_index}")
    if 0 < cfg.mean_speed <= RDW_CONFIG["velocity_threshold"]:
        logger.warning("mean_speed %.3f m/s does not exceed the steering velocity threshold", cfg.mean_speed)

    rng = _substream(cfg.seed, user_index)
    n = cfg.n_frames
    turn_noise = rng.normal(0.0, cfg.turn_rate_std / cfg.tick_rate, n)
    pause_draws = rng.random(n)
    pause_lengths = rng.uniform(cfg.min_pause, cfg.max_pause, n)
    heading = rng.uniform(-math.pi, math.pi)

    headings = np.empty(n)
    speeds = np.zeros(n)
    headings[0] = heading
    pause_left = 0
    for t in range(1, n):
        if pause_left > 0:
            pause_left -= 1
        elif pause_draws[t] < cfg.pause_probability:
            pause_left = max(int(math.ceil(pause_lengths[t] * cfg.tick_rate)), 1) - 1
        else:
            heading = heading + turn_noise[t]
            speeds[t] = cfg.mean_speed
        headings[t] = heading

    # displacement t-1 -> t moves along heading[t]
    headings = (headings + math.pi) % (2.0 * math.pi) - math.pi
    headings[headings >= math.pi] = -math.pi
    step = speeds / cfg.tick_rate
    deltas = np.column_stack([step * np.cos(headings), step * np.sin(headings)])
    deltas[0] = 0.0
    positions = np.cumsum(deltas, axis=0)
    return VirtualTrajectory(positions=positions, headings=headings, tick_rate=cfg.tick_rate)


def generate_all(cfg: VirtualMotionConfig, n_users: int) -> List[VirtualTrajectory]:
    return [generate(cfg, user) for user in range(n_users)]


def displacement(traj: VirtualTrajectory, t: int) -> Vec2:
    """Virtual movement from frame t to frame t+1"""
    if not 0 <= t < len(traj) - 1:
        raise DomainError(f"tick {t} outside [0, {len(traj) - 2}]")
    dx, dy = traj.positions[t + 1] - traj.positions[t]
    return Vec2(float(dx), float(dy))


def save_csv(traj: VirtualTrajectory, path) -> None:
    table = pd.DataFrame({
        "tick": np.arange(len(traj)),
        "x": traj.positions[:, 0],
        "y": traj.positions[:, 1],
        "heading": traj.headings,
    })
    table.to_csv(path, index=False, float_format="%.9g")


def load_csv(path, tick_rate: float) -> VirtualTrajectory:
    table = pd.read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in table.columns]
    if missing:
        raise DomainError(f"{path}: missing columns {missing}")
    table = table.sort_values("tick")
    return VirtualTrajectory(
        positions=table[["x", "y"]].to_numpy(dtype=float),
        headings=table["heading"].to_numpy(dtype=float),
        tick_rate=tick_rate,
    )
