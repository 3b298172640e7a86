"""
Artificial potential field redirected walking (APF-RDW) with perceivable resets (APF-R).

Each tick a user's virtual displacement is copied into the physical room after
rotating it by the accumulated physical/virtual heading offset. While walking,
a small rotation is injected that turns the user toward the repulsive force of
walls and other users. When the next physical step would come within a safety
margin of a wall or another user the step is withheld and the user is turned
in place toward the force direction.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import RDW_CONFIG
from errors import ConfigurationError, DomainError, InvariantViolation
from geometry import (
    Pose2,
    Room,
    Vec2,
    add,
    angle_of,
    contains,
    distance_to_walls,
    norm,
    normalize_angle,
    rotate,
)
from virtual_motion import VirtualTrajectory

logger = logging.getLogger(__name__)

# distances are saturated here before entering the force law
MIN_DISTANCE = 1e-3

TRACE_COLUMNS = ["tick", "user", "px", "py", "pheading", "vx", "vy", "vheading", "reset"]
RESET_COLUMNS = ["tick", "user", "path_since_last_reset", "new_heading"]


@dataclass(frozen=True)
class RdwParams:
    user_falloff: float = RDW_CONFIG["user_falloff"]
    arc_radius: float = RDW_CONFIG["arc_radius"]
    max_rotation_rate: float = RDW_CONFIG["max_rotation_rate"]    # degrees per second
    velocity_threshold: float = RDW_CONFIG["velocity_threshold"]
    wall_gain: float = RDW_CONFIG["wall_gain"]
    user_gain: float = RDW_CONFIG["user_gain"]
    reset_wall_margin: float = RDW_CONFIG["reset_wall_margin"]
    reset_user_margin: float = RDW_CONFIG["reset_user_margin"]

    def violations(self) -> List[str]:
        problems = []
        for name in ("arc_radius", "max_rotation_rate", "velocity_threshold",
                     "reset_wall_margin", "reset_user_margin"):
            value = getattr(self, name)
            if not value > 0:
                problems.append(f"{name} must be > 0 (got {value})")
        for name in ("wall_gain", "user_gain"):
            value = getattr(self, name)
            if not value >= 0:
                problems.append(f"{name} must be >= 0 (got {value})")
        if not self.user_falloff >= 1:
            problems.append(f"user_falloff must be >= 1 (got {self.user_falloff})")
        return problems

    def rotation_budget(self, tick_rate: float) -> float:
        """Largest injected rotation per tick, radians"""
        return math.radians(self.max_rotation_rate) / tick_rate


@dataclass(frozen=True)
class UserState:
    user: int
    physical: Pose2
    virtual: Pose2
    tick: int = 0
    heading_offset: float = 0.0      # physical heading minus virtual heading
    cumulative_path: float = 0.0
    path_at_last_reset: float = 0.0
    reset_count: int = 0


@dataclass(frozen=True)
class TraceFrame:
    tick: int
    user: int
    physical: Pose2
    virtual: Pose2
    reset: bool = False


@dataclass(frozen=True)
class ResetEvent:
    tick: int
    user: int
    path_since_last_reset: float
    new_heading: float
    cumulative_path: float


class SimulationResult(NamedTuple):
    frames: List[TraceFrame]
    events: List[ResetEvent]


class ResetMetrics(NamedTuple):
    reset_count: int
    inter_reset_distances: List[float]


def potential_force(room: Room, self_pos: Vec2, others: Sequence[Vec2], params: RdwParams) -> Vec2:
    """Repulsion from the four walls (1/d) and from other users (d^-falloff)"""
    fx = fy = 0.0
    for wall in distance_to_walls(room, self_pos):
        d = max(wall.distance, MIN_DISTANCE)
        fx += params.wall_gain / d * wall.inward_normal.x
        fy += params.wall_gain / d * wall.inward_normal.y
    for other in others:
        dx, dy = self_pos.x - other.x, self_pos.y - other.y
        d = math.hypot(dx, dy)
        if d < MIN_DISTANCE:
            logger.warning("users at (%.3f, %.3f) nearly coincide (d=%.2e m); saturating", self_pos.x, self_pos.y, d)
            if d == 0.0:
                continue
        magnitude = params.user_gain * max(d, MIN_DISTANCE) ** (-params.user_falloff)
        fx += magnitude * dx / d
        fy += magnitude * dy / d
    return Vec2(fx, fy)


def injected_rotation(force: Vec2, walk_heading: float, speed: float,
                      params: RdwParams, tick_rate: float) -> float:
    """Signed per-tick rotation turning the walking direction toward the force"""
    if force.x == 0.0 and force.y == 0.0:
        return 0.0
    limit = min(params.rotation_budget(tick_rate), speed / (params.arc_radius * tick_rate))
    misalignment = normalize_angle(angle_of(force) - walk_heading)
    return math.copysign(min(limit, abs(misalignment)), misalignment)


def _near_hazard(room: Room, p: Vec2, others: Sequence[Vec2], params: RdwParams) -> bool:
    wall_gap = min(p.x, room.side - p.x, p.y, room.side - p.y)
    if wall_gap < params.reset_wall_margin:
        return True
    return any(math.hypot(p.x - o.x, p.y - o.y) < params.reset_user_margin for o in others)


def steer_tick(state: UserState, virtual_disp: Vec2, others: Sequence[Vec2], room: Room,
               params: RdwParams, tick_rate: float) -> Tuple[UserState, TraceFrame, Optional[ResetEvent]]:
    """Advance one user by one tick"""
    step = norm(virtual_disp)
    speed = step * tick_rate
    tick = state.tick + 1
    virtual_heading = angle_of(virtual_disp) if step > 0.0 else state.virtual.heading
    virtual = Pose2(add(state.virtual.position, virtual_disp), virtual_heading)
    position = state.physical.position

    if speed <= params.velocity_threshold:
        physical = Pose2(position, virtual.heading + state.heading_offset)
        new_state = replace(state, physical=physical, virtual=virtual, tick=tick)
        return new_state, TraceFrame(tick, state.user, physical, virtual, False), None

    force = potential_force(room, position, others, params)
    walk_heading = virtual.heading + state.heading_offset
    offset = normalize_angle(state.heading_offset
                             + injected_rotation(force, walk_heading, speed, params, tick_rate))
    tentative = add(position, rotate(virtual_disp, offset))

    if _near_hazard(room, tentative, others, params):
        if force.x == 0.0 and force.y == 0.0:
            new_heading = walk_heading + math.pi
        else:
            new_heading = angle_of(force)
        physical = Pose2(position, new_heading)
        event = ResetEvent(
            tick=tick,
            user=state.user,
            path_since_last_reset=state.cumulative_path - state.path_at_last_reset,
            new_heading=physical.heading,
            cumulative_path=state.cumulative_path,
        )
        new_state = replace(
            state,
            physical=physical,
            virtual=virtual,
            tick=tick,
            heading_offset=normalize_angle(physical.heading - virtual.heading),
            path_at_last_reset=state.cumulative_path,
            reset_count=state.reset_count + 1,
        )
        logger.debug("user %d reset at tick %d after %.2f m", state.user, tick, event.path_since_last_reset)
        return new_state, TraceFrame(tick, state.user, physical, virtual, True), event

    if not contains(room, tentative):
        raise InvariantViolation(
            f"user {state.user} would leave the room at tick {tick}: ({tentative.x:.4f}, {tentative.y:.4f})")
    physical = Pose2(tentative, virtual.heading + offset)
    new_state = replace(
        state,
        physical=physical,
        virtual=virtual,
        tick=tick,
        heading_offset=offset,
        cumulative_path=state.cumulative_path + step,
    )
    return new_state, TraceFrame(tick, state.user, physical, virtual, False), None


def initial_positions(room: Room, n_users: int) -> List[Vec2]:
    """Users evenly spaced on a circle of radius side/4 about the room centre"""
    radius = room.side / 4.0
    c = room.center
    return [Vec2(c.x + radius * math.cos(2.0 * math.pi * k / n_users),
                 c.y + radius * math.sin(2.0 * math.pi * k / n_users))
            for k in range(n_users)]


def simulate(trajs: Sequence[VirtualTrajectory], room: Room, params: RdwParams,
             initial: Sequence[Vec2]) -> SimulationResult:
    """Lockstep simulation of all users; users move in index order within a tick"""
    if not trajs:
        raise ConfigurationError("simulate needs at least one trajectory")
    lengths = {len(t) for t in trajs}
    rates = {t.tick_rate for t in trajs}
    if len(lengths) != 1 or len(rates) != 1:
        raise ConfigurationError(f"trajectories disagree: lengths {sorted(lengths)}, tick rates {sorted(rates)}")
    if len(initial) != len(trajs):
        raise ConfigurationError(f"{len(initial)} initial positions for {len(trajs)} users")
    problems = params.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    for k, p in enumerate(initial):
        if not contains(room, p):
            raise DomainError(f"initial position of user {k} ({p.x}, {p.y}) is outside the room")
        for j in range(k):
            if initial[j] == p:
                raise DomainError(f"users {j} and {k} share the initial position ({p.x}, {p.y})")

    n_ticks = lengths.pop()
    tick_rate = rates.pop()
    states = [UserState(user=k, physical=Pose2(p, tr.frames[0].heading), virtual=tr.frames[0])
              for k, (tr, p) in enumerate(zip(trajs, initial))]
    deltas = [np.diff(tr.positions, axis=0) for tr in trajs]
    frames = [TraceFrame(0, s.user, s.physical, s.virtual, False) for s in states]
    events: List[ResetEvent] = []
    positions = [s.physical.position for s in states]

    for t in range(n_ticks - 1):
        for k in range(len(states)):
            dx, dy = deltas[k][t]
            others = positions[:k] + positions[k + 1:]
            states[k], frame, event = steer_tick(states[k], Vec2(float(dx), float(dy)), others,
                                                 room, params, tick_rate)
            positions[k] = states[k].physical.position
            frames.append(frame)
            if event is not None:
                events.append(event)

    logger.info("simulated %d users x %d ticks: %d resets", len(states), n_ticks, len(events))
    return SimulationResult(frames, events)


def reset_metrics(events: Sequence[ResetEvent], frames: Sequence[TraceFrame]) -> Dict[int, ResetMetrics]:
    """Per-user reset count and physical path length between consecutive resets"""
    flagged: Dict[int, int] = {}
    for frame in frames:
        flagged.setdefault(frame.user, 0)
        if frame.reset:
            flagged[frame.user] += 1
    by_user: Dict[int, List[ResetEvent]] = {user: [] for user in flagged}
    for event in events:
        by_user.setdefault(event.user, []).append(event)

    metrics = {}
    for user in sorted(by_user):
        user_events = sorted(by_user[user], key=lambda e: e.tick)
        if flagged.get(user, 0) != len(user_events):
            raise DomainError(f"user {user}: {len(user_events)} reset events but "
                              f"{flagged.get(user, 0)} frames flagged as resets")
        paths = [e.cumulative_path for e in user_events]
        metrics[user] = ResetMetrics(len(user_events), [b - a for a, b in zip(paths, paths[1:])])
    return metrics


def trace_table(frames: Sequence[TraceFrame]) -> pd.DataFrame:
    return pd.DataFrame({
        "tick": [f.tick for f in frames],
        "user": [f.user for f in frames],
        "px": [f.physical.position.x for f in frames],
        "py": [f.physical.position.y for f in frames],
        "pheading": [f.physical.heading for f in frames],
        "vx": [f.virtual.position.x for f in frames],
        "vy": [f.virtual.position.y for f in frames],
        "vheading": [f.virtual.heading for f in frames],
        "reset": [int(f.reset) for f in frames],
    }, columns=TRACE_COLUMNS)


def reset_table(events: Sequence[ResetEvent]) -> pd.DataFrame:
    return pd.DataFrame({
        "tick": [e.tick for e in events],
        "user": [e.user for e in events],
        "path_since_last_reset": [e.path_since_last_reset for e in events],
        "new_heading": [e.new_heading for e in events],
    }, columns=RESET_COLUMNS)


def save_trace_csv(frames: Sequence[TraceFrame], path) -> None:
    trace_table(frames).to_csv(path, index=False, float_format="%.9g")


def save_resets_csv(events: Sequence[ResetEvent], path) -> None:
    reset_table(events).to_csv(path, index=False, float_format="%.9g")


def load_trace_csv(path) -> List[TraceFrame]:
    table = pd.read_csv(path)
    missing = [c for c in TRACE_COLUMNS if c not in table.columns]
    if missing:
        raise DomainError(f"{path}: missing trace columns {missing}")
    return [
        TraceFrame(
            tick=int(row.tick),
            user=int(row.user),
            physical=Pose2(Vec2(float(row.px), float(row.py)), float(row.pheading)),
            virtual=Pose2(Vec2(float(row.vx), float(row.vy)), float(row.vheading)),
            reset=bool(row.reset),
        )
        for row in table.itertuples(index=False)
    ]
