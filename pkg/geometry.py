"""
2D vector math and the square deployment room.

Vectors are small immutable dataclasses operated on with plain `math`, which
keeps the per-tick steering loop cheap compared to tiny numpy arrays.
"""

import math
from dataclasses import dataclass
from typing import List, NamedTuple

from config import SIMULATION_CONFIG
from errors import DomainError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, slots=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite vector component: ({self.x}, {self.y})")


ZERO = Vec2(0.0, 0.0)


def add(a: Vec2, b: Vec2) -> Vec2:
    return Vec2(a.x + b.x, a.y + b.y)


def sub(a: Vec2, b: Vec2) -> Vec2:
    return Vec2(a.x - b.x, a.y - b.y)


def scale(a: Vec2, s: float) -> Vec2:
    return Vec2(a.x * s, a.y * s)


def dot(a: Vec2, b: Vec2) -> float:
    return a.x * b.x + a.y * b.y


def norm(a: Vec2) -> float:
    return math.hypot(a.x, a.y)


def unit(a: Vec2) -> Vec2:
    length = norm(a)
    if length == 0.0:
        return ZERO
    return Vec2(a.x / length, a.y / length)


def rotate(a: Vec2, theta: float) -> Vec2:
    """Rotate counter-clockwise by theta radians"""
    c, s = math.cos(theta), math.sin(theta)
    return Vec2(c * a.x - s * a.y, s * a.x + c * a.y)


def angle_of(a: Vec2) -> float:
    return math.atan2(a.y, a.x)


def from_angle(theta: float, length: float = 1.0) -> Vec2:
    return Vec2(length * math.cos(theta), length * math.sin(theta))


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi)"""
    if not math.isfinite(theta):
        raise DomainError(f"cannot normalize non-finite angle {theta}")
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # the modulo can round up onto the open end
    if wrapped >= math.pi:
        wrapped = -math.pi
    return wrapped


@dataclass(frozen=True, slots=True)
class Pose2:
    position: Vec2
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class Room:
    """Axis-aligned square [0, side] x [0, side]"""
    side: float = SIMULATION_CONFIG["room_side"]
    origin: Vec2 = ZERO

    def __post_init__(self):
        if not (self.side > 0 and math.isfinite(self.side)):
            raise DomainError(f"room side must be positive, got {self.side}")
        if self.origin != ZERO:
            raise DomainError("room origin is fixed at (0, 0)")

    @classmethod
    def default(cls) -> "Room":
        return cls(SIMULATION_CONFIG["room_side"])

    @property
    def center(self) -> Vec2:
        return Vec2(self.side / 2.0, self.side / 2.0)


class WallDistance(NamedTuple):
    wall: str
    distance: float
    inward_normal: Vec2


WALL_NORMALS = {
    "west": Vec2(1.0, 0.0),
    "east": Vec2(-1.0, 0.0),
    "south": Vec2(0.0, 1.0),
    "north": Vec2(0.0, -1.0),
}


def contains(room: Room, p: Vec2) -> bool:
    return 0.0 <= p.x <= room.side and 0.0 <= p.y <= room.side


def distance_to_walls(room: Room, p: Vec2) -> List[WallDistance]:
    """Perpendicular distance and inward unit normal for each of the four walls"""
    distances = {
        "west": p.x,
        "east": room.side - p.x,
        "south": p.y,
        "north": room.side - p.y,
    }
    outside = [wall for wall, d in distances.items() if d < 0.0]
    if outside:
        raise DomainError(f"point ({p.x}, {p.y}) lies outside the {'/'.join(outside)} wall")
    return [WallDistance(wall, d, WALL_NORMALS[wall]) for wall, d in distances.items()]
