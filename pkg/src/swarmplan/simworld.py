"""Deterministic 2D kinematic world for closed-loop planner runs.

Robots are discs that track their planned trajectories perfectly; the
world contributes wall segments and static discs which the simulated
lidar sees through exact ray casting (optionally quantized to the
sensor resolution).  Peer robots are deliberately invisible to the
lidar: they are handled through the state bus, not through perception.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import SizeSpec
from .perception import ObstacleCircle, RangeScan
from .trajopt import PolyTrajectory, evaluate

_STOP_DECAY = 0.2   # seconds to bleed velocity after a planner failure


@dataclass(frozen=True)
class World:
    """Static geometry: wall segments, disc obstacles, axis-aligned bounds."""

    walls: tuple[tuple[tuple[float, float], tuple[float, float]], ...]
    discs: tuple[ObstacleCircle, ...]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        xmin, ymin, xmax, ymax = (float(b) for b in self.bounds)
        if xmin >= xmax or ymin >= ymax:
            raise ValueError(f"world bounds must form a box, got {self.bounds}")
        object.__setattr__(self, "bounds", (xmin, ymin, xmax, ymax))
        walls = []
        for i, (p1, p2) in enumerate(self.walls):
            p1 = (float(p1[0]), float(p1[1]))
            p2 = (float(p2[0]), float(p2[1]))
            if math.hypot(p2[0] - p1[0], p2[1] - p1[1]) < 1e-12:
                raise ValueError(f"wall {i} is degenerate: {p1} -> {p2}")
            walls.append((p1, p2))
        object.__setattr__(self, "walls", tuple(walls))
        discs = []
        for i, disc in enumerate(self.discs):
            center, radius = disc
            if radius <= 0.0:
                raise ValueError(f"disc {i} needs a positive radius, got {radius}")
            discs.append(ObstacleCircle((float(center[0]), float(center[1])), float(radius)))
        object.__setattr__(self, "discs", tuple(discs))


@dataclass(frozen=True)
class LidarSpec:
    beams: int = 360
    fov: float = 2.0 * math.pi
    max_range: float = 8.0
    rate: float = 5.0
    quantization: float = 1e-3

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError(f"lidar needs >= 1 beam, got {self.beams}")
        if not 0.0 < self.fov <= 2.0 * math.pi + 1e-9:
            raise ValueError(f"lidar fov must be in (0, 2*pi], got {self.fov}")
        if self.max_range <= 0.0:
            raise ValueError(f"lidar max_range must be positive, got {self.max_range}")
        if self.rate <= 0.0:
            raise ValueError(f"lidar rate must be positive, got {self.rate}")
        if self.quantization < 0.0:
            raise ValueError(f"lidar quantization must be >= 0, got {self.quantization}")


class CollisionEvent(NamedTuple):
    time: float
    kind: str          # robot_robot | robot_obstacle | robot_wall
    id_a: str
    id_b: object       # peer id (str), disc index, or wall index (int)
    penetration: float


@dataclass(frozen=True)
class RobotBody:
    """Kinematic ground truth tracked by the harness for one robot."""

    robot_id: str
    size_spec: SizeSpec
    position: tuple[float, float]
    velocity: tuple[float, float]
    acceleration: tuple[float, float]
    heading: float = 0.0


def raycast_scan(world: World, pose, spec: LidarSpec, stamp: float = 0.0) -> RangeScan:
    """Exact nearest-hit ranges for all beams from one pose.

    Beam i points along heading + i * (fov / beams); ranges beyond
    max_range become the no-return sentinel (inf).  A positive
    quantization rounds hit distances to that resolution.  All beams
    are intersected against each primitive in one vectorized pass.
    """
    x, y, heading = (float(v) for v in pose)
    xmin, ymin, xmax, ymax = world.bounds
    if not (xmin <= x <= xmax and ymin <= y <= ymax):
        raise ValueError(f"lidar pose ({x}, {y}) outside world bounds {world.bounds}")
    increment = spec.fov / spec.beams
    angles = heading + increment * np.arange(spec.beams)
    dx, dy = np.cos(angles), np.sin(angles)
    best = np.full(spec.beams, np.inf)
    for center, radius in world.discs:
        fx, fy = x - center[0], y - center[1]
        b = fx * dx + fy * dy
        disc = b * b - (fx * fx + fy * fy - radius * radius)
        valid = disc >= 0.0
        root = np.sqrt(np.where(valid, disc, 0.0))
        t_near = np.where(valid, -b - root, np.inf)
        t_far = np.where(valid, -b + root, np.inf)
        t = np.where(t_near > 1e-9, t_near, np.where(t_far > 1e-9, t_far, np.inf))
        best = np.minimum(best, t)
    for p1, p2 in world.walls:
        ex, ey = p2[0] - p1[0], p2[1] - p1[1]
        qx, qy = p1[0] - x, p1[1] - y
        denom = dx * ey - dy * ex
        safe = np.where(np.abs(denom) < 1e-14, 1.0, denom)
        t = (qx * ey - qy * ex) / safe
        s = (qx * dy - qy * dx) / safe
        hit = (np.abs(denom) >= 1e-14) & (t > 1e-9) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
        best = np.minimum(best, np.where(hit, t, np.inf))
    best = np.where(best > spec.max_range, np.inf, best)
    if spec.quantization > 0.0:
        finite = np.isfinite(best)
        quantized = np.round(best[finite] / spec.quantization) * spec.quantization
        best[finite] = np.minimum(quantized, spec.max_range)
    return RangeScan(angle_min=0.0, angle_increment=increment,
                     ranges=tuple(float(r) for r in best),
                     max_range=spec.max_range, stamp=float(stamp), ego_pose=(x, y, heading))


def point_segment_distance(px, py, p1, p2) -> float:
    ex, ey = p2[0] - p1[0], p2[1] - p1[1]
    length_sq = ex * ex + ey * ey
    t = ((px - p1[0]) * ex + (py - p1[1]) * ey) / length_sq
    t = min(max(t, 0.0), 1.0)
    return math.hypot(px - (p1[0] + t * ex), py - (p1[1] + t * ey))


def check_collisions(bodies: Sequence[RobotBody], world: World,
                     time: float) -> list[CollisionEvent]:
    """All overlaps at one instant, with penetration depths.

    Robots collide as discs of their heading-free bounding radius;
    events are emitted for robot-robot, robot-disc and robot-wall
    overlaps, ordered by robot id for determinism.
    """
    events = []
    radii = [body.size_spec.bounding_radius() for body in bodies]
    for i, body_a in enumerate(bodies):
        ax, ay = body_a.position
        for j in range(i + 1, len(bodies)):
            body_b = bodies[j]
            dist = math.hypot(ax - body_b.position[0], ay - body_b.position[1])
            if dist < radii[i] + radii[j]:
                events.append(CollisionEvent(time, "robot_robot", body_a.robot_id,
                                             body_b.robot_id, radii[i] + radii[j] - dist))
        for d_idx, (center, radius) in enumerate(world.discs):
            dist = math.hypot(ax - center[0], ay - center[1])
            if dist < radii[i] + radius:
                events.append(CollisionEvent(time, "robot_obstacle", body_a.robot_id,
                                             d_idx, radii[i] + radius - dist))
        for w_idx, (p1, p2) in enumerate(world.walls):
            dist = point_segment_distance(ax, ay, p1, p2)
            if dist < radii[i]:
                events.append(CollisionEvent(time, "robot_wall", body_a.robot_id,
                                             w_idx, radii[i] - dist))
    return events


def step_world(bodies: Sequence[RobotBody],
               trajectories: dict[str, Optional[PolyTrajectory]],
               now: float, dt: float) -> list[RobotBody]:
    """Advance every robot to now + dt.

    Robots with a trajectory track it perfectly; robots without one
    (planner failed) hold position while their reported velocity bleeds
    to zero, which is the safe-stop behavior of the harness.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    t_next = now + dt
    out = []
    for body in bodies:
        traj = trajectories.get(body.robot_id)
        if traj is None:
            fade = max(0.0, 1.0 - dt / _STOP_DECAY)
            out.append(replace(body,
                               velocity=(body.velocity[0] * fade, body.velocity[1] * fade),
                               acceleration=(0.0, 0.0)))
            continue
        pos = evaluate(traj, t_next, 0, allow_extrapolation=True)
        vel = evaluate(traj, t_next, 1, allow_extrapolation=True)
        acc = evaluate(traj, t_next, 2, allow_extrapolation=True)
        out.append(replace(body,
                           position=(float(pos[0]), float(pos[1])),
                           velocity=(float(vel[0]), float(vel[1])),
                           acceleration=(float(acc[0]), float(acc[1]))))
    return out
