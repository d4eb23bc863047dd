"""Forward prediction of peer robots from their last broadcast state.

Peers are propagated ballistically (no replanning model) and wrapped in
a conservative planar footprint that covers the body at any heading, so
the safe-region construction never needs to know peer orientations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import PlannerConfig, RobotState, SizeSpec


@dataclass(frozen=True)
class FootprintRegion:
    """Axis-aligned square or disc that bounds a robot body at some time."""

    kind: str                      # "circle" | "square"
    center: tuple[float, float]
    size: float                    # radius for circles, half side length for squares

    def __post_init__(self):
        if self.kind not in ("circle", "square"):
            raise ValueError(f"footprint kind must be circle or square, got {self.kind!r}")
        if not math.isfinite(self.size) or self.size <= 0.0:
            raise ValueError(f"footprint size must be positive finite, got {self.size}")

    def contains(self, point, tol: float = 0.0) -> bool:
        dx = point[0] - self.center[0]
        dy = point[1] - self.center[1]
        if self.kind == "circle":
            return math.hypot(dx, dy) <= self.size + tol
        return max(abs(dx), abs(dy)) <= self.size + tol


@dataclass(frozen=True)
class PeerPrediction:
    robot_id: int
    samples: tuple[tuple[float, FootprintRegion], ...]  # (absolute time, region)
    stale: bool


def predict_position(state: RobotState, t: float, half_accel: bool = False) -> tuple[float, float]:
    """Ballistic position estimate at absolute time t >= state.stamp.

    The default propagates position + v*dt + a*dt^2, i.e. the
    acceleration term enters without the usual 1/2; pass
    half_accel=True for the textbook kinematic form.  The default is
    kept deliberately to reproduce the reference pipeline bit for bit.
    """
    dt = t - state.stamp
    if dt < 0.0:
        raise ValueError(f"prediction time {t} precedes state stamp {state.stamp}")
    scale = 0.5 if half_accel else 1.0
    px, py = state.position
    vx, vy = state.velocity
    ax, ay = state.acceleration
    return (px + vx * dt + scale * ax * dt * dt,
            py + vy * dt + scale * ay * dt * dt)


def inflate_footprint(position, spec: SizeSpec) -> FootprintRegion:
    """Heading-free bound of a body at a known center position.

    Cuboids (3 dims) become squares of half side sqrt(2) * max extent;
    cylinders (2 dims) discs of radius max extent; spheres (1 dim) discs
    of their radius.  In all cases a body of max side max(dims) fits
    inside the region regardless of heading.
    """
    center = (float(position[0]), float(position[1]))
    if len(spec.dims) == 3:
        return FootprintRegion("square", center, math.sqrt(2.0) * max(spec.dims))
    return FootprintRegion("circle", center, max(spec.dims))


def predict_horizon(state: RobotState, cfg: PlannerConfig, now: float) -> PeerPrediction:
    """Footprint forecast on the planning grid: now + k*timestep, k = 1..steps.

    The stale flag marks states older than cfg.staleness_limit; they are
    still predicted (a stale bound beats no bound) and the caller
    decides what to do with the flag.
    """
    if now < state.stamp:
        raise ValueError(f"now={now} precedes state stamp {state.stamp}")
    steps = cfg.grid_steps()
    samples = []
    for k in range(1, steps + 1):
        t = now + k * cfg.timestep
        pos = predict_position(state, t, half_accel=cfg.half_accel)
        samples.append((t, inflate_footprint(pos, state.size_spec)))
    stale = (now - state.stamp) > cfg.staleness_limit
    return PeerPrediction(state.robot_id, tuple(samples), stale)
