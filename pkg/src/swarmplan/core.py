"""Shared value types and planner configuration.

Everything here is an immutable value object: states received over the
radio, waypoints, and the knob set that the planner and harness read.
Validation lives next to the types so malformed data is rejected at the
boundary instead of deep inside the optimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

_VEC_FIELDS = ("position", "velocity", "acceleration")


def _as_vec2(value, name: str) -> tuple[float, float]:
    try:
        x, y = value
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a 2-vector, got {value!r}") from None
    x, y = float(x), float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"{name} has non-finite component: ({x}, {y})")
    return (x, y)


@dataclass(frozen=True)
class SizeSpec:
    """Declared body dimensions, one to three positive extents in meters.

    Three entries describe a cuboid (length, width, height), two a
    cylinder (radius, height), one a sphere radius.  Only the planar
    footprint derived from these is ever used.
    """

    dims: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"size_spec.dims needs 1-3 entries, got {len(dims)}")
        for d in dims:
            if not math.isfinite(d) or d <= 0.0:
                raise ValueError(f"size_spec.dims entries must be positive finite, got {d}")
        object.__setattr__(self, "dims", dims)

    def bounding_radius(self) -> float:
        """Radius of a disc that covers the body under any heading.

        Cuboids use sqrt(2) * max extent, matching the square footprint
        they are inflated to; cylinders and spheres are already
        rotation invariant.
        """
        if len(self.dims) == 3:
            return math.sqrt(2.0) * max(self.dims)
        return max(self.dims)


@dataclass(frozen=True)
class RobotState:
    """Kinematic state snapshot as broadcast on the shared bus."""

    robot_id: int
    stamp: float
    position: tuple[float, float]
    velocity: tuple[float, float]
    acceleration: tuple[float, float]
    size_spec: SizeSpec

    def __post_init__(self):
        if int(self.robot_id) != self.robot_id or self.robot_id < 0:
            raise ValueError(f"robot_id must be a non-negative integer, got {self.robot_id!r}")
        object.__setattr__(self, "robot_id", int(self.robot_id))
        stamp = float(self.stamp)
        if not math.isfinite(stamp) or stamp < 0.0:
            raise ValueError(f"stamp must be finite and non-negative, got {stamp}")
        object.__setattr__(self, "stamp", stamp)
        for name in _VEC_FIELDS:
            object.__setattr__(self, name, _as_vec2(getattr(self, name), name))
        if not isinstance(self.size_spec, SizeSpec):
            object.__setattr__(self, "size_spec", SizeSpec(tuple(self.size_spec)))


@dataclass(frozen=True)
class Waypoint:
    """A position the trajectory must pass through at a given time."""

    stamp: float
    position: tuple[float, float]

    def __post_init__(self):
        stamp = float(self.stamp)
        if not math.isfinite(stamp):
            raise ValueError(f"waypoint stamp must be finite, got {stamp}")
        object.__setattr__(self, "stamp", stamp)
        object.__setattr__(self, "position", _as_vec2(self.position, "waypoint.position"))


@dataclass(frozen=True)
class PlannerConfig:
    """Planner and perception knobs with workable indoor defaults.

    The polynomial degree is tied to the top penalized derivative:
    degree = 2 * deriv_order - 1, so the default (order 3, jerk) plans
    quintics.  Dynamic limits are per derivative order 1..deriv_order,
    applied per axis.
    """

    horizon: float = 3.0                 # planning window, seconds
    timestep: float = 0.1                # constraint/sample grid inside the window
    replan_period: float = 0.04          # 25 Hz replanning
    deriv_order: int = 3                 # top penalized derivative (jerk)
    poly_degree: int = 5                 # must equal 2 * deriv_order - 1
    w_deriv_lower: float = 1.0           # weight on |x^(n-1)|^2
    w_deriv_top: float = 1.0             # weight on |x^(n)|^2
    w_goal: float = 100.0                # endpoint attraction
    w_obstacle: float = 10.0             # lidar obstacle repulsion
    obstacle_sharpness: float = 10.0     # exponential decay rate of the repulsion
    obstacle_threshold: float = 0.75     # distance where repulsion starts to bite, meters
    dyn_limits: tuple[tuple[float, float], ...] = ((-1.0, 1.0), (-2.0, 2.0), (-10.0, 10.0))
    n_dyn_samples: int = 16              # times at which dynamic limits are enforced
    relax_factor: float = 1.5            # one-shot dynamic-limit scaling on infeasibility
    staleness_limit: float = 1.0         # peer state older than this is flagged stale
    half_accel: bool = False             # include the 1/2 factor in ballistic prediction
    obstacle_margin: float = 0.0         # inflation added to every fitted obstacle radius
    point_radius_floor: float = 0.05     # radius assigned to single-return clusters
    wall_split_angle: float = math.pi / 2.0  # clusters wider than this get split
    max_chunk_span: float = 1.2          # split clusters longer than this (meters)
    split_range_jump: float = 0.5        # adjacent-beam range step that separates surfaces
    circle_fit_tolerance: float = 0.01   # max radial misfit to accept a reconstructed disc
    qp_max_iter: int = 4000              # solver iteration budget per attempt

    def grid_steps(self) -> int:
        return int(round(self.horizon / self.timestep))

    def n_coeffs(self) -> int:
        return self.poly_degree + 1


def default_config() -> PlannerConfig:
    """Config matching the reference setup: 3 s horizon, 0.1 s grid, 25 Hz."""
    return validate_config(PlannerConfig())


def validate_config(cfg: PlannerConfig) -> PlannerConfig:
    """Check invariants and return the config unchanged; raise ValueError naming the bad field."""
    def positive(name, value):
        if not math.isfinite(value) or value <= 0.0:
            raise ValueError(f"config.{name} must be positive finite, got {value}")

    def non_negative(name, value):
        if not math.isfinite(value) or value < 0.0:
            raise ValueError(f"config.{name} must be non-negative finite, got {value}")

    positive("horizon", cfg.horizon)
    positive("timestep", cfg.timestep)
    positive("replan_period", cfg.replan_period)
    steps = cfg.horizon / cfg.timestep
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ValueError(
            f"config.timestep must divide config.horizon: {cfg.timestep} vs {cfg.horizon}")
    if cfg.replan_period > cfg.horizon:
        raise ValueError(
            f"config.replan_period {cfg.replan_period} exceeds config.horizon {cfg.horizon}")
    if cfg.deriv_order < 2:
        raise ValueError(f"config.deriv_order must be >= 2, got {cfg.deriv_order}")
    if cfg.poly_degree != 2 * cfg.deriv_order - 1:
        raise ValueError(
            f"config.poly_degree must be 2*deriv_order-1 = {2 * cfg.deriv_order - 1}, "
            f"got {cfg.poly_degree}")
    non_negative("w_deriv_lower", cfg.w_deriv_lower)
    non_negative("w_deriv_top", cfg.w_deriv_top)
    non_negative("w_goal", cfg.w_goal)
    non_negative("w_obstacle", cfg.w_obstacle)
    positive("obstacle_sharpness", cfg.obstacle_sharpness)
    positive("obstacle_threshold", cfg.obstacle_threshold)
    if len(cfg.dyn_limits) != cfg.deriv_order:
        raise ValueError(
            f"config.dyn_limits needs one (lo, hi) pair per derivative order "
            f"1..{cfg.deriv_order}, got {len(cfg.dyn_limits)}")
    for k, (lo, hi) in enumerate(cfg.dyn_limits, start=1):
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"config.dyn_limits[{k - 1}] must satisfy lo <= hi, got ({lo}, {hi})")
    if cfg.n_dyn_samples < 2:
        raise ValueError(f"config.n_dyn_samples must be >= 2, got {cfg.n_dyn_samples}")
    if not math.isfinite(cfg.relax_factor) or cfg.relax_factor < 1.0:
        raise ValueError(f"config.relax_factor must be >= 1, got {cfg.relax_factor}")
    positive("staleness_limit", cfg.staleness_limit)
    non_negative("obstacle_margin", cfg.obstacle_margin)
    non_negative("point_radius_floor", cfg.point_radius_floor)
    positive("wall_split_angle", cfg.wall_split_angle)
    positive("max_chunk_span", cfg.max_chunk_span)
    positive("split_range_jump", cfg.split_range_jump)
    positive("circle_fit_tolerance", cfg.circle_fit_tolerance)
    if cfg.qp_max_iter < 1:
        raise ValueError(f"config.qp_max_iter must be >= 1, got {cfg.qp_max_iter}")
    return cfg


def with_scaled_limits(cfg: PlannerConfig, factor: float) -> PlannerConfig:
    """Copy of cfg with every dynamic bound scaled by factor (used for relaxation)."""
    limits = tuple((lo * factor, hi * factor) for lo, hi in cfg.dyn_limits)
    return replace(cfg, dyn_limits=limits)
