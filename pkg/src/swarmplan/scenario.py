"""Scenario files: strict TOML schema, validation, and bundled presets.

A scenario pins down everything a run needs: the world geometry, the
robot fleet (start, goal, optional timed waypoints, optional per-robot
dynamic limits), planner/bus/lidar settings, duration, and the seed.
The schema is strict on purpose: unknown keys are rejected with their
dotted path (and the line in the file when it can be found), so a typo
in an experiment config never passes silently.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:                # Python < 3.11
    import tomli as tomllib

from .bus import BusConfig
from .core import PlannerConfig, SizeSpec, Waypoint, default_config, validate_config
from .perception import ObstacleCircle
from .simworld import LidarSpec, World, point_segment_distance

_BUNDLED_PACKAGE = "swarmplan.scenarios"


class ScenarioError(ValueError):
    """Scenario file rejected; message carries the offending key path."""


@dataclass(frozen=True)
class RobotSpec:
    """One robot of the fleet as declared in the scenario file."""

    robot_id: str
    start: tuple[float, float]
    goal: tuple[float, float]
    size_spec: SizeSpec
    heading: float = 0.0
    goal_stamp: Optional[float] = None       # when set, goal is a hard timed waypoint
    waypoints: tuple[Waypoint, ...] = ()
    spawn_zone: Optional[tuple[float, float, float, float]] = None
    dyn_limits: Optional[tuple[tuple[float, float], ...]] = None

    def planner_config(self, base: PlannerConfig) -> PlannerConfig:
        if self.dyn_limits is None:
            return base
        return dataclasses.replace(base, dyn_limits=self.dyn_limits)


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    goal_tolerance: float
    seed: int
    world: World
    robots: tuple[RobotSpec, ...]
    planner: PlannerConfig
    bus: BusConfig
    lidar: LidarSpec


# ---------------------------------------------------------------------------
# strict schema walking

def _line_of(source: str, key: str) -> Optional[int]:
    # best effort: first line where the bare key is assigned or opens a table
    pat = re.compile(rf"^\s*(\[+[\w.\s]*)?\b{re.escape(key)}\b\s*[=\].]", re.M)
    match = pat.search(source)
    if match is None:
        return None
    return source.count("\n", 0, match.start()) + 1


def _fail(source: str, path: str, message: str) -> ScenarioError:
    key = path.split(".")[-1]
    line = _line_of(source, key)
    where = f" (line {line})" if line is not None else ""
    return ScenarioError(f"{path}{where}: {message}")


def _check_keys(table: dict, allowed: set[str], path: str, source: str) -> None:
    for key in table:
        if key not in allowed:
            raise _fail(source, f"{path}.{key}" if path else key,
                        f"unknown key; allowed here: {', '.join(sorted(allowed))}")


def _number(value: Any, path: str, source: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(source, path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _vec(value: Any, length: int, path: str, source: str) -> tuple[float, ...]:
    if not isinstance(value, list) or len(value) != length:
        raise _fail(source, path, f"expected a list of {length} numbers")
    return tuple(_number(v, f"{path}[{i}]", source) for i, v in enumerate(value))


def _parse_world(table: Any, source: str) -> World:
    if not isinstance(table, dict):
        raise _fail(source, "world", "expected a table")
    _check_keys(table, {"bounds", "walls", "discs"}, "world", source)
    if "bounds" not in table:
        raise _fail(source, "world.bounds", "required")
    bounds = _vec(table["bounds"], 4, "world.bounds", source)
    walls = []
    for i, seg in enumerate(table.get("walls", [])):
        x1, y1, x2, y2 = _vec(seg, 4, f"world.walls[{i}]", source)
        walls.append(((x1, y1), (x2, y2)))
    discs = []
    for i, raw in enumerate(table.get("discs", [])):
        x, y, r = _vec(raw, 3, f"world.discs[{i}]", source)
        if r <= 0:
            raise _fail(source, f"world.discs[{i}]", f"radius must be positive, got {r}")
        discs.append(ObstacleCircle((x, y), r))
    try:
        return World(tuple(walls), tuple(discs), bounds)
    except ValueError as exc:
        raise _fail(source, "world", str(exc)) from exc


_PLANNER_FIELDS = {f.name for f in dataclasses.fields(PlannerConfig)}


def _parse_planner(table: Any, source: str) -> PlannerConfig:
    cfg = default_config()
    if table is None:
        return cfg
    if not isinstance(table, dict):
        raise _fail(source, "planner", "expected a table")
    _check_keys(table, _PLANNER_FIELDS, "planner", source)
    overrides: dict[str, Any] = {}
    for key, value in table.items():
        if key == "dyn_limits":
            overrides[key] = tuple(
                tuple(_vec(pair, 2, f"planner.dyn_limits[{i}]", source))
                for i, pair in enumerate(value))
        elif key in ("deriv_order", "poly_degree", "n_dyn_samples", "qp_max_iter"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise _fail(source, f"planner.{key}", "expected an integer")
            overrides[key] = value
        elif key == "half_accel":
            if not isinstance(value, bool):
                raise _fail(source, f"planner.{key}", "expected a boolean")
            overrides[key] = value
        else:
            overrides[key] = _number(value, f"planner.{key}", source)
    cfg = dataclasses.replace(cfg, **overrides)
    try:
        validate_config(cfg)
    except ValueError as exc:
        raise _fail(source, "planner", str(exc)) from exc
    return cfg


def _parse_bus(table: Any, source: str) -> BusConfig:
    if table is None:
        return BusConfig()
    if not isinstance(table, dict):
        raise _fail(source, "bus", "expected a table")
    allowed = {"broadcast_period", "latency", "drop_probability", "seed"}
    _check_keys(table, allowed, "bus", source)
    kwargs: dict[str, Any] = {}
    for key, value in table.items():
        if key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise _fail(source, "bus.seed", "expected an integer")
            kwargs[key] = value
        else:
            kwargs[key] = _number(value, f"bus.{key}", source)
    try:
        return BusConfig(**kwargs)
    except ValueError as exc:
        raise _fail(source, "bus", str(exc)) from exc


def _parse_lidar(table: Any, source: str) -> LidarSpec:
    if table is None:
        return LidarSpec()
    if not isinstance(table, dict):
        raise _fail(source, "lidar", "expected a table")
    allowed = {"beams", "fov", "max_range", "rate", "quantization"}
    _check_keys(table, allowed, "lidar", source)
    kwargs: dict[str, Any] = {}
    for key, value in table.items():
        if key == "beams":
            if isinstance(value, bool) or not isinstance(value, int):
                raise _fail(source, "lidar.beams", "expected an integer")
            kwargs[key] = value
        else:
            kwargs[key] = _number(value, f"lidar.{key}", source)
    try:
        return LidarSpec(**kwargs)
    except ValueError as exc:
        raise _fail(source, "lidar", str(exc)) from exc


_ROBOT_KEYS = {"id", "start", "goal", "size", "heading", "goal_stamp",
               "waypoints", "spawn_zone", "dyn_limits"}


def _parse_robot(table: Any, index: int, source: str) -> RobotSpec:
    path = f"robots[{index}]"
    if not isinstance(table, dict):
        raise _fail(source, path, "expected a table")
    _check_keys(table, _ROBOT_KEYS, path, source)
    for required in ("id", "start", "goal", "size"):
        if required not in table:
            raise _fail(source, f"{path}.{required}", "required")
    robot_id = table["id"]
    if not isinstance(robot_id, str) or not robot_id:
        raise _fail(source, f"{path}.id", "expected a non-empty string")
    start = _vec(table["start"], 2, f"{path}.start", source)
    goal = _vec(table["goal"], 2, f"{path}.goal", source)
    size_raw = table["size"]
    if not isinstance(size_raw, list) or not 1 <= len(size_raw) <= 3:
        raise _fail(source, f"{path}.size", "expected a list of 1 to 3 numbers")
    dims = tuple(_number(v, f"{path}.size[{i}]", source)
                 for i, v in enumerate(size_raw))
    try:
        size_spec = SizeSpec(dims)
    except ValueError as exc:
        raise _fail(source, f"{path}.size", str(exc)) from exc
    heading = _number(table.get("heading", 0.0), f"{path}.heading", source)
    goal_stamp = None
    if "goal_stamp" in table:
        goal_stamp = _number(table["goal_stamp"], f"{path}.goal_stamp", source)
    waypoints = []
    for i, raw in enumerate(table.get("waypoints", [])):
        stamp, x, y = _vec(raw, 3, f"{path}.waypoints[{i}]", source)
        waypoints.append(Waypoint(stamp, (x, y)))
    spawn_zone = None
    if "spawn_zone" in table:
        spawn_zone = _vec(table["spawn_zone"], 4, f"{path}.spawn_zone", source)
        if spawn_zone[0] > spawn_zone[2] or spawn_zone[1] > spawn_zone[3]:
            raise _fail(source, f"{path}.spawn_zone",
                        "expected [xmin, ymin, xmax, ymax] with min <= max")
    dyn_limits = None
    if "dyn_limits" in table:
        dyn_limits = tuple(
            tuple(_vec(pair, 2, f"{path}.dyn_limits[{i}]", source))
            for i, pair in enumerate(table["dyn_limits"]))
    return RobotSpec(robot_id, start, goal, size_spec, heading, goal_stamp,
                     tuple(waypoints), spawn_zone, dyn_limits)


def _in_bounds(point, bounds, margin: float = 0.0) -> bool:
    xmin, ymin, xmax, ymax = bounds
    return (xmin + margin <= point[0] <= xmax - margin
            and ymin + margin <= point[1] <= ymax - margin)


def _validate_semantics(sc: Scenario, source: str) -> None:
    seen: set[str] = set()
    for i, robot in enumerate(sc.robots):
        if robot.robot_id in seen:
            raise _fail(source, f"robots[{i}].id",
                        f"duplicate robot id {robot.robot_id!r}")
        seen.add(robot.robot_id)
        radius = robot.size_spec.bounding_radius()
        if not _in_bounds(robot.start, sc.world.bounds, radius):
            raise _fail(source, f"robots[{i}].start",
                        f"start {robot.start} not inside world bounds")
        if not _in_bounds(robot.goal, sc.world.bounds):
            raise _fail(source, f"robots[{i}].goal",
                        f"goal {robot.goal} not inside world bounds")
        for stamp, _ in robot.waypoints:
            if not 0.0 < stamp <= sc.duration:
                raise _fail(source, f"robots[{i}].waypoints",
                            f"waypoint stamp {stamp} outside (0, duration]")
        if robot.goal_stamp is not None and not 0.0 < robot.goal_stamp <= sc.duration:
            raise _fail(source, f"robots[{i}].goal_stamp",
                        f"stamp {robot.goal_stamp} outside (0, duration]")
        if robot.spawn_zone is not None:
            zx0, zy0, zx1, zy1 = robot.spawn_zone
            if not (_in_bounds((zx0, zy0), sc.world.bounds, radius)
                    and _in_bounds((zx1, zy1), sc.world.bounds, radius)):
                raise _fail(source, f"robots[{i}].spawn_zone",
                            "spawn zone extends outside world bounds")
        if robot.dyn_limits is not None:
            if len(robot.dyn_limits) != sc.planner.deriv_order:
                raise _fail(source, f"robots[{i}].dyn_limits",
                            f"expected {sc.planner.deriv_order} (lo, hi) pairs")
            for lo, hi in robot.dyn_limits:
                if lo > hi:
                    raise _fail(source, f"robots[{i}].dyn_limits",
                                f"lower bound {lo} exceeds upper bound {hi}")
    # declared starts must not overlap each other or the static world
    for i, a in enumerate(sc.robots):
        ra = a.size_spec.bounding_radius()
        for b in sc.robots[i + 1:]:
            rb = b.size_spec.bounding_radius()
            dist = math.dist(a.start, b.start)
            if dist < ra + rb:
                raise _fail(source, "robots",
                            f"starts of {a.robot_id!r} and {b.robot_id!r} overlap "
                            f"(distance {dist:.3f} < {ra + rb:.3f})")
        for center, radius in sc.world.discs:
            if math.dist(a.start, center) < ra + radius:
                raise _fail(source, f"robots[{i}].start",
                            f"start of {a.robot_id!r} overlaps a static disc")
        for p1, p2 in sc.world.walls:
            if point_segment_distance(a.start[0], a.start[1], p1, p2) < ra:
                raise _fail(source, f"robots[{i}].start",
                            f"start of {a.robot_id!r} overlaps a wall")


def parse_scenario(source: str, name_hint: str = "scenario") -> Scenario:
    """Parse and validate scenario TOML text."""
    try:
        raw = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"not valid TOML: {exc}") from exc
    top_allowed = {"name", "duration", "goal_tolerance", "seed",
                   "world", "planner", "bus", "lidar", "robots"}
    _check_keys(raw, top_allowed, "", source)
    for required in ("duration", "world", "robots"):
        if required not in raw:
            raise _fail(source, required, "required")

    name = raw.get("name", name_hint)
    if not isinstance(name, str):
        raise _fail(source, "name", "expected a string")
    duration = _number(raw["duration"], "duration", source)
    if duration <= 0:
        raise _fail(source, "duration", f"must be positive, got {duration}")
    goal_tolerance = _number(raw.get("goal_tolerance", 0.1), "goal_tolerance", source)
    if goal_tolerance <= 0:
        raise _fail(source, "goal_tolerance", "must be positive")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise _fail(source, "seed", "expected an integer")

    world = _parse_world(raw["world"], source)
    planner = _parse_planner(raw.get("planner"), source)
    bus = _parse_bus(raw.get("bus"), source)
    lidar = _parse_lidar(raw.get("lidar"), source)
    robots_raw = raw["robots"]
    if not isinstance(robots_raw, list) or not robots_raw:
        raise _fail(source, "robots", "expected at least one [[robots]] table")
    robots = tuple(_parse_robot(t, i, source) for i, t in enumerate(robots_raw))

    sc = Scenario(name, duration, goal_tolerance, seed, world, robots,
                  planner, bus, lidar)
    _validate_semantics(sc, source)
    return sc


def bundled_names() -> tuple[str, ...]:
    from importlib import resources
    files = resources.files(_BUNDLED_PACKAGE)
    return tuple(sorted(p.name[:-5] for p in files.iterdir()
                        if p.name.endswith(".toml")))


def load_scenario(path) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    p = Path(path)
    if p.is_file():
        return parse_scenario(p.read_text(), p.stem)
    name = str(path)
    if "/" not in name and not name.endswith(".toml"):
        from importlib import resources
        ref = resources.files(_BUNDLED_PACKAGE) / f"{name}.toml"
        if ref.is_file():
            return parse_scenario(ref.read_text(), name)
    raise ScenarioError(
        f"no such scenario file or bundled name: {path!r} "
        f"(bundled: {', '.join(bundled_names())})")
