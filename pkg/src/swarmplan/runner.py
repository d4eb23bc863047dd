"""Deterministic decentralized planning loop over the kinematic world.

One run executes a fixed-step coordinator at the replan rate: deliver
bus messages, refresh lidar obstacles at the sensor cadence, let every
agent independently predict peers / build safe regions / plan, then
advance the world and check ground-truth collisions.  Agents never read
each other's plans, only broadcast states, so the loop is a faithful
serialization of N independent planners.  Everything is seeded:
re-running with the same scenario and seed reproduces the logs byte for
byte.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bus import MessageBus
from .core import PlannerConfig, RobotState, SizeSpec, Waypoint
from .perception import ObstacleCircle, scan_to_obstacles
from .prediction import PeerPrediction, inflate_footprint, predict_horizon
from .saferegion import safe_polyhedron, shrink_by_ego
from .scenario import RobotSpec, Scenario
from .simworld import (CollisionEvent, RobotBody, point_segment_distance,
                       check_collisions, raycast_scan, step_world)
from .trajopt import PolyTrajectory, evaluate, plan

_TIME_EPS = 1e-9
_REGION_PAD = 0.05   # extra plane erosion beyond the body radius, meters
_PARK_SPEED = 0.05   # slower than this inside goal tolerance counts as parked
_SPAWN_CLEARANCE = 0.05   # extra gap demanded between randomized spawns
_SPAWN_TRIES = 500


@dataclass
class _Agent:
    """Mutable per-robot planner state owned by the coordinator."""

    spec: RobotSpec
    cfg: PlannerConfig
    waypoints: tuple[Waypoint, ...]
    pad_spec: SizeSpec
    traj: Optional[PolyTrajectory] = None
    reuse_spent: bool = False
    obstacles: list[ObstacleCircle] = field(default_factory=list)
    dual: Optional[np.ndarray] = None
    last_status: str = "optimal"
    arrival_time: Optional[float] = None
    dock_block: int = 0     # cycles left before docking may re-engage


@dataclass(frozen=True)
class RunReport:
    """Outcome of one run, sufficient to audit success from the logs alone."""

    scenario: str
    seed: int
    success: bool
    failure_reason: Optional[str]   # collision | planner_failed | goal_timeout
    cycles: int
    duration: float
    events: tuple[CollisionEvent, ...]
    robots: dict
    status_counts: dict
    min_robot_distance: Optional[float]
    min_robot_clearance: Optional[float]
    solve_time_ms: dict

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "success": self.success,
            "failure_reason": self.failure_reason,
            "cycles": self.cycles,
            "duration": self.duration,
            "n_events": len(self.events),
            "robots": self.robots,
            "status_counts": dict(self.status_counts),
            "min_robot_distance": self.min_robot_distance,
            "min_robot_clearance": self.min_robot_clearance,
            "solve_time_ms": self.solve_time_ms,
        }


@dataclass(frozen=True)
class BatchReport:
    scenario: str
    n_seeds: int
    successes: int
    success_rate: float
    failure_counts: dict
    runs: tuple[RunReport, ...]

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_seeds": self.n_seeds,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "failure_counts": dict(self.failure_counts),
            "runs": [
                {"seed": r.seed, "success": r.success,
                 "failure_reason": r.failure_reason,
                 "min_robot_clearance": r.min_robot_clearance}
                for r in self.runs
            ],
        }


def _spawn_clear(point, radius, placed, scenario: Scenario) -> bool:
    for other_point, other_radius in placed:
        if math.dist(point, other_point) < radius + other_radius + _SPAWN_CLEARANCE:
            return False
    for center, disc_radius in scenario.world.discs:
        if math.dist(point, center) < radius + disc_radius + _SPAWN_CLEARANCE:
            return False
    for p1, p2 in scenario.world.walls:
        if point_segment_distance(point[0], point[1], p1, p2) < radius + _SPAWN_CLEARANCE:
            return False
    return True


def spawn_positions(scenario: Scenario, seed: int) -> dict:
    """Start positions for one seeded run.

    Robots with a spawn zone get a rejection-sampled collision-free
    point inside it; the rest keep their declared starts (placed first
    so zoned robots must clear them).  Sampling falls back to the
    declared start when the zone is too congested to place.
    """
    rng = np.random.default_rng(np.random.SeedSequence([max(seed, 0), 0x5AEED]))
    starts: dict = {}
    placed = []
    for robot in scenario.robots:
        if robot.spawn_zone is None:
            starts[robot.robot_id] = robot.start
            placed.append((robot.start, robot.size_spec.bounding_radius()))
    for robot in scenario.robots:
        if robot.spawn_zone is None:
            continue
        radius = robot.size_spec.bounding_radius()
        xmin, ymin, xmax, ymax = robot.spawn_zone
        point = robot.start
        for _ in range(_SPAWN_TRIES):
            candidate = (float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)))
            if _spawn_clear(candidate, radius, placed, scenario):
                point = candidate
                break
        starts[robot.robot_id] = point
        placed.append((point, radius))
    return starts


def _clamp_prediction(pred: PeerPrediction, state: RobotState,
                      cfg: PlannerConfig) -> PeerPrediction:
    """Freeze a ballistic forecast once it stops being physically credible.

    Constant-acceleration extrapolation over a full horizon flings a
    peer that is merely ramping up several meters past anything it can
    reach, and the separating plane of such a phantom footprint can
    land inside the ego's own corridor.  A sample is kept only while
    the implied peer speed stays within the shared dynamic limits
    (relaxed bound, since peers may be running the relaxed fallback);
    later samples repeat the last credible footprint.
    """
    cap = max(abs(b) for b in cfg.dyn_limits[0]) * cfg.relax_factor
    vx, vy = state.velocity
    ax, ay = state.acceleration
    gain = 1.0 if cfg.half_accel else 2.0
    samples = []
    frozen = inflate_footprint(state.position, state.size_spec)
    credible = True
    for t, fp in pred.samples:
        dt = t - state.stamp
        if credible and math.hypot(vx + gain * ax * dt, vy + gain * ay * dt) > cap:
            credible = False
        if credible:
            frozen = fp
        samples.append((t, frozen))
    return PeerPrediction(pred.robot_id, tuple(samples), pred.stale)


_DOCK_RANGE = 1.5    # docking engages inside this distance to the goal
_DOCK_CLEAR = 0.55   # a peer this close to the goal point disables docking
_DOCK_BACKOFF = 25   # cycles to plan without the waypoint after it failed


def _docking_waypoint(agent: _Agent, body, peer_states, tolerance: float,
                      now: float) -> Optional[Waypoint]:
    """Timed goal waypoint for a short final approach.

    An endpoint-only attraction procrastinates near any soft obstacle
    field: each plan promises the dive into the goal at the very end of
    the horizon, and replanning executes only the cheap hover at its
    head, so the dive never happens.  Once the approach is short and the
    goal itself is clear of peers, pinning the goal with a hard timed
    waypoint moves the dive into the part of the plan that actually
    runs.  The lead time is the slowest rest-to-rest minimum-jerk bound
    over all dynamic limits, with margin for curvature.
    """
    if agent.waypoints or agent.dock_block > 0:
        return None
    goal = agent.spec.goal
    d = math.dist(body.position, goal)
    if not 0.5 * tolerance < d <= _DOCK_RANGE:
        return None
    for state in peer_states:
        if math.dist(state.position, goal) < _DOCK_CLEAR:
            return None
    # peak |v|, |a|, |j| of a rest-to-rest minimum-jerk reach of length d
    lead = 0.8
    for order, ((lo, hi), peak) in enumerate(
            zip(agent.cfg.dyn_limits, (1.875, 5.774, 60.0)), start=1):
        bound = 0.9 * max(abs(lo), abs(hi))
        lead = max(lead, 1.2 * (peak * d / bound) ** (1.0 / order))
    lead = min(lead, agent.cfg.horizon)
    return Waypoint(now + lead, goal)


def _carrot_target(position, goal, cfg: PlannerConfig) -> tuple[float, float]:
    """Goal clipped to the ball reachable within one horizon.

    Feeding the raw goal to the planner makes the endpoint cost scale
    with the square of the remaining distance, which drowns the
    obstacle cost early in a long run and makes the no-history
    straight-line linearization span obstacles it should respect.
    """
    vmax = max(abs(b) for b in cfg.dyn_limits[0])
    reach = 0.9 * vmax * cfg.horizon
    dx, dy = goal[0] - position[0], goal[1] - position[1]
    dist = math.hypot(dx, dy)
    if dist <= reach:
        return (float(goal[0]), float(goal[1]))
    s = reach / dist
    return (position[0] + s * dx, position[1] + s * dy)


def _pair_separation(bodies, radii):
    min_dist = math.inf
    min_clear = math.inf
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            dist = math.dist(bodies[i].position, bodies[j].position)
            min_dist = min(min_dist, dist)
            min_clear = min(min_clear, dist - radii[i] - radii[j])
    return min_dist, min_clear


def run(scenario: Scenario, out_dir=None, seed: Optional[int] = None,
        randomize_spawn: bool = False) -> RunReport:
    """Execute one seeded run; optionally write logs, report and plot to out_dir."""
    run_seed = scenario.seed if seed is None else int(seed)
    starts = (spawn_positions(scenario, run_seed) if randomize_spawn
              else {r.robot_id: r.start for r in scenario.robots})

    bus_cfg = dataclasses.replace(
        scenario.bus, seed=(scenario.bus.seed * 1000003 + run_seed) % (2**31 - 1))
    bus = MessageBus(bus_cfg)
    world = scenario.world

    bodies = [RobotBody(r.robot_id, r.size_spec, starts[r.robot_id],
                        (0.0, 0.0), (0.0, 0.0), r.heading)
              for r in scenario.robots]
    radii = [r.size_spec.bounding_radius() for r in scenario.robots]
    # bus states carry integer ids; scenario names only appear in the logs
    wire_id = {r.robot_id: k for k, r in enumerate(scenario.robots)}
    agents = {}
    for robot in scenario.robots:
        waypoints = robot.waypoints
        if robot.goal_stamp is not None:
            waypoints = waypoints + (Waypoint(robot.goal_stamp, robot.goal),)
        # planes eroded by the bare radius leave zero slack; replan latency
        # and the sample grid need a little of their own
        pad = SizeSpec(tuple(d + _REGION_PAD for d in robot.size_spec.dims))
        agents[robot.robot_id] = _Agent(robot, robot.planner_config(scenario.planner),
                                        waypoints, pad)

    dt = scenario.planner.replan_period
    n_cycles = int(round(scenario.duration / dt))
    scan_period = 1.0 / scenario.lidar.rate
    next_broadcast = 0.0
    next_scan = 0.0

    traj_rows = []
    event_log: list[CollisionEvent] = []
    status_counts: Counter = Counter()
    solve_times = []
    min_dist, min_clear = _pair_separation(bodies, radii)
    cycles_done = 0

    for body in bodies:
        agent = agents[body.robot_id]
        if math.dist(body.position, agent.spec.goal) <= scenario.goal_tolerance:
            agent.arrival_time = 0.0

    for k in range(n_cycles):
        t = k * dt
        if t >= next_broadcast - _TIME_EPS:
            for body in bodies:
                bus.broadcast(RobotState(wire_id[body.robot_id], t, body.position,
                                         body.velocity, body.acceleration,
                                         body.size_spec), t)
            next_broadcast += bus_cfg.broadcast_period
        if t >= next_scan - _TIME_EPS:
            for body in bodies:
                pose = (body.position[0], body.position[1], body.heading)
                scan = raycast_scan(world, pose, scenario.lidar, stamp=t)
                agents[body.robot_id].obstacles = scan_to_obstacles(
                    scan, agents[body.robot_id].cfg)
            next_scan += scan_period

        trajmap = {}
        pred_cache: dict = {}   # same received state -> same prediction this cycle
        for body in bodies:
            agent = agents[body.robot_id]
            cfg = agent.cfg
            peers = bus.latest_states(wire_id[body.robot_id], t)
            predictions = []
            for state in peers.values():
                key = (id(cfg), state.robot_id, state.stamp)
                pred = pred_cache.get(key)
                if pred is None:
                    pred = _clamp_prediction(predict_horizon(state, cfg, t), state, cfg)
                    pred_cache[key] = pred
                predictions.append(pred)
            prev = agent.traj
            regions = []
            for j in range(1, cfg.grid_steps() + 1):
                tj = t + j * cfg.timestep
                anchor = (evaluate(prev, tj, allow_extrapolation=True)
                          if prev is not None else body.position)
                footprints = [p.samples[j - 1][1] for p in predictions]
                poly = safe_polyhedron(anchor, footprints, world.bounds, stamp=tj)
                regions.append(shrink_by_ego(poly, agent.pad_spec))
            state0 = RobotState(wire_id[body.robot_id], t, body.position,
                                body.velocity, body.acceleration, body.size_spec)
            # discs the horizon cannot possibly bring into cost range are dropped
            vmax = max(abs(b) for b in cfg.dyn_limits[0])
            reach = (cfg.horizon * vmax * cfg.relax_factor * math.sqrt(2.0)
                     + cfg.obstacle_threshold + 2.0 * body.size_spec.bounding_radius()
                     + 0.5)
            obstacles = [ob for ob in agent.obstacles
                         if math.dist(body.position, ob.center) - ob.radius <= reach]
            target = _carrot_target(body.position, agent.spec.goal, cfg)
            if agent.dock_block > 0:
                agent.dock_block -= 1
            dock = _docking_waypoint(agent, body, peers.values(),
                                     scenario.goal_tolerance, t)
            waypoints = (agent.waypoints if dock is None
                         else agent.waypoints + (dock,))
            t_solve = time.perf_counter()
            outcome = plan(state0, target, waypoints, regions,
                           obstacles, prev, cfg, t,
                           allow_reuse=not agent.reuse_spent, y0=agent.dual)
            solve_times.append(time.perf_counter() - t_solve)
            if outcome.status == "failed" and dock is not None:
                agent.dock_block = _DOCK_BACKOFF
            agent.reuse_spent = outcome.status == "reused_previous"
            agent.traj = outcome.trajectory
            agent.dual = outcome.solve_stats.get("dual")
            agent.last_status = outcome.status
            status_counts[outcome.status] += 1
            trajmap[body.robot_id] = outcome.trajectory
            traj_rows.append((t, body.robot_id, body.position[0], body.position[1],
                              body.velocity[0], body.velocity[1], outcome.status))

        bodies = step_world(bodies, trajmap, t, dt)
        cycles_done = k + 1
        pair_dist, pair_clear = _pair_separation(bodies, radii)
        min_dist = min(min_dist, pair_dist)
        min_clear = min(min_clear, pair_clear)
        events = check_collisions(bodies, world, t + dt)
        if events:
            event_log.extend(events)
            break   # first contact ends the run; everything so far is logged
        for body in bodies:
            agent = agents[body.robot_id]
            if (agent.arrival_time is None
                    and math.dist(body.position, agent.spec.goal)
                    <= scenario.goal_tolerance):
                agent.arrival_time = t + dt
        if all(math.dist(b.position, agents[b.robot_id].spec.goal)
               <= scenario.goal_tolerance
               and math.hypot(b.velocity[0], b.velocity[1]) <= _PARK_SPEED
               for b in bodies):
            break   # everyone parked on goal; the rest of the clock is idle

    robots = {}
    planner_starved = False
    goal_missed = False
    for body in bodies:
        agent = agents[body.robot_id]
        err = math.dist(body.position, agent.spec.goal)
        robots[body.robot_id] = {
            "final_error": err,
            "arrival_time": agent.arrival_time,
            "final_status": agent.last_status,
        }
        if err > scenario.goal_tolerance:
            goal_missed = True
            if agent.last_status == "failed":
                planner_starved = True

    success = not event_log and not goal_missed
    if event_log:
        failure_reason = "collision"
    elif planner_starved:
        failure_reason = "planner_failed"
    elif goal_missed:
        failure_reason = "goal_timeout"
    else:
        failure_reason = None

    times_ms = np.array(solve_times) * 1e3 if solve_times else np.array([0.0])
    report = RunReport(
        scenario=scenario.name,
        seed=run_seed,
        success=success,
        failure_reason=failure_reason,
        cycles=cycles_done,
        duration=cycles_done * dt,
        events=tuple(event_log),
        robots=robots,
        status_counts=dict(status_counts),
        min_robot_distance=None if len(bodies) < 2 else float(min_dist),
        min_robot_clearance=None if len(bodies) < 2 else float(min_clear),
        solve_time_ms={
            "median": float(np.median(times_ms)),
            "p95": float(np.percentile(times_ms, 95)),
            "max": float(np.max(times_ms)),
        },
    )
    if out_dir is not None:
        _write_outputs(Path(out_dir), scenario, report, traj_rows, event_log)
    return report


def batch(scenario: Scenario, n_seeds: int, out_dir=None) -> BatchReport:
    """Run seeds 0..n_seeds-1 with randomized spawn zones and aggregate."""
    if n_seeds < 1:
        raise ValueError(f"n_seeds must be >= 1, got {n_seeds}")
    reports = []
    failures: Counter = Counter()
    for seed in range(n_seeds):
        report = run(scenario, out_dir=None, seed=seed, randomize_spawn=True)
        reports.append(report)
        if not report.success:
            failures[report.failure_reason] += 1
    successes = sum(1 for r in reports if r.success)
    result = BatchReport(
        scenario=scenario.name,
        n_seeds=n_seeds,
        successes=successes,
        success_rate=successes / n_seeds,
        failure_counts=dict(failures),
        runs=tuple(reports),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "batch_report.json", "w") as fh:
            json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


# ---------------------------------------------------------------------------
# artifacts on disk

def _write_outputs(out: Path, scenario: Scenario, report: RunReport,
                   traj_rows, event_log) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectories.csv", "w") as fh:
        fh.write("time,id,x,y,vx,vy,status\n")
        for t, rid, x, y, vx, vy, status in traj_rows:
            fh.write(f"{t:.6f},{rid},{x:.9f},{y:.9f},{vx:.9f},{vy:.9f},{status}\n")
    with open(out / "events.csv", "w") as fh:
        fh.write("time,kind,id_a,id_b,penetration\n")
        for ev in event_log:
            fh.write(f"{ev.time:.6f},{ev.kind},{ev.id_a},{ev.id_b},"
                     f"{ev.penetration:.9f}\n")
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _plot_overview(out / "overview.svg", scenario, traj_rows)


def _plot_overview(path: Path, scenario: Scenario, traj_rows) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.5, 7.5))
    for p1, p2 in scenario.world.walls:
        ax.plot([p1[0], p2[0]], [p1[1], p2[1]], color="black", linewidth=2.5,
                solid_capstyle="round", zorder=3)
    for (cx, cy), radius in scenario.world.discs:
        ax.add_patch(plt.Circle((cx, cy), radius, facecolor="0.7",
                                edgecolor="0.35", zorder=2))
    paths: dict = {}
    for t, rid, x, y, *_ in traj_rows:
        paths.setdefault(rid, []).append((x, y))
    cmap = plt.get_cmap("tab10")
    for idx, robot in enumerate(scenario.robots):
        color = cmap(idx % 10)
        pts = paths.get(robot.robot_id, [(robot.start)])
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, color=color, linewidth=1.4, zorder=4,
                label=robot.robot_id)
        ax.plot(xs[0], ys[0], marker="o", color=color, markersize=6, zorder=5)
        ax.plot(robot.goal[0], robot.goal[1], marker="*", color=color,
                markersize=11, zorder=5)
    xmin, ymin, xmax, ymax = scenario.world.bounds
    pad = 0.4
    ax.set_xlim(xmin - pad, xmax + pad)
    ax.set_ylim(ymin - pad, ymax + pad)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(scenario.name)
    if len(scenario.robots) <= 10:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
