"""Decentralized multi-robot trajectory planning with a deterministic sim harness.

Each robot repeatedly: predicts its peers from broadcast states, cuts a
convex safe region out of the workspace per prediction time, converts
its latest lidar scan into circular obstacles, and solves one convex QP
for a smooth polynomial trajectory toward its goal.  The package also
ships the kinematic world, lossy message bus, scenario files and CLI
used to exercise the whole fleet loop end to end.
"""

from .bus import BusConfig, MessageBus
from .core import (PlannerConfig, RobotState, SizeSpec, Waypoint,
                   default_config, validate_config, with_scaled_limits)
from .perception import (ObstacleCircle, RangeScan, min_enclosing_circle,
                         project_return, scan_to_obstacles, segment_scan)
from .prediction import (FootprintRegion, PeerPrediction, inflate_footprint,
                         predict_horizon, predict_position)
from .qpsolver import QpSolution, solve_qp
from .saferegion import (EgoPenetration, HalfPlane, SafePolyhedron, contains,
                         safe_polyhedron, shrink_by_ego, supporting_halfplane,
                         workspace_halfplanes)
from .scenario import (RobotSpec, Scenario, ScenarioError, bundled_names,
                       load_scenario, parse_scenario)
from .simworld import (CollisionEvent, LidarSpec, RobotBody, World,
                       check_collisions, raycast_scan, step_world)
from .runner import BatchReport, RunReport, batch, run, spawn_positions
from .trajopt import (ExtrapolationError, PlanOutcome, PolyTrajectory, QpProblem,
                      assemble_constraints, basis_matrix, basis_row,
                      build_problem, collision_cost_terms, collision_direction,
                      derivative_cost_hessian, endpoint_cost, evaluate, plan,
                      rebase)

__version__ = "0.1.0"

__all__ = [
    "BusConfig", "MessageBus",
    "PlannerConfig", "RobotState", "SizeSpec", "Waypoint",
    "default_config", "validate_config", "with_scaled_limits",
    "ObstacleCircle", "RangeScan", "min_enclosing_circle", "project_return",
    "scan_to_obstacles", "segment_scan",
    "FootprintRegion", "PeerPrediction", "inflate_footprint",
    "predict_horizon", "predict_position",
    "QpSolution", "solve_qp",
    "EgoPenetration", "HalfPlane", "SafePolyhedron", "contains",
    "safe_polyhedron", "shrink_by_ego", "supporting_halfplane",
    "workspace_halfplanes",
    "RobotSpec", "Scenario", "ScenarioError", "bundled_names",
    "load_scenario", "parse_scenario",
    "CollisionEvent", "LidarSpec", "RobotBody", "World",
    "check_collisions", "raycast_scan", "step_world",
    "BatchReport", "RunReport", "batch", "run", "spawn_positions",
    "ExtrapolationError", "PlanOutcome", "PolyTrajectory", "QpProblem",
    "assemble_constraints", "basis_matrix", "basis_row", "build_problem",
    "collision_cost_terms", "collision_direction", "derivative_cost_hessian",
    "endpoint_cost", "evaluate", "plan", "rebase",
    "__version__",
]
