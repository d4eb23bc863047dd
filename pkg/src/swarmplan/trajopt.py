"""Receding-horizon trajectory optimization over polynomial trajectories.

Each replan solves one convex QP for the 2 * (degree + 1) polynomial
coefficients of an x/y trajectory on a window [0, horizon] in
trajectory-relative time (absolute times are shifted by the plan start
so high powers stay well conditioned).  Costs: integrated squared
high-order derivatives (closed form), a quadratic endpoint attraction,
and a positive-semidefinite quadratic model of the lidar obstacle
repulsion linearized along the previous trajectory.  Constraints:
initial state continuity, hard waypoints inside the window, safe-region
half-planes per grid time, and sampled derivative limits.

When the QP cannot be solved the planner degrades in two fixed steps:
first reuse the previous trajectory if it still threads the current
safe regions (good for one replan cycle), then relax the dynamic limits
once by a configured factor.  Only after both fail does it report
failure, so a caller always sees one of
optimal / reused_previous / relaxed_dynamics / failed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import PlannerConfig, RobotState, Waypoint, with_scaled_limits
from .perception import ObstacleCircle
from .qpsolver import QpSolution, solve_qp
from .saferegion import SafePolyhedron, contains

_REGULARIZATION = 1e-8
_DIST_FLOOR = 1e-3        # surface-distance floor inside the repulsion field
_SPEED_FLOOR = 0.1        # reference speed floor for the travel-cost weighting
_CONTAIN_TOL = 1e-6


class ExtrapolationError(ValueError):
    """Trajectory evaluated outside its validity window."""


@dataclass(frozen=True)
class PolyTrajectory:
    """Polynomial trajectory: per-axis coefficients on [0, horizon] relative time."""

    start_time: float
    horizon: float
    coeffs: np.ndarray  # shape (2, degree + 1), low order first

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[0] != 2 or coeffs.shape[1] < 1:
            raise ValueError(f"coeffs must have shape (2, degree+1), got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("trajectory coefficients must be finite")
        if not math.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValueError(f"trajectory horizon must be positive, got {self.horizon}")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def end_time(self) -> float:
        return self.start_time + self.horizon


@dataclass(frozen=True)
class QpProblem:
    """Quadratic program in the cost convention J(D) = D'HD + F'D."""

    H: np.ndarray
    F: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.H, dtype=float)
        if not np.allclose(h, h.T, atol=1e-9):
            raise ValueError("QP cost matrix must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (h + h.T))
        # tolerance scales with the spectrum: near-contact collision terms
        # reach 1e10+ and eigensolver roundoff grows with them
        if eigs.min() < -1e-8 * max(1.0, float(eigs.max())):
            raise ValueError(f"QP cost matrix must be PSD, min eigenvalue {eigs.min():.3e}")


@dataclass(frozen=True)
class PlanOutcome:
    trajectory: Optional[PolyTrajectory]
    status: str                  # optimal | reused_previous | relaxed_dynamics | failed
    solve_stats: dict


def basis_row(t: float, degree: int, deriv: int = 0) -> np.ndarray:
    """Row r with r . coeffs = d^deriv/dt^deriv of the polynomial at time t."""
    if deriv < 0:
        raise ValueError(f"derivative order must be >= 0, got {deriv}")
    row = np.zeros(degree + 1)
    for j in range(deriv, degree + 1):
        fact = 1.0
        for i in range(deriv):
            fact *= j - i
        row[j] = fact * t ** (j - deriv) if j > deriv else fact
    return row


def basis_matrix(times, degree: int, deriv: int = 0) -> np.ndarray:
    return np.array([basis_row(t, degree, deriv) for t in np.atleast_1d(times)])


@lru_cache(maxsize=64)
def _grid_basis(degree: int, timestep: float, steps: int, deriv: int) -> np.ndarray:
    mat = basis_matrix([(k + 1) * timestep for k in range(steps)], degree, deriv)
    mat.flags.writeable = False
    return mat


@lru_cache(maxsize=64)
def _dyn_rows(degree: int, deriv_order: int, horizon: float, n_samples: int,
              dyn_limits: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = degree + 1
    sample_times = np.linspace(0.0, horizon, n_samples)
    rows, lo, hi = [], [], []
    for order in range(1, deriv_order + 1):
        lo_k, hi_k = dyn_limits[order - 1]
        block = basis_matrix(sample_times, degree, order)
        for row in block:
            for axis in range(2):
                full = np.zeros(2 * m)
                full[axis * m:(axis + 1) * m] = row
                rows.append(full)
                lo.append(lo_k)
                hi.append(hi_k)
    a = np.array(rows)
    a.flags.writeable = False
    return a, np.array(lo), np.array(hi)


def evaluate(traj: PolyTrajectory, t: float, deriv: int = 0,
             allow_extrapolation: bool = False) -> np.ndarray:
    """Value of the trajectory (or one of its derivatives) at absolute time t."""
    t_rel = t - traj.start_time
    if not allow_extrapolation and not -1e-9 <= t_rel <= traj.horizon + 1e-9:
        raise ExtrapolationError(
            f"time {t} outside trajectory window "
            f"[{traj.start_time}, {traj.end_time}]")
    row = basis_row(t_rel, traj.degree, deriv)
    return traj.coeffs @ row


def rebase(traj: PolyTrajectory, new_start: float) -> PolyTrajectory:
    """Express the same polynomial relative to a different start time."""
    delta = new_start - traj.start_time
    deg = traj.degree
    shift = np.zeros((deg + 1, deg + 1))
    for i in range(deg + 1):
        for j in range(i + 1):
            shift[j, i] = math.comb(i, j) * delta ** (i - j)
    return PolyTrajectory(new_start, traj.horizon, traj.coeffs @ shift.T)


# ---------------------------------------------------------------------------
# cost terms

def derivative_cost_hessian(cfg: PlannerConfig, t0: float = 0.0,
                            t1: Optional[float] = None) -> np.ndarray:
    """Closed-form Hessian of the integrated squared derivative penalty.

    J = integral over [t0, t1] of
        w_deriv_lower * |x^(n-1)|^2 + w_deriv_top * |x^(n)|^2
    as a quadratic form D'HD on the stacked [x-coeffs; y-coeffs] vector.
    """
    if t1 is None:
        t1 = cfg.horizon
    return _deriv_hessian(cfg.poly_degree, cfg.deriv_order, cfg.w_deriv_lower,
                          cfg.w_deriv_top, float(t0), float(t1)).copy()


@lru_cache(maxsize=64)
def _deriv_hessian(degree: int, deriv_order: int, w_lower: float, w_top: float,
                   t0: float, t1: float) -> np.ndarray:
    m = degree + 1
    block = np.zeros((m, m))
    for order, weight in ((deriv_order - 1, w_lower), (deriv_order, w_top)):
        if weight == 0.0:
            continue
        for i in range(order, m):
            ci = math.perm(i, order)
            for j in range(order, m):
                cj = math.perm(j, order)
                p = i + j - 2 * order + 1
                block[i, j] += weight * ci * cj * (t1 ** p - t0 ** p) / p
    full = np.zeros((2 * m, 2 * m))
    full[:m, :m] = block
    full[m:, m:] = block
    full.flags.writeable = False
    return full


def endpoint_cost(x_des, t_end: float, weight: float,
                  degree: int) -> tuple[np.ndarray, np.ndarray]:
    """(H, F) of weight * |x(t_end) - x_des|^2 in the D'HD + F'D convention."""
    m = degree + 1
    row = basis_row(t_end, degree, 0)
    h_axis = weight * np.outer(row, row)
    full_h = np.zeros((2 * m, 2 * m))
    full_h[:m, :m] = h_axis
    full_h[m:, m:] = h_axis
    full_f = np.concatenate([-2.0 * weight * float(x_des[0]) * row,
                             -2.0 * weight * float(x_des[1]) * row])
    return full_h, full_f


def collision_direction(point, obs: ObstacleCircle, sharpness: float,
                        threshold: float, fallback_dir=(1.0, 0.0)) -> np.ndarray:
    """Repulsion vector of one obstacle at one point.

    c = (x - center) / (exp(sharpness * (d - threshold)) * d) with d the
    distance to the disc surface, floored at 1 mm so the field stays
    bounded inside the disc.  At the exact center the direction is
    taken from fallback_dir with the floored magnitude.
    """
    u = np.asarray(point, dtype=float) - np.asarray(obs.center, dtype=float)
    s = float(np.hypot(u[0], u[1]))
    d = max(s - obs.radius, _DIST_FLOOR)
    decay = math.exp(sharpness * (d - threshold))
    if s < 1e-12:
        direction = np.asarray(fallback_dir, dtype=float)
        norm = float(np.hypot(direction[0], direction[1]))
        direction = direction / norm if norm > 0 else np.array([1.0, 0.0])
        magnitude = (obs.radius + _DIST_FLOOR) / (math.exp(sharpness * (_DIST_FLOOR - threshold))
                                                  * _DIST_FLOOR)
        return magnitude * direction
    return u / (decay * d)


def _phi_and_gradient(point, obs: ObstacleCircle, sharpness: float, threshold: float,
                      fallback_dir) -> tuple[float, np.ndarray]:
    """Magnitude of the repulsion vector and its gradient wrt the point."""
    u = np.asarray(point, dtype=float) - np.asarray(obs.center, dtype=float)
    s = float(np.hypot(u[0], u[1]))
    if s < 1e-12:
        c = collision_direction(point, obs, sharpness, threshold, fallback_dir)
        phi = float(np.hypot(c[0], c[1]))
        decay = math.exp(sharpness * (_DIST_FLOOR - threshold))
        direction = np.asarray(fallback_dir, dtype=float)
        norm = float(np.hypot(direction[0], direction[1]))
        direction = direction / norm if norm > 0 else np.array([1.0, 0.0])
        return phi, (direction / (decay * _DIST_FLOOR))
    d_raw = s - obs.radius
    if d_raw <= _DIST_FLOOR:
        decay = math.exp(sharpness * (_DIST_FLOOR - threshold))
        phi = s / (decay * _DIST_FLOOR)
        dphi_ds = 1.0 / (decay * _DIST_FLOOR)
    else:
        d = d_raw
        decay = math.exp(sharpness * (d - threshold))
        phi = s / (decay * d)
        dphi_ds = (1.0 / d - sharpness * s / d - s / (d * d)) / decay
    return phi, dphi_ds * (u / s)


def _phi_grad_batch(positions: np.ndarray, centers: np.ndarray, radii: np.ndarray,
                    sharpness: float, threshold: float, fallback_dir: np.ndarray):
    """Vectorized _phi_and_gradient over every (obstacle, grid sample) pair.

    positions is (S, 2), centers (K, 2), radii (K,); returns phi with
    shape (K, S) and gradients with shape (K, S, 2).
    """
    u = positions[None, :, :] - centers[:, None, :]
    s = np.hypot(u[..., 0], u[..., 1])
    degenerate = s < 1e-12
    s_safe = np.maximum(s, 1e-12)
    d_raw = s - radii[:, None]
    clamped = d_raw <= _DIST_FLOOR
    d = np.where(clamped, _DIST_FLOOR, d_raw)
    decay = np.exp(sharpness * (d - threshold))
    phi = s / (decay * d)
    dphi_ds = np.where(clamped,
                       1.0 / (decay * d),
                       (1.0 / d - sharpness * s / d - s / (d * d)) / decay)
    direction = u / s_safe[..., None]
    if np.any(degenerate):
        floor_decay = math.exp(sharpness * (_DIST_FLOOR - threshold))
        phi = np.where(degenerate,
                       (radii[:, None] + _DIST_FLOOR) / (floor_decay * _DIST_FLOOR),
                       phi)
        direction[degenerate] = fallback_dir
    return phi, dphi_ds[..., None] * direction


def collision_cost_terms(prev: PolyTrajectory, obstacles: Sequence[ObstacleCircle],
                         cfg: PlannerConfig, now: float,
                         fallback_dir=(1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic model of the obstacle travel cost around the previous trajectory.

    The underlying scalar cost is
        w_obstacle * sum over grid times of |c(x(t_k))| * v(t_k) * timestep
    with v the speed along the previous trajectory (floored at 0.1 m/s).
    Returns (H, F): F is the exact gradient of that sampled cost with
    respect to the coefficient vector at the previous trajectory, H a
    Gauss-Newton style curvature clamped to be PSD.  plan() recenters
    the pair so the quadratic model's slope at the linearization point
    matches F.
    """
    m = cfg.n_coeffs()
    size = 2 * m
    h = np.zeros((size, size))
    f = np.zeros(size)
    if not obstacles:
        return h, f
    steps = cfg.grid_steps()
    b0 = _grid_basis(cfg.poly_degree, cfg.timestep, steps, 0)
    local = rebase(prev, now)
    positions = b0 @ local.coeffs.T                      # (steps, 2)
    speeds = np.hypot(*(_grid_basis(cfg.poly_degree, cfg.timestep, steps, 1)
                        @ local.coeffs.T).T)
    weights = cfg.w_obstacle * np.maximum(speeds, _SPEED_FLOOR) * cfg.timestep
    fb = np.asarray(fallback_dir, dtype=float)
    fb_norm = float(np.hypot(fb[0], fb[1]))
    fb = fb / fb_norm if fb_norm > 0 else np.array([1.0, 0.0])
    centers = np.array([obs.center for obs in obstacles], dtype=float)
    radii = np.array([obs.radius for obs in obstacles], dtype=float)
    phi, grads = _phi_grad_batch(positions, centers, radii,
                                 cfg.obstacle_sharpness, cfg.obstacle_threshold, fb)
    grad_sum = grads.sum(axis=0)                         # (steps, 2)
    f[:m] = b0.T @ (weights * grad_sum[:, 0])
    f[m:] = b0.T @ (weights * grad_sum[:, 1])
    coef = weights[None, :] / np.maximum(phi, 1e-9)
    # per-sample 2x2 outer products summed over obstacles
    w_ab = np.einsum("ks,ksa,ksb->sab", coef, grads, grads)
    for a, b in ((0, 0), (0, 1), (1, 1)):
        block = b0.T @ (b0 * w_ab[:, a, b][:, None])
        h[a * m:(a + 1) * m, b * m:(b + 1) * m] += block
        if a != b:
            h[b * m:(b + 1) * m, a * m:(a + 1) * m] += block
    h = 0.5 * (h + h.T)
    eigvals, eigvecs = np.linalg.eigh(h)
    if eigvals.min() < 0.0:
        h = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    return h, f


# ---------------------------------------------------------------------------
# constraints

def assemble_constraints(state0: RobotState, waypoints: Sequence[Waypoint],
                         regions: Sequence[SafePolyhedron], cfg: PlannerConfig,
                         now: float):
    """Stack equality and inequality rows for one plan at absolute time now.

    Equalities: position/velocity/acceleration continuity at the window
    start plus one position row per waypoint with stamp inside
    (now, now + horizon].  Inequalities: every safe-region half-plane at
    its grid time and the per-axis derivative limits sampled at
    n_dyn_samples uniform times.
    """
    m = cfg.n_coeffs()
    size = 2 * m
    deg = cfg.poly_degree

    eq_rows, eq_rhs = [], []
    init = ((0, state0.position), (1, state0.velocity), (2, state0.acceleration))
    for order, value in init:
        row = basis_row(0.0, deg, order)
        for axis in range(2):
            full = np.zeros(size)
            full[axis * m:(axis + 1) * m] = row
            eq_rows.append(full)
            eq_rhs.append(float(value[axis]))
    for wp in waypoints:
        t_rel = wp.stamp - now
        if not 1e-9 < t_rel <= cfg.horizon + 1e-9:
            continue  # passed or beyond the window; the caller keeps it for later
        row = basis_row(t_rel, deg, 0)
        for axis in range(2):
            full = np.zeros(size)
            full[axis * m:(axis + 1) * m] = row
            eq_rows.append(full)
            eq_rhs.append(float(wp.position[axis]))

    in_rows, lo, hi = [], [], []
    for poly in regions:
        t_rel = poly.stamp - now
        if not -1e-9 <= t_rel <= cfg.horizon + 1e-9:
            continue
        if not poly.halfplanes:
            continue
        row = basis_row(t_rel, deg, 0)
        normals = np.array([hp.normal for hp in poly.halfplanes])
        block = np.hstack([normals[:, :1] * row, normals[:, 1:] * row])
        in_rows.append(block)
        lo.extend([-np.inf] * len(poly.halfplanes))
        hi.extend(hp.offset for hp in poly.halfplanes)
    dyn_a, dyn_lo, dyn_hi = _dyn_rows(deg, cfg.deriv_order, cfg.horizon,
                                      cfg.n_dyn_samples, cfg.dyn_limits)
    in_rows.append(dyn_a)
    lo.extend(dyn_lo)
    hi.extend(dyn_hi)

    a_eq = np.array(eq_rows) if eq_rows else np.zeros((0, size))
    a_in = np.vstack(in_rows) if in_rows else np.zeros((0, size))
    return a_eq, np.array(eq_rhs), a_in, np.array(lo), np.array(hi)


# ---------------------------------------------------------------------------
# planning

def _straight_line_reference(state0: RobotState, x_des, cfg: PlannerConfig,
                             now: float) -> PolyTrajectory:
    m = cfg.n_coeffs()
    coeffs = np.zeros((2, m))
    for axis in range(2):
        coeffs[axis, 0] = state0.position[axis]
        coeffs[axis, 1] = (float(x_des[axis]) - state0.position[axis]) / cfg.horizon
    return PolyTrajectory(now, cfg.horizon, coeffs)


def _prev_fits_regions(prev: PolyTrajectory, regions: Sequence[SafePolyhedron]) -> bool:
    for poly in regions:
        if poly.stamp > prev.end_time + 1e-9 or poly.stamp < prev.start_time - 1e-9:
            return False
        point = evaluate(prev, poly.stamp, allow_extrapolation=True)
        if not contains(poly, point, tol=_CONTAIN_TOL):
            return False
    return True


def build_problem(state0: RobotState, x_des, waypoints, regions, obstacles,
                  prev: Optional[PolyTrajectory], cfg: PlannerConfig,
                  now: float) -> QpProblem:
    """Assemble the QP of one replanning step (costs in D'HD + F'D form)."""
    reference = rebase(prev, now) if prev is not None else _straight_line_reference(
        state0, x_des, cfg, now)
    vx, vy = state0.velocity
    speed = math.hypot(vx, vy)
    fallback_dir = (vx / speed, vy / speed) if speed > 1e-9 else (1.0, 0.0)

    h_net = derivative_cost_hessian(cfg)
    h_goal, f_goal = endpoint_cost(x_des, cfg.horizon, cfg.w_goal, cfg.poly_degree)
    h_net += h_goal
    f_net = f_goal.copy()
    h_obs, f_obs_grad = collision_cost_terms(reference, obstacles, cfg, now, fallback_dir)
    h_net += h_obs
    d0 = reference.coeffs.reshape(-1)
    f_net += f_obs_grad - 2.0 * (h_obs @ d0)   # slope at the linearization point = gradient
    h_net += _REGULARIZATION * np.eye(len(f_net))

    a_eq, b_eq, a_in, lo, hi = assemble_constraints(state0, waypoints, regions, cfg, now)
    return QpProblem(h_net, f_net, a_eq, b_eq, a_in, lo, hi)


def plan(state0: RobotState, x_des, waypoints, regions, obstacles,
         prev: Optional[PolyTrajectory], cfg: PlannerConfig, now: float,
         allow_reuse: bool = True, y0=None) -> PlanOutcome:
    """One receding-horizon replanning step.

    Tries the full QP first; on solver failure falls back in order to
    (1) reusing the previous trajectory if it still satisfies the
    current safe regions (intended to cover at most one replan cycle;
    pass allow_reuse=False right after a reuse), then (2) re-solving
    with dynamic limits scaled once by cfg.relax_factor.  The returned
    status reflects which rung succeeded; failed means the caller must
    command a safe stop.

    y0 warm-starts the solver's row multipliers; it is used only when
    its length matches this cycle's constraint stack (peer count and
    region layout unchanged since it was produced).
    """
    attempts = []
    problem = build_problem(state0, x_des, waypoints, regions, obstacles, prev, cfg, now)
    warm = rebase(prev, now).coeffs.reshape(-1) if prev is not None else None
    n_rows = problem.A_eq.shape[0] + problem.A_in.shape[0]
    y_warm = y0 if (y0 is not None and len(y0) == n_rows) else None
    sol = solve_qp(2.0 * problem.H, problem.F, problem.A_eq, problem.b_eq,
                   problem.A_in, problem.lb, problem.ub, x0=warm, y0=y_warm,
                   max_iter=cfg.qp_max_iter)
    attempts.append(f"direct:{sol.status}")
    if sol.status == "solved":
        traj = PolyTrajectory(now, cfg.horizon, sol.x.reshape(2, -1))
        return PlanOutcome(traj, "optimal", _stats(attempts, sol))

    if allow_reuse and prev is not None and _prev_fits_regions(prev, regions):
        attempts.append("reuse:accepted")
        return PlanOutcome(prev, "reused_previous", _stats(attempts, sol))
    attempts.append("reuse:unavailable" if allow_reuse else "reuse:spent")

    relaxed_cfg = with_scaled_limits(cfg, cfg.relax_factor)
    a_eq, b_eq, a_in, lo, hi = assemble_constraints(state0, waypoints, regions,
                                                    relaxed_cfg, now)
    sol2 = solve_qp(2.0 * problem.H, problem.F, a_eq, b_eq, a_in, lo, hi,
                    x0=warm, y0=y_warm, max_iter=cfg.qp_max_iter)
    attempts.append(f"relax:{sol2.status}")
    if sol2.status == "solved":
        traj = PolyTrajectory(now, cfg.horizon, sol2.x.reshape(2, -1))
        return PlanOutcome(traj, "relaxed_dynamics", _stats(attempts, sol2))
    return PlanOutcome(None, "failed", _stats(attempts, sol2))


def _stats(attempts: list[str], sol: QpSolution) -> dict:
    return {
        "attempts": tuple(attempts),
        "solver_status": sol.status,
        "iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "objective": sol.objective,
        "dual": sol.y if sol.status == "solved" else None,
    }
