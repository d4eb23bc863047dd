"""Dense convex QP solver based on ADMM operator splitting.

Solves min 1/2 x'Hx + f'x subject to equality rows and two-sided
inequality rows, all folded into l <= Ax <= u internally.  The problem
data is Ruiz-equilibrated first (iterated row/column scaling plus a
cost normalization) so monomial-basis problems with column norms
spanning many orders of magnitude converge in tens of iterations
instead of thousands.  The splitting alternates a small
positive-definite linear solve in x with a box projection in z; a
final polish step solves the KKT system of the detected active set so
reported residuals are near machine precision rather than ADMM-loop
precision.  Everything is deterministic: no randomization anywhere.

Residuals are reported in normalized (scaled) form: the raw KKT
residual infinity-norms divided by max(1, magnitude of the quantities
they compare).  For problems with O(1) data this is the plain absolute
residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_RHO_EQ_SCALE = 1e3       # equality rows get a stiffer penalty
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_RHO_UPDATE_EVERY = 25
_RESID_CHECK_EVERY = 5
_INFEAS_TOL = 1e-10
_RUIZ_ITERS = 10


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y: np.ndarray             # stacked row multipliers, equality rows first
    objective: float
    status: str               # solved | infeasible | unbounded | max_iter
    iterations: int
    primal_residual: float    # normalized; <= 1e-6 whenever status == "solved"
    dual_residual: float


def _max_abs(arr) -> float:
    return float(np.max(np.abs(arr), initial=0.0))


def _stack_constraints(n, a_eq, b_eq, a_in, lb, ub):
    blocks, lows, highs, eq_rows = [], [], [], 0
    if a_eq is not None and len(a_eq):
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
        if a_eq.shape != (len(b_eq), n):
            raise ValueError(f"A_eq shape {a_eq.shape} does not match n={n}, b_eq={len(b_eq)}")
        blocks.append(a_eq)
        lows.append(b_eq)
        highs.append(b_eq)
        eq_rows = len(b_eq)
    if a_in is not None and len(a_in):
        a_in = np.atleast_2d(np.asarray(a_in, dtype=float))
        lb = np.full(len(a_in), -np.inf) if lb is None else np.atleast_1d(np.asarray(lb, dtype=float))
        ub = np.full(len(a_in), np.inf) if ub is None else np.atleast_1d(np.asarray(ub, dtype=float))
        if a_in.shape != (len(lb), n) or len(lb) != len(ub):
            raise ValueError(f"A_in shape {a_in.shape} does not match n={n} and bounds")
        blocks.append(a_in)
        lows.append(lb)
        highs.append(ub)
    if blocks:
        a = np.vstack(blocks)
        low = np.concatenate(lows)
        high = np.concatenate(highs)
    else:
        a = np.zeros((0, n))
        low = np.zeros(0)
        high = np.zeros(0)
    return a, low, high, eq_rows


def _ruiz_equilibrate(p, q, a, iters: int = _RUIZ_ITERS):
    """Iterated inf-norm scaling of [[P, A'], [A, 0]] plus cost normalization.

    Returns scaled (p, q, a) and the diagonals d (variables), e (rows)
    and cost factor c such that x = d * x_scaled and y = e * y_scaled / c
    recover the original problem's primal and dual variables.
    """
    n = p.shape[0]
    m = a.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    for _ in range(iters):
        col_p = np.max(np.abs(p), axis=0) if n else np.zeros(0)
        col_a = np.max(np.abs(a), axis=0) if m else np.zeros(n)
        norm_x = np.maximum(col_p, col_a)
        dx = 1.0 / np.sqrt(np.where(norm_x < 1e-12, 1.0, norm_x))
        norm_y = np.max(np.abs(a), axis=1) if m else np.zeros(0)
        dy = 1.0 / np.sqrt(np.where(norm_y < 1e-12, 1.0, norm_y))
        p = p * dx[None, :] * dx[:, None]
        q = q * dx
        if m:
            a = a * dx[None, :] * dy[:, None]
        d *= dx
        e *= dy
        col_p = np.max(np.abs(p), axis=0) if n else np.zeros(0)
        gamma = max(float(np.mean(col_p)) if n else 0.0, _max_abs(q))
        if gamma > 1e-12:
            ck = 1.0 / gamma
            p = p * ck
            q = q * ck
            c *= ck
    return p, q, a, d, e, c


def _kkt_solve(p_mat, q, a, rows, b_act, n):
    g_act = a[rows]
    k = len(rows)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = p_mat
    kkt[:n, n:] = g_act.T
    kkt[n:, :n] = g_act
    kkt[n:, n:] = -1e-12 * np.eye(k)
    rhs = np.concatenate([-q, b_act])
    try:
        sol = np.linalg.solve(kkt, rhs)
        # one step of iterative refinement
        sol += np.linalg.solve(kkt, rhs - kkt @ sol)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:n], sol[n:]


def _polish(p_mat, q, a, low, high, eq_rows, x, y):
    """Exact KKT solve on the active set guessed from an approximate iterate.

    The guess takes rows whose slack is nearly tight or whose multiplier
    is clearly nonzero (relative to the largest one).  Wrong-signed
    multipliers are pruned and the KKT re-solved, a few rounds, because
    mid-run iterates routinely overestimate the active set.  Returns
    None when no sign-consistent set emerges.
    """
    m = len(low)
    n = len(x)
    if not m:
        return _kkt_solve(p_mat, q, a, np.zeros(0, dtype=int), np.zeros(0), n)
    slack_tol = 1e-4
    y_tol = 1e-4 * max(1.0, _max_abs(y))
    ax = a @ x
    upper = ((high - ax <= slack_tol * np.maximum(1.0, np.abs(high))) | (y > y_tol))
    lower = ((ax - low <= slack_tol * np.maximum(1.0, np.abs(low))) | (y < -y_tol))
    upper &= np.isfinite(high)
    lower &= np.isfinite(low)
    eq = np.zeros(m, dtype=bool)
    eq[:eq_rows] = True
    both = (upper & lower) | eq
    upper &= ~both
    lower &= ~both
    for _ in range(4):
        rows = np.flatnonzero(both | upper | lower)
        b_act = np.where(both[rows] | upper[rows], high[rows], low[rows])
        x_new, nu = _kkt_solve(p_mat, q, a, rows, b_act, n)
        wrong = np.zeros(m, dtype=bool)
        for idx, row in enumerate(rows):
            if both[row]:
                continue
            if upper[row] and nu[idx] < -1e-7:
                wrong[row] = True
            elif lower[row] and nu[idx] > 1e-7:
                wrong[row] = True
        if not wrong.any():
            y_new = np.zeros(m)
            y_new[rows] = nu
            return x_new, y_new
        upper &= ~wrong
        lower &= ~wrong
    return None


def _residuals(p_mat, q, a, low, high, x, y):
    """Normalized primal/dual residuals of the original (unscaled) problem."""
    px = p_mat @ x
    if len(low):
        ax = a @ x
        aty = a.T @ y
        r_prim = _max_abs(np.maximum(ax - high, 0.0) + np.maximum(low - ax, 0.0))
        r_dual = _max_abs(px + q + aty)
        scale_p = max(_max_abs(ax), _max_abs(np.clip(ax, low, high)))
        scale_d = max(_max_abs(px), _max_abs(aty), _max_abs(q))
    else:
        r_prim = 0.0
        r_dual = _max_abs(px + q)
        scale_p = 0.0
        scale_d = max(_max_abs(px), _max_abs(q))
    return r_prim / max(1.0, scale_p), r_dual / max(1.0, scale_d)


def solve_qp(H, f, A_eq=None, b_eq=None, A_in=None, lb=None, ub=None, *,
             x0=None, y0=None, eps: float = 1e-6,
             max_iter: int = 4000, polish: bool = True,
             sigma: float = 1e-6, alpha: float = 1.6, rho: float = 0.1) -> QpSolution:
    """Minimize 1/2 x'Hx + f'x subject to A_eq x = b_eq and lb <= A_in x <= ub.

    H must be positive semidefinite (it is symmetrized internally).
    x0/y0 warm-start the splitting iteration; re-solving an unchanged
    problem from its own solution terminates almost immediately.
    Statuses: solved (normalized residuals within eps), infeasible,
    unbounded, max_iter (accuracy not reached; best iterate returned).
    """
    p_orig = np.asarray(H, dtype=float)
    q_orig = np.asarray(f, dtype=float).ravel()
    n = len(q_orig)
    if p_orig.shape != (n, n):
        raise ValueError(f"H shape {p_orig.shape} does not match f length {n}")
    if not (np.all(np.isfinite(p_orig)) and np.all(np.isfinite(q_orig))):
        raise ValueError("H and f must be finite")
    p_orig = 0.5 * (p_orig + p_orig.T)
    a_orig, low_orig, high_orig, eq_rows = _stack_constraints(n, A_eq, b_eq, A_in, lb, ub)
    m = len(low_orig)
    if np.any(low_orig > high_orig):
        return QpSolution(np.zeros(n), np.zeros(m), math.nan, "infeasible", 0,
                          math.inf, math.inf)

    p_mat, q, a, d_scale, e_scale, c_scale = _ruiz_equilibrate(
        p_orig.copy(), q_orig.copy(), a_orig.copy())
    low = e_scale * low_orig if m else low_orig
    high = e_scale * high_orig if m else high_orig

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / d_scale
    y = np.zeros(m) if y0 is None else (np.asarray(y0, dtype=float) * c_scale / e_scale
                                        if m else np.zeros(0))
    if len(x) != n or len(y) != m:
        raise ValueError("warm-start vectors have wrong length")
    z = np.clip(a @ x, low, high) if m else np.zeros(0)

    rho_vec = np.full(m, rho)
    rho_vec[:eq_rows] *= _RHO_EQ_SCALE
    rho_bar = rho

    def factor():
        mat = p_mat + sigma * np.eye(n)
        if m:
            mat = mat + (a.T * rho_vec) @ a
        return cho_factor(mat)

    chol = factor()
    status = "max_iter"
    iterations = max_iter
    x_prev = x.copy()
    y_prev = y.copy()

    for it in range(1, max_iter + 1):
        if m:
            rhs = sigma * x - q + a.T @ (rho_vec * z - y)
        else:
            rhs = sigma * x - q
        x_t = cho_solve(chol, rhs)
        z_t = a @ x_t if m else z
        x = alpha * x_t + (1.0 - alpha) * x
        if m:
            z_acc = alpha * z_t + (1.0 - alpha) * z
            z_new = np.clip(z_acc + y / rho_vec, low, high)
            y = y + rho_vec * (z_acc - z_new)
            z = z_new

        # full-accuracy residuals cost two matvecs; after the opening
        # stretch (where warm starts finish) check on a coarser cadence
        if it <= _RHO_UPDATE_EVERY or it % _RESID_CHECK_EVERY == 0:
            r_prim, r_dual = _residuals(p_orig, q_orig, a_orig, low_orig, high_orig,
                                        d_scale * x, e_scale * y / c_scale if m else y)
            if r_prim <= eps and r_dual <= eps:
                status = "solved"
                iterations = it
                break

        if m and it % _RHO_UPDATE_EVERY == 0:
            # try an exact active-set finish; the splitting iteration often
            # identifies the active set long before its residuals settle
            if polish:
                cand = _polish(p_orig, q_orig, a_orig, low_orig, high_orig,
                               eq_rows, d_scale * x, e_scale * y / c_scale)
                if cand is not None:
                    r_p_c, r_d_c = _residuals(p_orig, q_orig, a_orig, low_orig,
                                              high_orig, cand[0], cand[1])
                    if r_p_c <= eps and r_d_c <= eps:
                        obj = float(0.5 * cand[0] @ p_orig @ cand[0]
                                    + q_orig @ cand[0])
                        return QpSolution(cand[0], cand[1], obj, "solved", it,
                                          r_p_c, r_d_c)

            # infeasibility certificates from the one-step differences
            dy = y - y_prev
            dy_norm = _max_abs(dy)
            if dy_norm > _INFEAS_TOL:
                at_dy = _max_abs(a.T @ dy)
                gap = 0.0
                certifiable = True
                for i in range(m):
                    pos, neg = max(dy[i], 0.0), min(dy[i], 0.0)
                    if pos > 1e-12 * dy_norm and not np.isfinite(high[i]):
                        certifiable = False
                        break
                    if neg < -1e-12 * dy_norm and not np.isfinite(low[i]):
                        certifiable = False
                        break
                    gap += (high[i] * pos if np.isfinite(high[i]) else 0.0)
                    gap += (low[i] * neg if np.isfinite(low[i]) else 0.0)
                if certifiable and at_dy <= 1e-8 * dy_norm and gap <= -1e-8 * dy_norm:
                    return QpSolution(d_scale * x, e_scale * y / c_scale, math.nan,
                                      "infeasible", it, r_prim, r_dual)
            dx = x - x_prev
            dx_norm = _max_abs(dx)
            if dx_norm > _INFEAS_TOL:
                pdx = _max_abs(p_mat @ dx)
                qdx = float(q @ dx)
                adx = a @ dx
                in_cone = True
                for i in range(m):
                    if np.isfinite(high[i]) and adx[i] > 1e-8 * dx_norm:
                        in_cone = False
                        break
                    if np.isfinite(low[i]) and adx[i] < -1e-8 * dx_norm:
                        in_cone = False
                        break
                if in_cone and pdx <= 1e-8 * dx_norm and qdx <= -1e-8 * dx_norm:
                    return QpSolution(d_scale * x, e_scale * y / c_scale, math.nan,
                                      "unbounded", it, r_prim, r_dual)
            x_prev = x.copy()
            y_prev = y.copy()

            # rebalance the penalty when residuals drift apart
            if r_dual > 1e-18:
                new_rho = rho_bar * math.sqrt(r_prim / max(r_dual, 1e-18))
                new_rho = min(max(new_rho, _RHO_MIN), _RHO_MAX)
                if new_rho > 5.0 * rho_bar or new_rho < rho_bar / 5.0:
                    rho_bar = new_rho
                    rho_vec = np.full(m, rho_bar)
                    rho_vec[:eq_rows] *= _RHO_EQ_SCALE
                    chol = factor()

    x_out = d_scale * x
    y_out = e_scale * y / c_scale if m else y
    if polish and status in ("solved", "max_iter"):
        polished = _polish(p_orig, q_orig, a_orig, low_orig, high_orig, eq_rows,
                           x_out, y_out)
        if polished is not None:
            x_new, y_new = polished
            r_p_new, r_d_new = _residuals(p_orig, q_orig, a_orig, low_orig,
                                          high_orig, x_new, y_new)
            r_p_old, r_d_old = _residuals(p_orig, q_orig, a_orig, low_orig,
                                          high_orig, x_out, y_out)
            if max(r_p_new, r_d_new) <= max(r_p_old, r_d_old):
                x_out, y_out = x_new, y_new

    r_prim, r_dual = _residuals(p_orig, q_orig, a_orig, low_orig, high_orig,
                                x_out, y_out)
    status = "solved" if (r_prim <= eps and r_dual <= eps) else "max_iter"
    objective = float(0.5 * x_out @ p_orig @ x_out + q_orig @ x_out)
    return QpSolution(x_out, y_out, objective, status, iterations, r_prim, r_dual)
