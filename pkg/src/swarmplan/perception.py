"""Lidar scan processing: cluster returns and over-approximate them as discs.

The pipeline is segment -> split over-wide clusters -> fit a disc per
cluster.  Discs are deliberately conservative: every projected return
must end up inside its emitted circle, so downstream cost terms never
underestimate an obstacle.  When a cluster looks like the visible arc of
a round obstacle, the underlying disc is reconstructed (an enclosing
circle of the arc alone would sit in front of the true center and
under-report the radius); everything else falls back to the minimal
enclosing circle.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import PlannerConfig

_CONTAIN_EPS = 1.0 + 1e-12  # multiplicative slack for enclosing-circle membership
_DUPLICATE_TOL = 0.05       # fits this close in center and radius are one obstacle


class ObstacleCircle(NamedTuple):
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class RangeScan:
    """One sweep of a planar range sensor.

    Angles are ego-relative: beam i points along
    ego heading + angle_min + i * angle_increment in the world frame.
    Entries of `ranges` are positive hit distances or math.inf when the
    beam saw nothing within max_range.
    """

    angle_min: float
    angle_increment: float
    ranges: tuple[float, ...]
    max_range: float
    stamp: float
    ego_pose: tuple[float, float, float]  # x, y, heading

    def __post_init__(self):
        ranges = tuple(float(r) for r in self.ranges)
        if not ranges:
            raise ValueError("scan.ranges must not be empty")
        if not math.isfinite(self.max_range) or self.max_range <= 0.0:
            raise ValueError(f"scan.max_range must be positive finite, got {self.max_range}")
        for i, r in enumerate(ranges):
            if math.isinf(r) and r > 0:
                continue
            if not math.isfinite(r) or r <= 0.0:
                raise ValueError(f"scan.ranges[{i}] must be positive or inf, got {r}")
            if r > self.max_range * (1.0 + 1e-9):
                raise ValueError(f"scan.ranges[{i}]={r} exceeds max_range={self.max_range}")
        object.__setattr__(self, "ranges", ranges)
        x, y, heading = self.ego_pose
        object.__setattr__(self, "ego_pose", (float(x), float(y), float(heading)))

    def beam_angle(self, i: int) -> float:
        """World-frame direction of beam i."""
        return self.ego_pose[2] + self.angle_min + i * self.angle_increment


def project_return(rng: float, beam_angle: float, ego_position) -> tuple[float, float]:
    """Place a single range return into the world frame.

    The hit point is ego + range * (cos, sin) of the world-frame beam
    angle; this inverts the harness raycaster exactly on noise-free
    geometry.
    """
    rng = float(rng)
    if not math.isfinite(rng) or rng <= 0.0:
        raise ValueError(f"range must be positive finite, got {rng}")
    px, py = float(ego_position[0]), float(ego_position[1])
    return (rng * math.cos(beam_angle) + px, rng * math.sin(beam_angle) + py)


def segment_scan(scan: RangeScan) -> list[tuple[int, int]]:
    """Maximal runs of consecutive finite returns, as inclusive (start, end) index pairs."""
    clusters = []
    start = None
    for i, r in enumerate(scan.ranges):
        if math.isfinite(r):
            if start is None:
                start = i
        else:
            if start is not None:
                clusters.append((start, i - 1))
                start = None
    if start is not None:
        clusters.append((start, len(scan.ranges) - 1))
    return clusters


# ---------------------------------------------------------------------------
# minimal enclosing circle, incremental with a deterministic shuffle

def _circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        return None
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
          + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
          + (cx * cx + cy * cy) * (bx - ax)) / d
    r = max(math.hypot(ux - px, uy - py) for px, py in (a, b, c))
    return ((ux, uy), r)


def _diameter_circle(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    r = max(math.hypot(a[0] - cx, a[1] - cy), math.hypot(b[0] - cx, b[1] - cy))
    return ((cx, cy), r)


def _in_circle(circle, p) -> bool:
    (cx, cy), r = circle
    return math.hypot(p[0] - cx, p[1] - cy) <= r * _CONTAIN_EPS + 1e-15


def _circle_two_fixed(pts, a, b):
    # smallest circle through a and b covering pts
    circ = _diameter_circle(a, b)
    if all(_in_circle(circ, p) for p in pts):
        return circ
    best = None
    for c in pts:
        cand = _circumcircle(a, b, c)
        if cand is None:
            continue
        if all(_in_circle(cand, p) for p in pts):
            if best is None or cand[1] < best[1]:
                best = cand
    return best if best is not None else circ


def _circle_one_fixed(pts, a):
    circ = _diameter_circle(a, pts[0]) if pts else ((a[0], a[1]), 0.0)
    for i, p in enumerate(pts):
        if not _in_circle(circ, p):
            circ = _circle_two_fixed(pts[: i + 1], a, p)
    return circ


def min_enclosing_circle(points) -> tuple[tuple[float, float], float]:
    """Smallest circle containing all points.

    Incremental construction in expected linear time; the shuffle uses a
    fixed seed so repeated calls on the same input give identical output.
    """
    pts = [(float(p[0]), float(p[1])) for p in points]
    if not pts:
        raise ValueError("min_enclosing_circle needs at least one point")
    if len(pts) == 1:
        return (pts[0], 0.0)
    random.Random(0x2545F4).shuffle(pts)
    circ = _diameter_circle(pts[0], pts[1])
    for i, p in enumerate(pts[2:], start=2):
        if not _in_circle(circ, p):
            circ = _circle_one_fixed(pts[:i], p)
    return circ


# ---------------------------------------------------------------------------
# disc reconstruction from an arc of returns

def _fit_circle(pts: np.ndarray):
    """Algebraic least-squares circle through pts; None when degenerate."""
    if len(pts) < 3:
        return None
    x, y = pts[:, 0], pts[:, 1]
    a_mat = np.column_stack([2.0 * x, 2.0 * y, np.ones(len(pts))])
    rhs = x * x + y * y
    sol, _, rank, _ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    if rank < 3:
        return None
    cx, cy, c = sol
    r_sq = c + cx * cx + cy * cy
    if not np.isfinite(r_sq) or r_sq <= 0.0:
        return None
    return ((float(cx), float(cy)), float(math.sqrt(r_sq)))


def _split_wide(indices: list[int], ranges: list[float], pts: np.ndarray,
                increment: float, max_extent: float, max_span: float) -> list[list[int]]:
    """Split an index run that is too wide to circle as one obstacle.

    Angular width alone is not enough: a distant wall section can stay
    under any angle cap while spanning many meters, and its enclosing
    circle then bulges far into free space.  So a run is split when its
    angular extent exceeds max_extent OR its bounding-box diagonal
    exceeds max_span.  Natural split points are interior local range
    minima (range profile corners); when the profile is monotone the run
    is bisected instead.  Chunks are re-checked recursively.
    """
    if len(indices) <= 2:
        return [indices]
    extent = (len(indices) - 1) * abs(increment)
    box = pts[indices]
    span = math.hypot(float(np.ptp(box[:, 0])), float(np.ptp(box[:, 1])))
    if extent <= max_extent and span <= max_span:
        return [indices]
    r = [ranges[i] for i in indices]
    splits = []
    for k in range(1, len(indices) - 1):
        if r[k] <= r[k - 1] and r[k] <= r[k + 1] and (r[k] < r[k - 1] or r[k] < r[k + 1]):
            if not splits or k - splits[-1] >= 2:
                splits.append(k)
    if not splits:
        splits = [len(indices) // 2]
    chunks = []
    prev = 0
    for k in splits:
        chunks.append(indices[prev: k + 1])  # boundary point shared with next chunk
        prev = k
    chunks.append(indices[prev:])
    out = []
    for chunk in chunks:
        if len(chunk) >= 2 and len(chunk) < len(indices):
            out.extend(_split_wide(chunk, ranges, pts, increment, max_extent, max_span))
        else:
            out.append(chunk)
    return out


def _reconstruct_disc(pts: np.ndarray, ego, max_range: float, fit_tol: float):
    """Try to recover the occluding disc a cluster of returns came from.

    Accepted only when the fit is geometrically plausible: small radial
    misfit, radius no larger than the sensor reach, and the center
    behind the observed arc as seen from the ego.  Returns None when the
    cluster does not look like a disc arc.
    """
    fit = _fit_circle(pts)
    if fit is None:
        return None
    (cx, cy), r_fit = fit
    if r_fit > max_range:
        return None
    dists = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    if np.max(np.abs(dists - r_fit)) > fit_tol:
        return None
    centroid = pts.mean(axis=0)
    ego_xy = np.asarray(ego, dtype=float)
    ego_to_center = math.hypot(cx - ego_xy[0], cy - ego_xy[1])
    if ego_to_center <= np.linalg.norm(centroid - ego_xy):
        return None
    # a near-straight run (wall) fits a huge circle whose disc can swallow
    # the sensor itself; seeing a surface from inside it is impossible
    if ego_to_center <= r_fit:
        return None
    radius = max(r_fit, float(np.max(dists)))
    return ((cx, cy), radius)


def _enclose(a, b):
    """Smallest circle containing both circles."""
    (x1, y1), r1 = a
    (x2, y2), r2 = b
    d = math.hypot(x2 - x1, y2 - y1)
    if d + r2 <= r1:
        return a
    if d + r1 <= r2:
        return b
    r = 0.5 * (d + r1 + r2)
    t = (r - r1) / d
    return ((x1 + t * (x2 - x1), y1 + t * (y2 - y1)), r)


def scan_to_obstacles(scan: RangeScan, cfg: PlannerConfig) -> list[ObstacleCircle]:
    """Convert one scan into conservative circular obstacles.

    Every projected return of a cluster lies inside a circle emitted
    for it (within 1e-9).  Single returns become discs of radius
    max(point_radius_floor, obstacle_margin); larger clusters get either
    a reconstructed disc or their minimal enclosing circle, plus the
    configured margin.

    Contiguity in bearing does not imply one surface: an occlusion
    boundary joins foreground and background returns with a range step,
    and fitting across it yields a circle bridging free space.  Runs
    are therefore cut wherever adjacent ranges differ by more than
    split_range_jump before any width splitting.  Near-identical fits
    (an arc wide enough to be chunked refits the same disc from each
    chunk) are merged into their common enclosing circle.
    """
    ego_x, ego_y, _ = scan.ego_pose
    margin = cfg.obstacle_margin
    circles: list[tuple[tuple[float, float], float]] = []
    all_pts = np.full((len(scan.ranges), 2), np.nan)
    finite = [i for i, r in enumerate(scan.ranges) if math.isfinite(r)]
    for i in finite:
        all_pts[i] = project_return(scan.ranges[i], scan.beam_angle(i), (ego_x, ego_y))
    for start, end in segment_scan(scan):
        runs = [[start]]
        for i in range(start + 1, end + 1):
            if abs(scan.ranges[i] - scan.ranges[i - 1]) > cfg.split_range_jump:
                runs.append([i])  # depth step: different surface, no shared point
            else:
                runs[-1].append(i)
        chunks = []
        for run in runs:
            chunks.extend(_split_wide(run, scan.ranges, all_pts,
                                      scan.angle_increment, cfg.wall_split_angle,
                                      cfg.max_chunk_span))
        for chunk in chunks:
            pts = all_pts[chunk]
            if len(pts) == 1:
                center = (float(pts[0, 0]), float(pts[0, 1]))
                circles.append((center, max(cfg.point_radius_floor, margin)))
                continue
            disc = None
            if len(pts) >= 3:
                disc = _reconstruct_disc(pts, (ego_x, ego_y), scan.max_range,
                                         cfg.circle_fit_tolerance)
            if disc is not None and len(chunk) < len(finite):
                # a solid disc cannot contain returns from other surfaces;
                # near-straight wall runs fit huge circles that do
                (cx, cy), radius = disc
                others = np.isfinite(all_pts[:, 0])
                others[chunk] = False
                d2 = ((all_pts[others, 0] - cx) ** 2
                      + (all_pts[others, 1] - cy) ** 2)
                slack = radius - 3.0 * cfg.circle_fit_tolerance
                if slack > 0.0 and np.any(d2 < slack * slack):
                    disc = None
            if disc is None:
                disc = min_enclosing_circle(pts)
            (cx, cy), radius = disc
            circles.append(((float(cx), float(cy)), float(radius) + margin))
    merged: list[tuple[tuple[float, float], float]] = []
    for circ in circles:
        twin = None
        for k, kept in enumerate(merged):
            if (math.hypot(circ[0][0] - kept[0][0], circ[0][1] - kept[0][1])
                    <= _DUPLICATE_TOL and abs(circ[1] - kept[1]) <= _DUPLICATE_TOL):
                twin = k
                break
        if twin is None:
            merged.append(circ)
        else:
            merged[twin] = _enclose(merged[twin], circ)
    return [ObstacleCircle((float(c[0]), float(c[1])), float(r)) for c, r in merged]
