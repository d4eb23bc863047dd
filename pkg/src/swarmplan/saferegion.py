"""Convex safe regions from predicted peer footprints.

For each peer a single half-plane is kept: the one whose normal points
from the ego toward the peer center and which supports the peer's
footprint, i.e. the whole footprint lies on the far side.  Intersecting
those planes with the workspace box gives a convex region the ego
center may occupy; eroding every offset by the ego's own bounding
radius accounts for the ego body.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .core import SizeSpec
from .prediction import FootprintRegion


class EgoPenetration(Exception):
    """Ego anchor lies inside (or on) a peer footprint; no supporting plane exists."""


class HalfPlane(NamedTuple):
    """Set {p : normal . p <= offset} with a unit normal."""

    normal: tuple[float, float]
    offset: float


@dataclass(frozen=True)
class SafePolyhedron:
    """Intersection of half-planes valid at one grid time.

    feasible_at_ego records whether the anchor point used for
    construction satisfied every emitted plane; it is False when a peer
    footprint already overlapped the anchor (its plane then cuts the
    anchor off by construction).
    """

    stamp: float
    halfplanes: tuple[HalfPlane, ...]
    feasible_at_ego: bool = True


def supporting_halfplane(ego_point, region: FootprintRegion) -> HalfPlane:
    """Half-plane containing ego_point's side and touching the footprint.

    The normal points from the ego toward the region center; the offset
    is the support value of the footprint along that normal, so
    min over the footprint of normal . p equals the offset exactly.
    """
    ex, ey = float(ego_point[0]), float(ego_point[1])
    if region.contains((ex, ey)):
        raise EgoPenetration(
            f"ego point ({ex:.3f}, {ey:.3f}) is inside a peer footprint at {region.center}")
    cx, cy = region.center
    dx, dy = cx - ex, cy - ey
    dist = math.hypot(dx, dy)
    if dist < 1e-12:
        raise EgoPenetration("ego point coincides with a peer footprint center")
    nx, ny = dx / dist, dy / dist
    center_proj = nx * cx + ny * cy
    if region.kind == "circle":
        offset = center_proj - region.size
    else:
        # support of an axis-aligned square along -normal is the L1 norm of the normal
        offset = center_proj - region.size * (abs(nx) + abs(ny))
    return HalfPlane((nx, ny), offset)


def workspace_halfplanes(bounds) -> list[HalfPlane]:
    """Four planes of the axis-aligned workspace box (xmin, ymin, xmax, ymax)."""
    xmin, ymin, xmax, ymax = (float(b) for b in bounds)
    if xmin >= xmax or ymin >= ymax:
        raise ValueError(f"degenerate workspace bounds {bounds}")
    return [
        HalfPlane((1.0, 0.0), xmax),
        HalfPlane((-1.0, 0.0), -xmin),
        HalfPlane((0.0, 1.0), ymax),
        HalfPlane((0.0, -1.0), -ymin),
    ]


def _intersects_box(region: FootprintRegion, bounds) -> bool:
    xmin, ymin, xmax, ymax = bounds
    cx, cy = region.center
    if region.kind == "square":
        h = region.size
        return cx + h >= xmin and cx - h <= xmax and cy + h >= ymin and cy - h <= ymax
    qx = min(max(cx, xmin), xmax)
    qy = min(max(cy, ymin), ymax)
    return math.hypot(cx - qx, cy - qy) <= region.size


def _exclusion_halfplane(ego_point, region: FootprintRegion) -> HalfPlane:
    """Plane that excludes the footprint even when the ego anchor is inside it.

    Same tangent construction as supporting_halfplane but anchored at
    the mirror image of the ego through the footprint center, so the
    plane still cuts the footprint off on the ego's nearest side.  The
    anchor itself ends up on the infeasible side; the QP then steers out
    (or fails into the stop fallback) instead of planning through the
    peer unconstrained.
    """
    ex, ey = float(ego_point[0]), float(ego_point[1])
    cx, cy = region.center
    dx, dy = ex - cx, ey - cy
    dist = math.hypot(dx, dy)
    nx, ny = (dx / dist, dy / dist) if dist >= 1e-12 else (1.0, 0.0)
    center_proj = nx * cx + ny * cy
    if region.kind == "circle":
        offset = center_proj - region.size
    else:
        offset = center_proj - region.size * (abs(nx) + abs(ny))
    return HalfPlane((nx, ny), offset)


def safe_polyhedron(ego_point, regions, bounds, stamp: float = 0.0) -> SafePolyhedron:
    """Workspace box cut by one supporting plane per relevant peer footprint.

    Footprints entirely outside the workspace are ignored (a moving
    volume of interest).  A footprint already containing the ego anchor
    cannot be separated from it: it still contributes a plane that
    excludes the footprint, but the anchor lands on the wrong side, so
    the result is flagged infeasible rather than raising and planning
    continues on honest constraints.
    """
    planes = workspace_halfplanes(bounds)
    feasible = True
    for region in regions:
        if not _intersects_box(region, bounds):
            continue
        try:
            planes.append(supporting_halfplane(ego_point, region))
        except EgoPenetration:
            planes.append(_exclusion_halfplane(ego_point, region))
            feasible = False
    ex, ey = float(ego_point[0]), float(ego_point[1])
    if feasible:
        for (nx, ny), offset in planes:
            if nx * ex + ny * ey > offset + 1e-9:
                feasible = False
                break
    return SafePolyhedron(float(stamp), tuple(planes), feasible)


def shrink_by_ego(poly: SafePolyhedron, ego_spec: SizeSpec) -> SafePolyhedron:
    """Erode every plane by the ego's heading-free bounding radius.

    A center satisfying the shrunk planes keeps the whole ego body
    inside the original region.
    """
    r = ego_spec.bounding_radius()
    planes = tuple(HalfPlane(hp.normal, hp.offset - r) for hp in poly.halfplanes)
    return SafePolyhedron(poly.stamp, planes, poly.feasible_at_ego)


def contains(poly: SafePolyhedron, point, tol: float = 1e-9) -> bool:
    """True when point satisfies every half-plane within tol."""
    px, py = float(point[0]), float(point[1])
    return all(nx * px + ny * py <= offset + tol for (nx, ny), offset in poly.halfplanes)
