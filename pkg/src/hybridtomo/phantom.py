"""Rectangular test phantom and its singular-support description.

The phantom is a constant background perturbed inside an axis-aligned
rectangle.  Its non-smooth set is the rectangle boundary: along the edges
the singular directions are the edge normals, and at the corners they
fill the quadrant between the two adjacent edge normals (plus the
opposite directions)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class RectPhantom:
    center: tuple = (0.3, 0.3)
    half_widths: tuple = (0.12, 0.08)
    amplitude: float = 0.1
    background: float = 1.0

    def __post_init__(self):
        cx, cy = self.center
        a, b = self.half_widths
        if a <= 0 or b <= 0:
            raise PhantomError("half widths must be positive")
        if self.amplitude == 0:
            raise PhantomError("amplitude must be nonzero")
        corner_r = max(np.hypot(cx + sx * a, cy + sy * b)
                       for sx in (-1, 1) for sy in (-1, 1))
        if corner_r >= 1.0:
            raise PhantomError("rectangle must lie strictly inside the unit disc")

    def corners(self):
        cx, cy = self.center
        a, b = self.half_widths
        return np.array([[cx - a, cy - b], [cx + a, cy - b],
                         [cx + a, cy + b], [cx - a, cy + b]])

    def contains(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cx, cy = self.center
        a, b = self.half_widths
        return (np.abs(pts[:, 0] - cx) <= a) & (np.abs(pts[:, 1] - cy) <= b)


def evaluate_phantom(ph, pts):
    """background + amplitude inside the rectangle; points exactly on the
    edge take the inside value."""
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    inside = ph.contains(pts)
    vals = np.where(inside, ph.background + ph.amplitude, ph.background)
    return float(vals[0]) if single else vals


@dataclass
class WavefrontDescription:
    """Edge segments with their singular directions (unit normals, both
    signs) and corner points with angular sectors of singular directions
    (each sector implicitly carries the opposite sector as well)."""

    edge_segments: list          # dicts: start, end, normal
    corner_points: list          # dicts: point, sector (start, end) radians


def wavefront(ph):
    """Singular support of the rectangle phantom.

    Only axis-aligned rectangles are supported; the edge normals are then
    +-e1 on the vertical edges and +-e2 on the horizontal ones."""
    if not isinstance(ph, RectPhantom):
        raise PhantomError("wavefront description requires an axis-aligned "
                           "rectangle phantom")
    c = ph.corners()
    edges = []
    normals = [np.array([0.0, -1.0]), np.array([1.0, 0.0]),
               np.array([0.0, 1.0]), np.array([-1.0, 0.0])]
    for k in range(4):
        edges.append({"start": c[k], "end": c[(k + 1) % 4],
                      "normal": normals[k]})
    corners = []
    # outward sector between the two adjacent edge normals
    sector_starts = [np.pi, -np.pi / 2, 0.0, np.pi / 2]
    for k in range(4):
        start = sector_starts[k]
        corners.append({"point": c[k],
                        "sector": (start, start + np.pi / 2),
                        "includes_opposite": True})
    return WavefrontDescription(edges, corners)


def rectangle_indicator(ph):
    """sigma(x) callable for forward solves: evaluated pointwise at
    quadrature nodes, no mesh fitting."""

    def sigma(pts):
        return evaluate_phantom(ph, pts)

    return sigma
