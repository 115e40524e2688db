"""Oriented box types and exact BEV / 3D intersection-over-union.

Boxes are gravity-aligned: the only rotation is the yaw angle about the
vertical axis. `l` is the extent along the heading direction, `w` the
perpendicular extent, and `cz` is the geometric center of the box (the
bottom face sits at cz - h/2). Yaw is stored unwrapped; every predicate
here is invariant (to floating-point accuracy) under yaw -> yaw + 2*pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Vertices closer than this are merged after clipping; intersection areas
# below AREA_EPS count as empty. Keeps touching boxes stable.
VERTEX_MERGE_EPS = 1e-9
AREA_EPS = 1e-12


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (cx, cy, cz), size (h, w, l), heading yaw."""

    cx: float
    cy: float
    cz: float
    h: float
    w: float
    l: float
    yaw: float

    def __post_init__(self):
        if not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive, got h={self.h} w={self.w} l={self.l}")

    def as_array(self) -> np.ndarray:
        """Coordinates in the canonical order (cx, cy, cz, h, w, l, yaw)."""
        return np.array([self.cx, self.cy, self.cz, self.h, self.w, self.l, self.yaw], dtype=float)

    @staticmethod
    def from_array(a) -> "Box3D":
        cx, cy, cz, h, w, l, yaw = (float(v) for v in a)
        return Box3D(cx, cy, cz, h, w, l, yaw)

    @property
    def bottom(self) -> float:
        return self.cz - self.h / 2.0

    @property
    def top(self) -> float:
        return self.cz + self.h / 2.0


@dataclass(frozen=True)
class BoxBEV:
    """Bird's-eye-view box: center (cx, cy), size (w, l), heading yaw."""

    cx: float
    cy: float
    w: float
    l: float
    yaw: float

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} l={self.l}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.l, self.yaw], dtype=float)

    @staticmethod
    def from_array(a) -> "BoxBEV":
        cx, cy, w, l, yaw = (float(v) for v in a)
        return BoxBEV(cx, cy, w, l, yaw)


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon with counter-clockwise vertices, shape (N, 2)."""

    vertices: np.ndarray

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


def to_bev(box: Box3D) -> BoxBEV:
    """Project a 3D box to its BEV version by dropping cz and h."""
    return BoxBEV(box.cx, box.cy, box.w, box.l, box.yaw)


def bev_corners(box: BoxBEV) -> ConvexPolygon:
    """The four corners, counter-clockwise: center + R(yaw) @ (+-l/2, +-w/2)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.l / 2.0, box.w / 2.0
    local = np.array([(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)])
    rot = np.array([(c, -s), (s, c)])
    return ConvexPolygon(local @ rot.T + np.array([box.cx, box.cy]))


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area (absolute value); 0 for fewer than 3 vertices."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def _merge_close_vertices(poly: list) -> list:
    out = []
    for p in poly:
        if out and abs(p[0] - out[-1][0]) < VERTEX_MERGE_EPS and abs(p[1] - out[-1][1]) < VERTEX_MERGE_EPS:
            continue
        out.append(p)
    while len(out) >= 2 and abs(out[0][0] - out[-1][0]) < VERTEX_MERGE_EPS and abs(out[0][1] - out[-1][1]) < VERTEX_MERGE_EPS:
        out.pop()
    return out


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman intersection of two convex CCW polygons.

    Points exactly on a clip edge count as inside, so clipping a polygon
    against itself returns its own vertices.
    """
    output = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not output:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        px, py = inp[-1]
        # inside = point is on or to the left of the directed edge a->b
        p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
        for qx, qy in inp:
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if q_in != p_in:
                # segment p->q crosses the edge line; compute the crossing
                dx, dy = qx - px, qy - py
                den = ex * dy - ey * dx
                if den != 0.0:
                    t = (ex * (ay - py) - ey * (ax - px)) / den
                    output.append((px + t * dx, py + t * dy))
            if q_in:
                output.append((qx, qy))
            px, py, p_in = qx, qy, q_in
    output = _merge_close_vertices(output)
    if len(output) < 3:
        return np.empty((0, 2))
    return np.array(output)


def _intersection_area_bev(a: BoxBEV, b: BoxBEV) -> float:
    inter = clip_convex(bev_corners(a).vertices, bev_corners(b).vertices)
    area = polygon_area(inter) if len(inter) else 0.0
    return 0.0 if area < AREA_EPS else area


def _ordered(a, b):
    # Canonical argument order makes iou(a, b) == iou(b, a) bit-exact.
    return (a, b) if tuple(a.as_array()) <= tuple(b.as_array()) else (b, a)


def bev_iou(a: BoxBEV, b: BoxBEV) -> float:
    """Oriented BEV intersection-over-union, in [0, 1]."""
    a, b = _ordered(a, b)
    inter = _intersection_area_bev(a, b)
    if inter == 0.0:
        return 0.0
    area_a = polygon_area(bev_corners(a).vertices)
    area_b = polygon_area(bev_corners(b).vertices)
    return inter / (area_a + area_b - inter)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: BEV intersection area times vertical overlap, over the union volume."""
    a, b = _ordered(a, b)
    overlap = min(a.top, b.top) - max(a.bottom, b.bottom)
    if overlap <= 0.0:
        return 0.0
    inter_bev = _intersection_area_bev(to_bev(a), to_bev(b))
    if inter_bev == 0.0:
        return 0.0
    inter_vol = inter_bev * overlap
    vol_a = polygon_area(bev_corners(to_bev(a)).vertices) * (a.top - a.bottom)
    vol_b = polygon_area(bev_corners(to_bev(b)).vertices) * (b.top - b.bottom)
    return inter_vol / (vol_a + vol_b - inter_vol)
