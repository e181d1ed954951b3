"""Planar polygon primitives used for tract geometry.

Coordinates are (lon, lat) degree pairs treated as plain planar
coordinates. Containment uses even-odd ray casting with points on the
boundary counting as inside; contiguity uses a shared-boundary-point
test (a vertex of one polygon lying on the boundary of the other),
which covers shared vertices, shared edge segments, and T-junctions.
"""

from __future__ import annotations

import numpy as np

# Absolute slack for on-boundary tests, in coordinate units. Degree
# inputs make this ~0.1 mm at the equator.
BOUNDARY_EPS = 1e-9

_CHUNK = 1 << 18  # point-in-polygon work is chunked to bound memory


def ring_signed_area(ring: np.ndarray) -> float:
    """Shoelace signed area of a closed ring (first vertex == last)."""
    x0, y0 = ring[:-1, 0], ring[:-1, 1]
    x1, y1 = ring[1:, 0], ring[1:, 1]
    return float(np.sum(x0 * y1 - x1 * y0) / 2.0)


def ring_centroid(ring: np.ndarray) -> tuple[float, float]:
    """Area-weighted centroid of a closed ring."""
    x0, y0 = ring[:-1, 0], ring[:-1, 1]
    x1, y1 = ring[1:, 0], ring[1:, 1]
    cross = x0 * y1 - x1 * y0
    a = np.sum(cross) / 2.0
    if a == 0.0:
        raise ValueError("degenerate ring with zero area")
    cx = float(np.sum((x0 + x1) * cross) / (6.0 * a))
    cy = float(np.sum((y0 + y1) * cross) / (6.0 * a))
    return cx, cy


def polygon_centroid(rings: list[np.ndarray], holes: list[bool]) -> tuple[float, float]:
    """Centroid of a polygon given as exterior rings plus hole rings.

    Holes subtract area regardless of vertex orientation in the input.
    """
    num_x = num_y = denom = 0.0
    for ring, is_hole in zip(rings, holes):
        a = abs(ring_signed_area(ring))
        if a == 0.0:
            continue
        cx, cy = ring_centroid(ring)
        sign = -1.0 if is_hole else 1.0
        num_x += sign * a * cx
        num_y += sign * a * cy
        denom += sign * a
    if denom <= 0.0:
        raise ValueError("polygon has no positive area")
    return num_x / denom, num_y / denom


def polygon_area(rings: list[np.ndarray], holes: list[bool]) -> float:
    total = 0.0
    for ring, is_hole in zip(rings, holes):
        a = abs(ring_signed_area(ring))
        total += -a if is_hole else a
    return total


def rings_bbox(rings: list[np.ndarray]) -> tuple[float, float, float, float]:
    pts = np.vstack(rings)
    return (
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def _points_on_ring_boundary(px: np.ndarray, py: np.ndarray, ring: np.ndarray,
                             eps: float) -> np.ndarray:
    """For each point, whether it lies within eps of any ring segment."""
    ax, ay = ring[:-1, 0], ring[:-1, 1]
    bx, by = ring[1:, 0], ring[1:, 1]
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    on = np.zeros(px.shape[0], dtype=bool)
    step = max(1, _CHUNK // max(1, ax.shape[0]))
    for lo in range(0, px.shape[0], step):
        hi = min(px.shape[0], lo + step)
        qx = px[lo:hi, None] - ax[None, :]
        qy = py[lo:hi, None] - ay[None, :]
        cross = np.abs(qx * dy[None, :] - qy * dx[None, :])
        dot = qx * dx[None, :] + qy * dy[None, :]
        # distance from segment line <= eps and projection inside the segment
        near_line = cross * cross <= (eps * eps) * np.maximum(seg2[None, :], eps * eps)
        inside_span = (dot >= -eps) & (dot <= seg2[None, :] + eps)
        on[lo:hi] = np.any(near_line & inside_span, axis=1)
    return on


def points_in_polygon(points: np.ndarray, rings: list[np.ndarray],
                      eps: float = BOUNDARY_EPS) -> np.ndarray:
    """Even-odd containment for an (n, 2) point array; boundary counts as inside."""
    px = np.ascontiguousarray(points[:, 0], dtype=np.float64)
    py = np.ascontiguousarray(points[:, 1], dtype=np.float64)
    n = px.shape[0]
    crossings = np.zeros(n, dtype=np.int64)
    boundary = np.zeros(n, dtype=bool)
    for ring in rings:
        ax, ay = ring[:-1, 0], ring[:-1, 1]
        bx, by = ring[1:, 0], ring[1:, 1]
        step = max(1, _CHUNK // max(1, ax.shape[0]))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            pyc = py[lo:hi, None]
            pxc = px[lo:hi, None]
            straddles = (ay[None, :] > pyc) != (by[None, :] > pyc)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = ax[None, :] + (pyc - ay[None, :]) * (bx - ax)[None, :] / (by - ay)[None, :]
            hits = straddles & (pxc < x_cross)
            crossings[lo:hi] += np.sum(hits, axis=1)
        boundary |= _points_on_ring_boundary(px, py, ring, eps)
    return boundary | (crossings % 2 == 1)


def point_in_polygon(lon: float, lat: float, rings: list[np.ndarray],
                     eps: float = BOUNDARY_EPS) -> bool:
    return bool(points_in_polygon(np.array([[lon, lat]]), rings, eps)[0])


def polygons_touch(rings_a: list[np.ndarray], rings_b: list[np.ndarray],
                   eps: float = BOUNDARY_EPS) -> bool:
    """Whether two polygons share at least one boundary point.

    Tests every vertex of one polygon against the boundary segments of
    the other, both ways. For non-crossing tessellation polygons any
    shared point implies such a vertex incidence.
    """
    for src, dst in ((rings_a, rings_b), (rings_b, rings_a)):
        verts = np.vstack([r[:-1] for r in src])
        for ring in dst:
            if np.any(_points_on_ring_boundary(verts[:, 0], verts[:, 1], ring, eps)):
                return True
    return False


def bboxes_overlap(a: tuple[float, float, float, float],
                   b: tuple[float, float, float, float],
                   eps: float = BOUNDARY_EPS) -> bool:
    return not (a[2] < b[0] - eps or b[2] < a[0] - eps
                or a[3] < b[1] - eps or b[3] < a[1] - eps)
