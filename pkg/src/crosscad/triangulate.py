"""Polygon-with-holes triangulation by ear clipping with hole bridging.

Holes are joined to the outer ring through bridge diagonals (rightmost hole
vertex to a visible outer vertex), producing one simple cycle that reuses
the original vertex indices; bridge edges then appear in exactly two cap
triangles, which keeps extruded prisms watertight.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import TriangulationFailure

log = logging.getLogger(__name__)

_EPS = 1e-12


def polygon_area(pts: np.ndarray) -> float:
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def clean_ring(pts: np.ndarray, eps: float = _EPS) -> np.ndarray:
    """Drop duplicate and exactly-collinear vertices from a closed ring.

    Ear clipping silently discards such vertices from cap triangulations;
    removing them up front keeps caps and side walls built from identical
    rings, which extruded prisms need to stay watertight.
    """
    pts = np.asarray(pts, dtype=np.float64)
    while len(pts) >= 3:
        u = pts - np.roll(pts, 1, axis=0)
        v = np.roll(pts, -1, axis=0) - pts
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        drop = np.flatnonzero(np.abs(cross) <= eps)
        if len(drop) == 0:
            break
        # one at a time: neighbouring turns change once a vertex goes away
        pts = np.delete(pts, int(drop[0]), axis=0)
    return pts


def _point_in_triangle(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> bool:
    """True when p lies inside or on triangle abc, excluding its corners."""
    if (np.array_equal(p, a) or np.array_equal(p, b) or np.array_equal(p, c)):
        return False
    d1 = _cross(a, b, p)
    d2 = _cross(b, c, p)
    d3 = _cross(c, a, p)
    neg = (d1 < -_EPS) or (d2 < -_EPS) or (d3 < -_EPS)
    pos = (d1 > _EPS) or (d2 > _EPS) or (d3 > _EPS)
    return not (neg and pos)


def ring_self_intersects(ring: np.ndarray) -> bool:
    """True when any two non-adjacent edges of the ring properly cross."""
    n = len(ring)
    a = ring
    b = np.roll(ring, -1, axis=0)

    def orient(p, q, r):
        return ((q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1])
                - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0]))

    for i in range(n):
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if len(js) == 0:
            continue
        p, q = a[i][None, :], b[i][None, :]
        d1 = orient(p, q, a[js])
        d2 = orient(p, q, b[js])
        d3 = orient(a[js], b[js], np.broadcast_to(p, (len(js), 2)))
        d4 = orient(a[js], b[js], np.broadcast_to(q, (len(js), 2)))
        if np.any((d1 * d2 < -_EPS) & (d3 * d4 < -_EPS)):
            return True
    return False


def _bridge_hole(outer_idx: list[int], verts: np.ndarray, hole_idx: list[int]) -> list[int]:
    """Splice a hole cycle into the outer cycle via a visibility bridge."""
    hx = [verts[i][0] for i in hole_idx]
    m_pos = int(np.argmax(hx))
    m = hole_idx[m_pos]
    mp = verts[m]

    # closest intersection of the +x ray from m with outer edges
    best_t = np.inf
    best_edge = -1
    n = len(outer_idx)
    for k in range(n):
        a = verts[outer_idx[k]]
        b = verts[outer_idx[(k + 1) % n]]
        if (a[1] > mp[1]) == (b[1] > mp[1]):
            continue
        t = a[0] + (mp[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        if t >= mp[0] - _EPS and t < best_t:
            best_t = t
            best_edge = k
    if best_edge < 0:
        raise TriangulationFailure("hole is not enclosed by the outer ring")

    a = verts[outer_idx[best_edge]]
    b = verts[outer_idx[(best_edge + 1) % n]]
    cand = best_edge if a[0] > b[0] else (best_edge + 1) % n
    ip = np.array([best_t, mp[1]])

    # prefer the reflex outer vertex inside triangle (m, ip, cand) closest in angle
    pick = cand
    best_metric = None
    cp = verts[outer_idx[cand]]
    for k in range(n):
        q = verts[outer_idx[k]]
        if k == cand or q[0] < mp[0] - _EPS:
            continue
        if _point_in_triangle(q, mp, ip, cp):
            dx = q[0] - mp[0]
            dy = abs(q[1] - mp[1])
            metric = (np.arctan2(dy, dx), dx * dx + dy * dy)
            if best_metric is None or metric < best_metric:
                best_metric = metric
                pick = k
    rotated = hole_idx[m_pos:] + hole_idx[:m_pos]
    return (outer_idx[: pick + 1] + rotated + [m, outer_idx[pick]] + outer_idx[pick + 1:])


def _ear_clip(cycle: list[int], verts: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(cycle)
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        cur = verts[np.asarray(idx)]
        prv = np.roll(cur, 1, axis=0)
        nxt = np.roll(cur, -1, axis=0)
        e1 = cur - prv
        e2 = nxt - cur
        turn = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        clipped = False
        for k in np.flatnonzero(turn > _EPS):
            a, b, c = prv[k], cur[k], nxt[k]
            d1 = (b[0] - a[0]) * (cur[:, 1] - a[1]) - (b[1] - a[1]) * (cur[:, 0] - a[0])
            d2 = (c[0] - b[0]) * (cur[:, 1] - b[1]) - (c[1] - b[1]) * (cur[:, 0] - b[0])
            d3 = (a[0] - c[0]) * (cur[:, 1] - c[1]) - (a[1] - c[1]) * (cur[:, 0] - c[0])
            neg = (d1 < -_EPS) | (d2 < -_EPS) | (d3 < -_EPS)
            pos = (d1 > _EPS) | (d2 > _EPS) | (d3 > _EPS)
            inside = ~(neg & pos)
            inside[[(k - 1) % n, k, (k + 1) % n]] = False
            if inside.any():
                # duplicated bridge vertices coincide with a corner; they
                # share its coordinates and must not block the ear
                rem = cur[inside]
                on_corner = ((rem == a).all(axis=1) | (rem == b).all(axis=1)
                             | (rem == c).all(axis=1))
                if not on_corner.all():
                    continue
            tris.append((idx[(k - 1) % n], idx[k], idx[(k + 1) % n]))
            del idx[k]
            clipped = True
            break
        if not clipped:
            # tolerate collinear ears before giving up
            flat = np.flatnonzero(np.abs(turn) <= _EPS)
            if len(flat):
                del idx[int(flat[0])]
                clipped = True
        if not clipped:
            raise TriangulationFailure(
                f"no ear found with {len(idx)} vertices left (self-intersecting profile?)")
        guard += 1
        if guard > 10 * len(cycle) + 100:
            raise TriangulationFailure("ear clipping failed to terminate")
    if len(idx) == 3:
        a, b, c = verts[idx[0]], verts[idx[1]], verts[idx[2]]
        if abs(_cross(a, b, c)) > _EPS:
            tris.append((idx[0], idx[1], idx[2]))
    return tris


def triangulate_polygon(outer: np.ndarray, holes: list[np.ndarray] | None = None
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate a simple polygon with optional holes.

    Returns (vertices, triangles) where vertices stacks the outer ring then
    each hole ring in input order, and triangles index into that stack with
    counter-clockwise winding.
    """
    outer = np.asarray(outer, dtype=np.float64)
    if len(outer) < 3:
        raise TriangulationFailure("outer ring needs at least 3 vertices")
    holes = [np.asarray(h, dtype=np.float64) for h in (holes or [])]
    for ring in [outer] + holes:
        if ring_self_intersects(ring):
            raise TriangulationFailure("profile ring intersects itself")
    if polygon_area(outer) < 0:
        outer = outer[::-1]
    holes = [h if polygon_area(h) < 0 else h[::-1] for h in holes]

    verts = outer
    cycle = list(range(len(outer)))
    hole_cycles = []
    for h in holes:
        base = len(verts)
        verts = np.vstack([verts, h])
        hole_cycles.append(list(range(base, base + len(h))))

    # splice holes from rightmost to leftmost so later bridges see earlier ones
    order = sorted(range(len(hole_cycles)),
                   key=lambda i: -max(verts[j][0] for j in hole_cycles[i]))
    for i in order:
        cycle = _bridge_hole(cycle, verts, hole_cycles[i])

    tris = _ear_clip(cycle, verts)
    if not tris:
        raise TriangulationFailure("triangulation produced no triangles")
    return verts, np.asarray(tris, dtype=np.int64)
