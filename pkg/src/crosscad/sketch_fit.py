"""Fit parametric sketch primitives (lines, arcs, circles) to 2D loops.

The fitter replaces a learned parameterization head with classic geometry:
whole-loop circle test, corner splitting on turning angles, then greedy
line/arc growth with boundary refinement inside each corner-free stretch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import OpenChain, UnfittablePrimitive
from .slicer import Loop2D

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# primitive types


@dataclass(frozen=True)
class Line:
    start: tuple[float, float]
    end: tuple[float, float]
    kind: str = field(default="line", init=False)

    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))


@dataclass(frozen=True)
class Arc:
    """Circular arc through three points (start -> mid -> end)."""

    start: tuple[float, float]
    mid: tuple[float, float]
    end: tuple[float, float]
    kind: str = field(default="arc", init=False)

    def circle(self) -> tuple[np.ndarray, float]:
        return circle_from_three_points(self.start, self.mid, self.end)

    def radius(self) -> float:
        return self.circle()[1]

    def center(self) -> np.ndarray:
        return self.circle()[0]


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float
    kind: str = field(default="circle", init=False)


Primitive = Line | Arc | Circle


@dataclass
class FitConfig:
    """Tolerances for primitive fitting (unit-box units / degrees)."""

    corner_angle_deg: float = 25.0
    line_tol: float = 0.005
    arc_tol: float = 0.005
    circle_tol: float = 0.005
    smooth: bool = True
    # sparse loops are real polygons, not noisy traces; never smooth them
    smooth_min_pts: int = 24
    refine_window: int = 6


@dataclass
class FitReport:
    max_residual: float = 0.0
    residuals: list[float] = field(default_factory=list)
    corners: list[int] = field(default_factory=list)
    fallback: bool = False
    smoothed: bool = False


# ---------------------------------------------------------------------------
# circle helpers


def circle_from_three_points(a, b, c) -> tuple[np.ndarray, float]:
    """Circumcircle of three points; UnfittablePrimitive when collinear."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        raise UnfittablePrimitive("three collinear points do not define a circle")
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / d
    center = np.array([ux, uy])
    return center, float(np.hypot(ax - ux, ay - uy))


def fit_circle(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares circle: algebraic (Kasa) fit + one geometric refinement.

    Solves ``x*B0 + y*B1 + B2 = x^2 + y^2`` in least squares, then takes a
    single Gauss-Newton step on the geometric residual ``|p - c| - r``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise UnfittablePrimitive("circle fit needs at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r2 = sol[2] + cx * cx + cy * cy
    if r2 <= 0.0:
        raise UnfittablePrimitive("degenerate algebraic circle fit")
    c = np.array([cx, cy])
    r = float(np.sqrt(r2))

    # one geometric refinement step
    d = pts - c
    dist = np.linalg.norm(d, axis=1)
    if np.any(dist < 1e-12):
        return c, r
    res = dist - r
    J = np.column_stack([-d[:, 0] / dist, -d[:, 1] / dist, -np.ones_like(dist)])
    step, *_ = np.linalg.lstsq(J, -res, rcond=None)
    c = c + step[:2]
    r = r + float(step[2])
    if r <= 0.0:
        raise UnfittablePrimitive("circle refinement collapsed")
    return c, float(r)


def arc_geometry(arc: Arc) -> tuple[np.ndarray, float, float, float]:
    """(center, radius, start angle, signed sweep) passing through arc.mid."""
    c, r = arc.circle()
    th_s = float(np.arctan2(arc.start[1] - c[1], arc.start[0] - c[0]))
    th_m = float(np.arctan2(arc.mid[1] - c[1], arc.mid[0] - c[0]))
    th_e = float(np.arctan2(arc.end[1] - c[1], arc.end[0] - c[0]))
    ccw = (th_e - th_s) % (2.0 * np.pi)
    via = (th_m - th_s) % (2.0 * np.pi)
    sweep = ccw if via <= ccw else ccw - 2.0 * np.pi
    if sweep == 0.0:
        sweep = 2.0 * np.pi
    return c, r, th_s, sweep


def tessellate_arc(arc: Arc, n: int, include_end: bool = True) -> np.ndarray:
    """``n`` segments along the arc (n+1 points, or n without the end)."""
    c, r, th0, sweep = arc_geometry(arc)
    count = n + 1 if include_end else n
    t = np.linspace(0.0, sweep, n + 1)[:count]
    pts = np.column_stack([c[0] + r * np.cos(th0 + t), c[1] + r * np.sin(th0 + t)])
    pts[0] = arc.start
    if include_end:
        pts[-1] = arc.end
    return pts


def tessellate_circle(circle: Circle, n: int) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([circle.center[0] + circle.radius * np.cos(t), circle.center[1] + circle.radius * np.sin(t)])


def anchor_point(prim: Primitive, anchor: str) -> np.ndarray:
    """Geometric position of an anchor on a primitive."""
    if isinstance(prim, Line):
        if anchor == "start":
            return np.asarray(prim.start, dtype=np.float64)
        if anchor == "end":
            return np.asarray(prim.end, dtype=np.float64)
        if anchor == "mid":
            return (np.asarray(prim.start) + np.asarray(prim.end)) / 2.0
    elif isinstance(prim, Arc):
        if anchor == "start":
            return np.asarray(prim.start, dtype=np.float64)
        if anchor == "end":
            return np.asarray(prim.end, dtype=np.float64)
        if anchor == "mid":
            return np.asarray(prim.mid, dtype=np.float64)
        if anchor == "center":
            return prim.center()
    elif isinstance(prim, Circle):
        if anchor == "center":
            return np.asarray(prim.center, dtype=np.float64)
    raise ValueError(f"anchor {anchor!r} undefined for {prim.kind}")


# ---------------------------------------------------------------------------
# residuals


def _point_chord_deviation(pts: np.ndarray) -> float:
    """Max distance from the points to the segment joining their endpoints."""
    a, b = pts[0], pts[-1]
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(pts - a, axis=1).max())
    t = np.clip((pts - a) @ d / dd, 0.0, 1.0)
    proj = a + t[:, None] * d
    return float(np.linalg.norm(pts - proj, axis=1).max())


def primitive_residual(prim: Primitive, pts: np.ndarray) -> float:
    """Max deviation of sample points from the primitive's curve."""
    pts = np.asarray(pts, dtype=np.float64)
    if isinstance(prim, Line):
        return _point_chord_deviation(np.vstack([np.asarray(prim.start)[None], pts, np.asarray(prim.end)[None]]))
    if isinstance(prim, Arc):
        c, r = prim.circle()
    else:
        c, r = np.asarray(prim.center, dtype=np.float64), prim.radius
    return float(np.abs(np.linalg.norm(pts - c, axis=1) - r).max())


# ---------------------------------------------------------------------------
# fitting


def _turning_angles(pts: np.ndarray) -> np.ndarray:
    """Signed turning angle at each vertex of a closed polyline (radians)."""
    prev = pts - np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0) - pts
    cross = prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]
    dot = np.sum(prev * nxt, axis=1)
    return np.arctan2(cross, dot)


def _smooth_once(pts: np.ndarray) -> np.ndarray:
    return (np.roll(pts, 1, axis=0) + 2.0 * pts + np.roll(pts, -1, axis=0)) / 4.0


def _needs_smoothing(theta: np.ndarray, corner_rad: float) -> bool:
    # zigzag: a strong turn immediately followed by an opposite strong turn
    big = np.abs(theta) > 3.0 * corner_rad
    alt = (theta * np.roll(theta, -1) < 0.0) & (np.abs(np.roll(theta, -1)) > corner_rad)
    return bool(np.any(big & alt))


def _try_line(pts: np.ndarray, tol: float) -> tuple[Line, float] | None:
    dev = _point_chord_deviation(pts)
    if dev < tol:
        return Line(start=tuple(pts[0]), end=tuple(pts[-1])), dev
    return None


def _arc_from_fit(pts: np.ndarray, c: np.ndarray, r: float) -> Arc:
    """Arc with exact endpoint chaining and mid on the fitted circle."""
    th_s = np.arctan2(pts[0][1] - c[1], pts[0][0] - c[0])
    th_e = np.arctan2(pts[-1][1] - c[1], pts[-1][0] - c[0])
    pm = pts[len(pts) // 2]
    th_m = np.arctan2(pm[1] - c[1], pm[0] - c[0])
    ccw = (th_e - th_s) % (2.0 * np.pi)
    via = (th_m - th_s) % (2.0 * np.pi)
    sweep = ccw if via <= ccw else ccw - 2.0 * np.pi
    th_mid = th_s + sweep / 2.0
    mid = (float(c[0] + r * np.cos(th_mid)), float(c[1] + r * np.sin(th_mid)))
    return Arc(start=tuple(pts[0]), mid=mid, end=tuple(pts[-1]))


def _arc_gap_sagitta(pts: np.ndarray, c: np.ndarray, r: float) -> float:
    """Largest bulge of the circle away from the sample polyline.

    Between consecutive samples the input boundary is a straight chord, so a
    fitted arc can wander off unseen there; the sagitta of each angular gap
    bounds that deviation.
    """
    theta = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    dth = np.diff(theta)
    dth = (dth + np.pi) % (2.0 * np.pi) - np.pi
    return float((r * (1.0 - np.cos(dth / 2.0))).max())


def _try_arc(pts: np.ndarray, tol: float) -> tuple[Arc, float] | None:
    if len(pts) < 3:
        return None
    try:
        c, r = fit_circle(pts)
    except UnfittablePrimitive:
        return None
    if np.abs(np.linalg.norm(pts - c, axis=1) - r).max() >= tol:
        return None
    if _arc_gap_sagitta(pts, c, r) >= tol:
        return None
    try:
        arc = _arc_from_fit(pts, c, r)
        res = max(primitive_residual(arc, pts), _arc_gap_sagitta(pts, *arc.circle()))
    except UnfittablePrimitive:
        return None
    return arc, res


def _fit_stretch_whole(pts: np.ndarray, cfg: FitConfig, scale: float = 1.0) -> tuple[Primitive, float] | None:
    hit = _try_line(pts, cfg.line_tol * scale)
    if hit is not None:
        return hit
    return _try_arc(pts, cfg.arc_tol * scale)


#: greedy growth runs at a fraction of the final tolerance so that arcs do
#: not silently absorb straight runs past a tangent junction; the merge
#: phase afterwards re-joins fragments at full tolerance
_GREEDY_TOL_SCALE = 0.25


def _greedy_segment(pts: np.ndarray, cfg: FitConfig) -> list[tuple[int, int]]:
    """Split ``pts`` into index ranges, each fittable by one primitive."""
    n = len(pts)
    bounds = []
    s = 0
    while s < n - 1:
        # doubling phase
        e = min(s + 2, n - 1)
        good = e if _fit_stretch_whole(pts[s : e + 1], cfg, _GREEDY_TOL_SCALE) is not None else s + 1
        step = 4
        while good < n - 1:
            cand = min(good + step, n - 1)
            if _fit_stretch_whole(pts[s : cand + 1], cfg, _GREEDY_TOL_SCALE) is not None:
                good = cand
                step *= 2
            else:
                break
        # binary search between last good and first failure
        lo, hi = good, min(good + step, n - 1)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _fit_stretch_whole(pts[s : mid + 1], cfg, _GREEDY_TOL_SCALE) is not None:
                lo = mid
            else:
                hi = mid - 1
        e = max(lo, s + 1)
        bounds.append((s, e))
        s = e
    return bounds


def _merge_segments(pts: np.ndarray, bounds: list[tuple[int, int]], cfg: FitConfig) -> list[tuple[int, int]]:
    """Re-join adjacent fragments that one primitive explains at full tol."""
    bounds = list(bounds)
    while len(bounds) > 1:
        best_k, best_cost = -1, float("inf")
        for k in range(len(bounds) - 1):
            s, _ = bounds[k]
            _, e = bounds[k + 1]
            hit = _fit_stretch_whole(pts[s : e + 1], cfg)
            if hit is not None and hit[1] < best_cost:
                best_k, best_cost = k, hit[1]
        if best_k < 0:
            break
        s, _ = bounds[best_k]
        _, e = bounds[best_k + 1]
        bounds[best_k : best_k + 2] = [(s, e)]
    return bounds


def _refine_boundaries(pts: np.ndarray, bounds: list[tuple[int, int]], cfg: FitConfig) -> list[tuple[int, int]]:
    """Nudge segment boundaries to minimize the joint fit residual.

    Both boundaries of each segment are scanned jointly: when a segment
    has absorbed stray points on *both* ends (a tangent arc between two
    lines) no single-boundary move lowers the residual, only the pair
    move does.  Sweeps repeat until no boundary shifts.
    """
    if len(bounds) < 2:
        return bounds
    cuts = [s for s, _ in bounds] + [bounds[-1][1]]
    cache: dict[tuple[int, int], float] = {}

    def seg_cost(s: int, e: int) -> float:
        key = (s, e)
        if key not in cache:
            hit = _fit_stretch_whole(pts[s : e + 1], cfg)
            cache[key] = float("inf") if hit is None else hit[1]
        return cache[key]

    w = cfg.refine_window
    last = len(cuts) - 1
    for _ in range(5):
        moved = False
        for i in range(len(bounds)):
            bl, br = cuts[i], cuts[i + 1]
            if i == 0:
                lo_l = hi_l = bl
            else:
                lo_l = max(cuts[i - 1] + 2, bl - w)
                hi_l = bl + w
            if i + 1 == last:
                lo_r = hi_r = br
            else:
                lo_r = br - w
                hi_r = min(cuts[i + 2] - 2, br + w)
            best = (max(
                seg_cost(cuts[i - 1], bl) if i > 0 else 0.0,
                seg_cost(bl, br),
                seg_cost(br, cuts[i + 2]) if i + 1 < last else 0.0,
            ), bl, br)
            for cl in range(lo_l, hi_l + 1):
                left = seg_cost(cuts[i - 1], cl) if i > 0 else 0.0
                for cr in range(max(lo_r, cl + 2), hi_r + 1):
                    cost = max(left, seg_cost(cl, cr),
                               seg_cost(cr, cuts[i + 2]) if i + 1 < last else 0.0)
                    if cost < best[0] - 1e-15:
                        best = (cost, cl, cr)
            if (best[1], best[2]) != (bl, br):
                cuts[i], cuts[i + 1] = best[1], best[2]
                moved = True
        if not moved:
            break
    return [(cuts[i], cuts[i + 1]) for i in range(len(bounds))]


def _emit(pts: np.ndarray, cfg: FitConfig, report: FitReport) -> list[Primitive]:
    """Primitives for one corner-free stretch (open polyline, endpoints fixed)."""
    whole = _fit_stretch_whole(pts, cfg)
    if whole is not None:
        prim, res = whole
        report.residuals.append(res)
        return [prim]
    bounds = _greedy_segment(pts, cfg)
    bounds = _merge_segments(pts, bounds, cfg)
    bounds = _refine_boundaries(pts, bounds, cfg)
    prims: list[Primitive] = []
    for s, e in bounds:
        seg = pts[s : e + 1]
        hit = _fit_stretch_whole(seg, cfg)
        if hit is None:  # polyline fallback: short exact lines
            report.fallback = True
            for i in range(len(seg) - 1):
                prims.append(Line(start=tuple(seg[i]), end=tuple(seg[i + 1])))
                report.residuals.append(0.0)
            continue
        prims.append(hit[0])
        report.residuals.append(hit[1])
    return prims


def _merge_wraparound(prims: list[Primitive], report: FitReport, cfg: FitConfig) -> list[Primitive]:
    """Join first/last primitives split by an arbitrary cycle start point."""
    if len(prims) < 2:
        return prims
    first, last = prims[0], prims[-1]
    if isinstance(first, Arc) and isinstance(last, Arc):
        c1, r1 = first.circle()
        c2, r2 = last.circle()
        if np.linalg.norm(c1 - c2) < cfg.arc_tol and abs(r1 - r2) < cfg.arc_tol:
            seam = tuple(np.asarray(first.start, dtype=np.float64))
            merged = Arc(start=last.start, mid=seam, end=first.end)
            prims = [merged] + prims[1:-1]
            report.residuals = [max(report.residuals[0], report.residuals[-1])] + report.residuals[1:-1]
            return prims
    if isinstance(first, Line) and isinstance(last, Line):
        a = np.asarray(last.start)
        b = np.asarray(first.end)
        joined = np.vstack([a[None], np.asarray(first.start)[None], b[None]])
        if _point_chord_deviation(joined) < cfg.line_tol:
            prims = [Line(start=last.start, end=first.end)] + prims[1:-1]
            report.residuals = [max(report.residuals[0], report.residuals[-1])] + report.residuals[1:-1]
    return prims


def fit_primitives(loop: Loop2D, cfg: FitConfig | None = None) -> tuple[list[Primitive], FitReport]:
    """Fit a closed loop with lines/arcs, or a single circle.

    Returns the primitive chain (consecutive primitives share endpoints;
    the last chains back to the first) and a :class:`FitReport` whose
    residuals are measured against the emitted primitives.
    """
    cfg = cfg or FitConfig()
    pts = np.asarray(loop.points, dtype=np.float64)
    if len(pts) < 3:
        raise UnfittablePrimitive("loop needs at least 3 points")
    report = FitReport()

    corner_rad = np.radians(cfg.corner_angle_deg)
    theta = _turning_angles(pts)
    if (cfg.smooth and len(pts) >= cfg.smooth_min_pts
            and _needs_smoothing(theta, corner_rad)):
        pts = _smooth_once(pts)
        theta = _turning_angles(pts)
        report.smoothed = True

    # whole-loop circle
    if len(pts) >= 8:
        try:
            c, r = fit_circle(pts)
            if np.abs(np.linalg.norm(pts - c, axis=1) - r).max() < cfg.circle_tol:
                circle = Circle(center=(float(c[0]), float(c[1])), radius=float(r))
                res = primitive_residual(circle, pts)
                report.residuals = [res]
                report.max_residual = res
                return [circle], report
        except UnfittablePrimitive:
            pass

    corners = [int(i) for i in np.flatnonzero(np.abs(theta) > corner_rad)]
    report.corners = corners

    prims: list[Primitive] = []
    if corners:
        k = len(corners)
        for j in range(k):
            a = corners[j]
            b = corners[(j + 1) % k]
            if b > a:
                stretch = pts[a : b + 1]
            else:  # wrap around the cycle
                stretch = np.vstack([pts[a:], pts[: b + 1]])
            if len(stretch) < 2:
                continue
            prims.extend(_emit(stretch, cfg, report))
    else:
        # smooth closed curve: linearize at the strongest turn, merge the seam
        start = int(np.argmax(np.abs(theta)))
        rolled = np.roll(pts, -start, axis=0)
        rolled = np.vstack([rolled, rolled[:1]])
        prims = _emit(rolled, cfg, report)
        prims = _merge_wraparound(prims, report, cfg)

    report.max_residual = max(report.residuals, default=0.0)
    return prims, report


# ---------------------------------------------------------------------------
# quantization / tessellation


def quantize_sketch(prims: list[Primitive], bits: int = 6) -> list[Primitive]:
    """Snap every defining coordinate to a 2^bits uniform grid over [0, 1]."""
    if bits < 2:
        raise ValueError("quantize_sketch requires bits >= 2")
    levels = (1 << bits) - 1

    def q(x: float) -> float:
        return round(x * levels) / levels

    def qp(p) -> tuple[float, float]:
        return (q(p[0]), q(p[1]))

    out: list[Primitive] = []
    for prim in prims:
        if isinstance(prim, Line):
            out.append(Line(start=qp(prim.start), end=qp(prim.end)))
        elif isinstance(prim, Arc):
            out.append(Arc(start=qp(prim.start), mid=qp(prim.mid), end=qp(prim.end)))
        else:
            out.append(Circle(center=qp(prim.center), radius=q(prim.radius)))
    return out


CHAIN_TOL = 1e-6


def sketch_to_loop(prims: list[Primitive], pts_per_prim: int = 32, strict: bool = True) -> Loop2D:
    """Tessellate a closed primitive chain back into a polyline loop.

    Lines contribute their start point, arcs ``pts_per_prim`` points, and a
    lone circle becomes a regular ``pts_per_prim``-gon.  Primitives stored
    with reversed orientation are followed backwards.  With ``strict`` the
    chain must close within 1e-6 at every joint (OpenChain otherwise);
    without it, gaps are bridged by straight jumps.
    """
    if not prims:
        raise OpenChain("empty primitive list")
    if len(prims) == 1 and isinstance(prims[0], Circle):
        return Loop2D(points=tessellate_circle(prims[0], pts_per_prim))
    if any(isinstance(p, Circle) for p in prims):
        raise OpenChain("a circle cannot chain with other primitives")

    def ends(p: Primitive) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(p.start, dtype=np.float64), np.asarray(p.end, dtype=np.float64)

    def points_forward(p: Primitive) -> np.ndarray:
        if isinstance(p, Line):
            return np.asarray([p.start], dtype=np.float64)
        return tessellate_arc(p, pts_per_prim, include_end=False)

    def points_reversed(p: Primitive) -> np.ndarray:
        if isinstance(p, Line):
            return np.asarray([p.end], dtype=np.float64)
        full = tessellate_arc(p, pts_per_prim, include_end=True)
        return full[::-1][:-1]

    # the first primitive may itself be stored reversed: pick the orientation
    # whose chain-end meets an endpoint of the second primitive
    first_reversed = False
    if len(prims) > 1:
        s0, e0 = ends(prims[0])
        s1, e1 = ends(prims[1])
        fwd_gap = min(np.linalg.norm(s1 - e0), np.linalg.norm(e1 - e0))
        rev_gap = min(np.linalg.norm(s1 - s0), np.linalg.norm(e1 - s0))
        first_reversed = rev_gap < fwd_gap and fwd_gap > CHAIN_TOL
    if first_reversed:
        chain: list[np.ndarray] = [points_reversed(prims[0])]
        cursor = ends(prims[0])[0]
    else:
        chain = [points_forward(prims[0])]
        cursor = ends(prims[0])[1]
    for p in prims[1:]:
        s, e = ends(p)
        if np.linalg.norm(s - cursor) <= CHAIN_TOL:
            chain.append(points_forward(p))
            cursor = e
        elif np.linalg.norm(e - cursor) <= CHAIN_TOL:
            chain.append(points_reversed(p))
            cursor = s
        elif strict:
            raise OpenChain(f"primitive does not chain: gap {np.linalg.norm(s - cursor):.3g}")
        else:
            if np.linalg.norm(s - cursor) <= np.linalg.norm(e - cursor):
                chain.append(points_forward(p))
                cursor = e
            else:
                chain.append(points_reversed(p))
                cursor = s
    first = ends(prims[0])[1] if first_reversed else ends(prims[0])[0]
    if strict and np.linalg.norm(cursor - first) > CHAIN_TOL:
        raise OpenChain(f"chain does not close: gap {np.linalg.norm(cursor - first):.3g}")
    return Loop2D(points=np.vstack(chain))


# ---------------------------------------------------------------------------
# JSON


def primitive_to_json(prim: Primitive) -> dict:
    if isinstance(prim, Line):
        return {"kind": "line", "start": list(prim.start), "end": list(prim.end)}
    if isinstance(prim, Arc):
        return {"kind": "arc", "start": list(prim.start), "mid": list(prim.mid), "end": list(prim.end)}
    return {"kind": "circle", "center": list(prim.center), "radius": prim.radius}


def primitive_from_json(doc: dict, pointer: str = "") -> Primitive:
    from .errors import SchemaError

    if not isinstance(doc, dict) or "kind" not in doc:
        raise SchemaError("primitive needs a 'kind'", pointer)
    kind = doc["kind"]

    def pt(key: str) -> tuple[float, float]:
        val = doc.get(key)
        if not isinstance(val, (list, tuple)) or len(val) != 2:
            raise SchemaError(f"{kind} needs 2d point {key!r}", f"{pointer}/{key}")
        return (float(val[0]), float(val[1]))

    if kind == "line":
        return Line(start=pt("start"), end=pt("end"))
    if kind == "arc":
        return Arc(start=pt("start"), mid=pt("mid"), end=pt("end"))
    if kind == "circle":
        if "radius" not in doc:
            raise SchemaError("circle needs 'radius'", f"{pointer}/radius")
        return Circle(center=pt("center"), radius=float(doc["radius"]))
    raise SchemaError(f"unknown primitive kind {kind!r}", f"{pointer}/kind")
