"""Constraint inference and damped least-squares solving for fitted sketches.

Constraints are inferred geometrically from fitted primitives (tolerance
driven, deterministic emission order) and solved as a soft least-squares
system: constraint residual rows, heavily weighted pin rows, and a small
proximity regularizer that keeps under-determined systems close to the
input sketch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import InconsistentPins, NonConvergence, SchemaError, UnsupportedConstraint
from .sketch_fit import (
    Arc,
    Circle,
    Line,
    Primitive,
    anchor_point,
    primitive_from_json,
    primitive_to_json,
)

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-6
MAX_ITERS = 200
PIN_WEIGHT = 1e3  # per-row weight; squared contribution 1e6
PROXIMITY_MU = 1e-4
_POLISH_ITERS = 60
#: polish re-anchors the proximity term every step, so there it only damps
#: the step; a near-zero weight restores fast local convergence on sketches
#: with nearly redundant constraints
_POLISH_MU = 1e-10

SUPPORTED_KINDS = (
    "coincident",
    "concentric",
    "equal",
    "horizontal",
    "vertical",
    "parallel",
    "perpendicular",
    "tangent",
    "midpoint",
)
#: Parsed from JSON for forward compatibility, rejected by solve().
PASSTHROUGH_KINDS = ("fix", "offset", "normal", "quadrant")
_ANCHORS = ("start", "mid", "end", "center", "whole")


@dataclass(frozen=True)
class ToleranceSet:
    """Inference tolerances in the normalized sketch frame."""

    dist: float = 0.01
    angle: float = 1.0  # degrees


@dataclass(frozen=True)
class Constraint:
    kind: str
    refs: tuple[tuple[int, str], ...]


@dataclass
class ConstrainedSketch:
    primitives: list[Primitive]
    constraints: list[Constraint]


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _line_angle_deg(line: Line) -> float:
    d = np.asarray(line.end, dtype=np.float64) - np.asarray(line.start, dtype=np.float64)
    return float(np.degrees(np.arctan2(d[1], d[0]))) % 180.0


def _angle_sep(a: float, b: float) -> float:
    """Separation of two undirected angles in degrees, in [0, 90]."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def _endpoints(prim: Primitive) -> list[tuple[str, np.ndarray]]:
    if isinstance(prim, Circle):
        return []
    out = [("start", np.asarray(prim.start, dtype=np.float64))]
    out.append(("end", np.asarray(prim.end, dtype=np.float64)))
    return out


def _round_center_radius(prim: Primitive) -> tuple[np.ndarray, float] | None:
    if isinstance(prim, Circle):
        return np.asarray(prim.center, dtype=np.float64), float(prim.radius)
    if isinstance(prim, Arc):
        c, r = prim.circle()
        return np.asarray(c, dtype=np.float64), float(r)
    return None


def _point_line_distance(p: np.ndarray, line: Line) -> float:
    s = np.asarray(line.start, dtype=np.float64)
    d = np.asarray(line.end, dtype=np.float64) - s
    n = np.linalg.norm(d)
    if n < 1e-14:
        return float(np.linalg.norm(p - s))
    return float(abs(d[0] * (p[1] - s[1]) - d[1] * (p[0] - s[0])) / n)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def infer_constraints(prims: list[Primitive], tol: ToleranceSet | None = None) -> list[Constraint]:
    """Detect geometric relations among fitted primitives.

    Emission is deterministic and grouped by kind: coincident,
    horizontal/vertical, parallel/perpendicular, equal, concentric,
    tangent, midpoint; within a kind, primitive-index order.
    """
    tol = tol or ToleranceSet()
    n = len(prims)
    out: list[Constraint] = []
    seen: set[tuple[str, tuple[tuple[int, str], ...]]] = set()

    def emit(kind: str, refs: tuple[tuple[int, str], ...]) -> None:
        key = (kind, refs)
        if key not in seen:
            seen.add(key)
            out.append(Constraint(kind=kind, refs=refs))

    # coincident: endpoint pairs
    ends = [_endpoints(p) for p in prims]
    touching: set[tuple[int, int]] = set()
    for i in range(n):
        for j in range(i + 1, n):
            for ai, pi in ends[i]:
                for aj, pj in ends[j]:
                    if np.linalg.norm(pi - pj) < tol.dist:
                        emit("coincident", ((i, ai), (j, aj)))
                        touching.add((i, j))

    # horizontal / vertical
    has_hv = [False] * n
    angles: dict[int, float] = {}
    for i, p in enumerate(prims):
        if not isinstance(p, Line):
            continue
        ang = _line_angle_deg(p)
        angles[i] = ang
        if _angle_sep(ang, 0.0) < tol.angle:
            emit("horizontal", ((i, "whole"),))
            has_hv[i] = True
        elif _angle_sep(ang, 90.0) < tol.angle:
            emit("vertical", ((i, "whole"),))
            has_hv[i] = True

    # parallel / perpendicular (suppressed when both lines are axis-locked)
    line_idx = sorted(angles)
    parallel_pairs: set[tuple[int, int]] = set()
    for a in range(len(line_idx)):
        for b in range(a + 1, len(line_idx)):
            i, j = line_idx[a], line_idx[b]
            sep = _angle_sep(angles[i], angles[j])
            if sep < tol.angle:
                parallel_pairs.add((i, j))
                if not (has_hv[i] and has_hv[j]):
                    emit("parallel", ((i, "whole"), (j, "whole")))
            elif abs(sep - 90.0) < tol.angle and not (has_hv[i] and has_hv[j]):
                emit("perpendicular", ((i, "whole"), (j, "whole")))

    # equal: chained within groups of same-kind primitives.  Line pairs must
    # also be parallel — a square's four sides yield two equal constraints
    # (top=bottom, left=right), not six pairwise ones.
    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            pi, pj = prims[i], prims[j]
            if pi.kind != pj.kind:
                continue
            if isinstance(pi, Line):
                if (i, j) in parallel_pairs or (has_hv[i] and has_hv[j] and _angle_sep(angles[i], angles[j]) < tol.angle):
                    if abs(pi.length() - pj.length()) < tol.dist:
                        uf.union(i, j)
            else:
                ri = _round_center_radius(pi)[1]
                rj = _round_center_radius(pj)[1]
                if abs(ri - rj) < tol.dist:
                    uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    for root in sorted(groups):
        members = sorted(groups[root])
        for a, b in zip(members, members[1:]):
            emit("equal", ((a, "whole"), (b, "whole")))

    # concentric
    rounds = {i: _round_center_radius(p) for i, p in enumerate(prims) if not isinstance(p, Line)}
    round_idx = sorted(rounds)
    concentric_pairs: set[tuple[int, int]] = set()
    for a in range(len(round_idx)):
        for b in range(a + 1, len(round_idx)):
            i, j = round_idx[a], round_idx[b]
            if np.linalg.norm(rounds[i][0] - rounds[j][0]) < tol.dist:
                concentric_pairs.add((i, j))
                emit("concentric", ((i, "center"), (j, "center")))

    # tangent: line-round and round-round.  Arcs and lines must share an
    # endpoint — tangency is a junction smoothness relation, and a remote
    # pair that merely measures tangent would couple unrelated geometry.
    # Full circles have no endpoints, so they stay eligible everywhere.
    for i in range(n):
        for j in range(i + 1, n):
            pi, pj = prims[i], prims[j]
            li = isinstance(pi, Line)
            lj = isinstance(pj, Line)
            if li and lj:
                continue
            if ends[i] and ends[j] and (i, j) not in touching:
                continue
            if li or lj:
                line = pi if li else pj
                c, r = _round_center_radius(pj if li else pi)
                if abs(_point_line_distance(c, line) - r) < tol.dist:
                    emit("tangent", ((i, "whole"), (j, "whole")))
            else:
                if (i, j) in concentric_pairs:
                    continue  # concentric already captures the relation
                ci, ri = rounds[i]
                cj, rj = rounds[j]
                d = float(np.linalg.norm(ci - cj))
                if abs(d - (ri + rj)) < tol.dist or abs(d - abs(ri - rj)) < tol.dist:
                    emit("tangent", ((i, "whole"), (j, "whole")))

    # midpoint: an endpoint sitting on another line's midpoint
    for i in range(n):
        for ai, pi in ends[i]:
            for j, pj in enumerate(prims):
                if i == j or not isinstance(pj, Line):
                    continue
                mid = 0.5 * (np.asarray(pj.start, dtype=np.float64) + np.asarray(pj.end, dtype=np.float64))
                if np.linalg.norm(pi - mid) < tol.dist:
                    emit("midpoint", ((i, ai), (j, "mid")))

    log.debug("inferred %d constraints from %d primitives", len(out), n)
    return out


# ---------------------------------------------------------------------------
# residual evaluation on concrete primitives
# ---------------------------------------------------------------------------


def _line_dir(line: Line) -> tuple[np.ndarray, float]:
    d = np.asarray(line.end, dtype=np.float64) - np.asarray(line.start, dtype=np.float64)
    return d, float(np.linalg.norm(d))


def _residual_scalar(prims: list[Primitive], c: Constraint) -> float:
    kind = c.kind
    if kind in ("coincident", "midpoint"):
        (i, ai), (j, aj) = c.refs
        return float(np.linalg.norm(anchor_point(prims[i], ai) - anchor_point(prims[j], aj)))
    if kind in ("horizontal", "vertical"):
        (i, _), = c.refs
        d, n = _line_dir(prims[i])
        if n < 1e-14:
            return 0.0
        return abs(d[1] / n) if kind == "horizontal" else abs(d[0] / n)
    if kind in ("parallel", "perpendicular"):
        (i, _), (j, _) = c.refs
        di, ni = _line_dir(prims[i])
        dj, nj = _line_dir(prims[j])
        if ni < 1e-14 or nj < 1e-14:
            return 0.0
        cross = di[0] * dj[1] - di[1] * dj[0]
        dot = di[0] * dj[0] + di[1] * dj[1]
        return abs(cross / (ni * nj)) if kind == "parallel" else abs(dot / (ni * nj))
    if kind == "equal":
        (i, _), (j, _) = c.refs
        pi, pj = prims[i], prims[j]
        if isinstance(pi, Line) and isinstance(pj, Line):
            return abs(pi.length() - pj.length())
        return abs(_round_center_radius(pi)[1] - _round_center_radius(pj)[1])
    if kind == "concentric":
        (i, _), (j, _) = c.refs
        ci = _round_center_radius(prims[i])[0]
        cj = _round_center_radius(prims[j])[0]
        return float(np.linalg.norm(ci - cj))
    if kind == "tangent":
        (i, _), (j, _) = c.refs
        pi, pj = prims[i], prims[j]
        if isinstance(pi, Line) or isinstance(pj, Line):
            line = pi if isinstance(pi, Line) else pj
            cc, r = _round_center_radius(pj if isinstance(pi, Line) else pi)
            return abs(_point_line_distance(cc, line) - r)
        ci, ri = _round_center_radius(pi)
        cj, rj = _round_center_radius(pj)
        d = float(np.linalg.norm(ci - cj))
        return min(abs(d - (ri + rj)), abs(d - abs(ri - rj)))
    if kind in PASSTHROUGH_KINDS:
        log.debug("residual for unsupported kind %r reported as 0", kind)
        return 0.0
    raise UnsupportedConstraint(f"unknown constraint kind {kind!r}")


def residuals(sketch: ConstrainedSketch) -> list[float]:
    """One scalar violation per constraint (length units, or |sin|/|cos|)."""
    return [_residual_scalar(sketch.primitives, c) for c in sketch.constraints]


# ---------------------------------------------------------------------------
# least-squares system
# ---------------------------------------------------------------------------


class _System:
    """Flattened parameter vector plus analytic residual rows.

    Layout per primitive: line [sx,sy,ex,ey]; arc [sx,sy,mx,my,ex,ey,cx,cy]
    with (cx,cy) an auxiliary circle center tied to the three points by
    equidistance rows; circle [cx,cy,r].
    """

    def __init__(self, prims: list[Primitive], constraints: list[Constraint],
                 pins: list[tuple[int, str, tuple[float, float]]]):
        self.prims = prims
        self.constraints = constraints
        self.pins = pins
        self.offsets: list[int] = []
        vals: list[float] = []
        for p in prims:
            self.offsets.append(len(vals))
            if isinstance(p, Line):
                vals += [*p.start, *p.end]
            elif isinstance(p, Arc):
                c, _ = p.circle()
                vals += [*p.start, *p.mid, *p.end, c[0], c[1]]
            else:
                vals += [*p.center, p.radius]
        self.x0 = np.asarray(vals, dtype=np.float64)
        self.n_vars = len(vals)
        self._branches: dict[int, float] = {}
        self._pick_branches()

    # -- variable access ----------------------------------------------------

    def _anchor_vars(self, i: int, anchor: str) -> tuple[int, ...] | None:
        """Variable indices of an anchor, or None when it is a derived point."""
        p = self.prims[i]
        o = self.offsets[i]
        if isinstance(p, Line):
            table = {"start": (o, o + 1), "end": (o + 2, o + 3)}
        elif isinstance(p, Arc):
            table = {"start": (o, o + 1), "mid": (o + 2, o + 3),
                     "end": (o + 4, o + 5), "center": (o + 6, o + 7)}
        else:
            table = {"center": (o, o + 1)}
        return table.get(anchor)

    def anchor_value_grad(self, x: np.ndarray, i: int, anchor: str) -> tuple[np.ndarray, list[dict[int, float]]]:
        idx = self._anchor_vars(i, anchor)
        if idx is not None:
            return np.array([x[idx[0]], x[idx[1]]]), [{idx[0]: 1.0}, {idx[1]: 1.0}]
        p = self.prims[i]
        o = self.offsets[i]
        if isinstance(p, Line) and anchor == "mid":
            val = np.array([0.5 * (x[o] + x[o + 2]), 0.5 * (x[o + 1] + x[o + 3])])
            return val, [{o: 0.5, o + 2: 0.5}, {o + 1: 0.5, o + 3: 0.5}]
        raise ValueError(f"anchor {anchor!r} not addressable on {p.kind} primitive {i}")

    def _radius_value_grad(self, x: np.ndarray, i: int) -> tuple[float, dict[int, float]]:
        p = self.prims[i]
        o = self.offsets[i]
        if isinstance(p, Circle):
            return float(x[o + 2]), {o + 2: 1.0}
        # arc: radius = |c - s| using the auxiliary center
        cx, cy, sx, sy = x[o + 6], x[o + 7], x[o], x[o + 1]
        dx, dy = cx - sx, cy - sy
        r = float(np.hypot(dx, dy))
        if r < 1e-14:
            return 0.0, {}
        return r, {o + 6: dx / r, o + 7: dy / r, o: -dx / r, o + 1: -dy / r}

    def _center_vars(self, i: int) -> tuple[int, int]:
        p = self.prims[i]
        o = self.offsets[i]
        return (o + 6, o + 7) if isinstance(p, Arc) else (o, o + 1)

    # -- branch signs for non-smooth constraints -----------------------------

    def _pick_branches(self) -> None:
        for ci, c in enumerate(self.constraints):
            if c.kind != "tangent":
                continue
            (i, _), (j, _) = c.refs
            pi, pj = self.prims[i], self.prims[j]
            if isinstance(pi, Line) or isinstance(pj, Line):
                line_i = i if isinstance(pi, Line) else j
                round_i = j if isinstance(pi, Line) else i
                g = self._signed_line_dist(self.x0, line_i, round_i)[0]
                self._branches[ci] = 1.0 if g >= 0 else -1.0
            else:
                ci_, ri = _round_center_radius(pi)
                cj_, rj = _round_center_radius(pj)
                d = float(np.linalg.norm(ci_ - cj_))
                if abs(d - (ri + rj)) <= abs(d - abs(ri - rj)):
                    self._branches[ci] = 0.0  # external: r_i + r_j
                else:
                    self._branches[ci] = 1.0 if ri >= rj else -1.0  # internal sign

    def _signed_line_dist(self, x: np.ndarray, line_i: int, round_i: int) -> tuple[float, dict[int, float]]:
        o = self.offsets[line_i]
        sx, sy, ex, ey = x[o], x[o + 1], x[o + 2], x[o + 3]
        kx, ky = self._center_vars(round_i)
        cx, cy = x[kx], x[ky]
        dx, dy = ex - sx, ey - sy
        ux, uy = cx - sx, cy - sy
        ln = float(np.hypot(dx, dy))
        if ln < 1e-14:
            return 0.0, {}
        cr = dx * uy - dy * ux
        g = cr / ln
        gd = {}  # partials w.r.t. dx, dy, ux, uy then chained to vars
        d_dx = uy / ln - cr * dx / ln**3
        d_dy = -ux / ln - cr * dy / ln**3
        d_ux = -dy / ln
        d_uy = dx / ln
        gd[o + 2] = d_dx
        gd[o + 3] = d_dy
        gd[kx] = d_ux
        gd[ky] = d_uy
        gd[o] = -d_dx - d_ux
        gd[o + 1] = -d_dy - d_uy
        return float(g), gd

    # -- row assembly ---------------------------------------------------------

    def _dir_value_grad(self, x: np.ndarray, i: int) -> tuple[float, float, float, int]:
        o = self.offsets[i]
        dx, dy = x[o + 2] - x[o], x[o + 3] - x[o + 1]
        return dx, dy, float(np.hypot(dx, dy)), o

    def constraint_rows(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
        """Residual rows + dense Jacobian; owner[k] = constraint index of row k."""
        rows: list[float] = []
        jac: list[dict[int, float]] = []
        owner: list[int] = []

        def add(ci: int, val: float, grad: dict[int, float]) -> None:
            rows.append(val)
            jac.append(grad)
            owner.append(ci)

        for ci, c in enumerate(self.constraints):
            kind = c.kind
            if kind in PASSTHROUGH_KINDS:
                raise UnsupportedConstraint(f"solve does not support constraint kind {kind!r}")
            if kind in ("coincident", "midpoint"):
                (i, ai), (j, aj) = c.refs
                va, ga = self.anchor_value_grad(x, i, ai)
                vb, gb = self.anchor_value_grad(x, j, aj)
                for k in range(2):
                    grad = dict(ga[k])
                    for vi, d in gb[k].items():
                        grad[vi] = grad.get(vi, 0.0) - d
                    add(ci, float(va[k] - vb[k]), grad)
            elif kind in ("horizontal", "vertical"):
                (i, _), = c.refs
                dx, dy, ln, o = self._dir_value_grad(x, i)
                if ln < 1e-14:
                    add(ci, 0.0, {})
                    continue
                if kind == "horizontal":
                    val = dy / ln
                    d_dx, d_dy = -dx * dy / ln**3, dx * dx / ln**3
                else:
                    val = dx / ln
                    d_dx, d_dy = dy * dy / ln**3, -dx * dy / ln**3
                add(ci, float(val), {o + 2: d_dx, o: -d_dx, o + 3: d_dy, o + 1: -d_dy})
            elif kind in ("parallel", "perpendicular"):
                (i, _), (j, _) = c.refs
                dix, diy, ni, oi = self._dir_value_grad(x, i)
                djx, djy, nj, oj = self._dir_value_grad(x, j)
                if ni < 1e-14 or nj < 1e-14:
                    add(ci, 0.0, {})
                    continue
                if kind == "parallel":
                    num = dix * djy - diy * djx
                    dn_dix, dn_diy, dn_djx, dn_djy = djy, -djx, -diy, dix
                else:
                    num = dix * djx + diy * djy
                    dn_dix, dn_diy, dn_djx, dn_djy = djx, djy, dix, diy
                val = num / (ni * nj)
                d_dix = dn_dix / (ni * nj) - num * dix / (ni**3 * nj)
                d_diy = dn_diy / (ni * nj) - num * diy / (ni**3 * nj)
                d_djx = dn_djx / (ni * nj) - num * djx / (ni * nj**3)
                d_djy = dn_djy / (ni * nj) - num * djy / (ni * nj**3)
                grad = {oi + 2: d_dix, oi: -d_dix, oi + 3: d_diy, oi + 1: -d_diy,
                        oj + 2: d_djx, oj: -d_djx, oj + 3: d_djy, oj + 1: -d_djy}
                add(ci, float(val), grad)
            elif kind == "equal":
                (i, _), (j, _) = c.refs
                pi, pj = self.prims[i], self.prims[j]
                if isinstance(pi, Line) and isinstance(pj, Line):
                    dix, diy, ni, oi = self._dir_value_grad(x, i)
                    djx, djy, nj, oj = self._dir_value_grad(x, j)
                    if ni < 1e-14 or nj < 1e-14:
                        add(ci, 0.0, {})
                        continue
                    grad = {oi + 2: dix / ni, oi: -dix / ni, oi + 3: diy / ni, oi + 1: -diy / ni,
                            oj + 2: -djx / nj, oj: djx / nj, oj + 3: -djy / nj, oj + 1: djy / nj}
                    add(ci, float(ni - nj), grad)
                else:
                    ri, gi = self._radius_value_grad(x, i)
                    rj, gj = self._radius_value_grad(x, j)
                    grad = dict(gi)
                    for vi, d in gj.items():
                        grad[vi] = grad.get(vi, 0.0) - d
                    add(ci, float(ri - rj), grad)
            elif kind == "concentric":
                (i, _), (j, _) = c.refs
                ix, iy = self._center_vars(i)
                jx, jy = self._center_vars(j)
                add(ci, float(x[ix] - x[jx]), {ix: 1.0, jx: -1.0})
                add(ci, float(x[iy] - x[jy]), {iy: 1.0, jy: -1.0})
            elif kind == "tangent":
                (i, _), (j, _) = c.refs
                pi, pj = self.prims[i], self.prims[j]
                if isinstance(pi, Line) or isinstance(pj, Line):
                    line_i = i if isinstance(pi, Line) else j
                    round_i = j if isinstance(pi, Line) else i
                    g, gd = self._signed_line_dist(x, line_i, round_i)
                    r, gr = self._radius_value_grad(x, round_i)
                    sigma = self._branches[ci]
                    grad = dict(gd)
                    for vi, d in gr.items():
                        grad[vi] = grad.get(vi, 0.0) - sigma * d
                    add(ci, float(g - sigma * r), grad)
                else:
                    ix, iy = self._center_vars(i)
                    jx, jy = self._center_vars(j)
                    dx, dy = x[ix] - x[jx], x[iy] - x[jy]
                    d = max(float(np.hypot(dx, dy)), 1e-12)
                    grad = {ix: dx / d, jx: -dx / d, iy: dy / d, jy: -dy / d}
                    ri, gi = self._radius_value_grad(x, i)
                    rj, gj = self._radius_value_grad(x, j)
                    sigma = self._branches[ci]
                    if sigma == 0.0:  # external: d - (ri + rj)
                        val = d - (ri + rj)
                        for vi, dv in gi.items():
                            grad[vi] = grad.get(vi, 0.0) - dv
                        for vi, dv in gj.items():
                            grad[vi] = grad.get(vi, 0.0) - dv
                    else:  # internal: d - sigma*(ri - rj)
                        val = d - sigma * (ri - rj)
                        for vi, dv in gi.items():
                            grad[vi] = grad.get(vi, 0.0) - sigma * dv
                        for vi, dv in gj.items():
                            grad[vi] = grad.get(vi, 0.0) + sigma * dv
                    add(ci, float(val), grad)
            else:
                raise UnsupportedConstraint(f"unknown constraint kind {kind!r}")

        # auxiliary equidistance rows keep each arc center on the circle
        for i, p in enumerate(self.prims):
            if not isinstance(p, Arc):
                continue
            o = self.offsets[i]
            _, r0 = p.circle()
            scale = 1.0 / (2.0 * max(r0, 1e-9))
            for (ax, ay, bx, by) in ((o, o + 1, o + 2, o + 3), (o + 2, o + 3, o + 4, o + 5)):
                cx, cy = x[o + 6], x[o + 7]
                da2 = (cx - x[ax]) ** 2 + (cy - x[ay]) ** 2
                db2 = (cx - x[bx]) ** 2 + (cy - x[by]) ** 2
                grad = {
                    o + 6: 2.0 * scale * (x[bx] - x[ax]),
                    o + 7: 2.0 * scale * (x[by] - x[ay]),
                    ax: 2.0 * scale * (x[ax] - cx),
                    ay: 2.0 * scale * (x[ay] - cy),
                    bx: -2.0 * scale * (x[bx] - cx),
                    by: -2.0 * scale * (x[by] - cy),
                }
                add(-1, float(scale * (da2 - db2)), grad)

        jmat = np.zeros((len(rows), self.n_vars))
        for k, grad in enumerate(jac):
            for vi, d in grad.items():
                jmat[k, vi] = d
        return np.asarray(rows, dtype=np.float64), jmat, owner

    def pin_rows(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows: list[float] = []
        jac: list[dict[int, float]] = []
        for (i, anchor, target) in self.pins:
            va, ga = self.anchor_value_grad(x, i, anchor)
            t = np.asarray(target, dtype=np.float64)
            for k in range(2):
                rows.append(PIN_WEIGHT * float(va[k] - t[k]))
                jac.append({vi: PIN_WEIGHT * d for vi, d in ga[k].items()})
        jmat = np.zeros((len(rows), self.n_vars))
        for k, grad in enumerate(jac):
            for vi, d in grad.items():
                jmat[k, vi] = d
        return np.asarray(rows, dtype=np.float64), jmat

    def rebuild(self, x: np.ndarray) -> list[Primitive]:
        out: list[Primitive] = []
        for i, p in enumerate(self.prims):
            o = self.offsets[i]
            if isinstance(p, Line):
                out.append(replace(p, start=(float(x[o]), float(x[o + 1])),
                                   end=(float(x[o + 2]), float(x[o + 3]))))
            elif isinstance(p, Arc):
                out.append(replace(p, start=(float(x[o]), float(x[o + 1])),
                                   mid=(float(x[o + 2]), float(x[o + 3])),
                                   end=(float(x[o + 4]), float(x[o + 5]))))
            else:
                out.append(replace(p, center=(float(x[o]), float(x[o + 1])),
                                   radius=float(x[o + 2])))
        return out

    def worst_residual(self, x: np.ndarray) -> float:
        """Max constraint/pin/auxiliary violation at x, in natural units."""
        prims = self.rebuild(x)
        worst = 0.0
        for c in self.constraints:
            worst = max(worst, _residual_scalar(prims, c))
        for (i, anchor, target) in self.pins:
            p = anchor_point(prims[i], anchor)
            worst = max(worst, float(np.linalg.norm(p - np.asarray(target, dtype=np.float64))))
        r, _, owner = self.constraint_rows(x)
        for k, own in enumerate(owner):
            if own == -1:
                worst = max(worst, abs(float(r[k])))
        return worst


def _check_pins(prims: list[Primitive], constraints: list[Constraint],
                pins: list[tuple[int, str, tuple[float, float]]]) -> None:
    """Reject pins that contradict each other through coincidence chains."""
    if len(pins) < 2:
        return
    nodes: dict[tuple[int, str], int] = {}

    def node(ref: tuple[int, str]) -> int:
        if ref not in nodes:
            nodes[ref] = len(nodes)
        return nodes[ref]

    pairs = [c.refs for c in constraints if c.kind == "coincident"]
    for refs in pairs:
        node(refs[0])
        node(refs[1])
    for (i, anchor, _) in pins:
        node((i, anchor))
    uf = _UnionFind(len(nodes))
    for refs in pairs:
        uf.union(nodes[refs[0]], nodes[refs[1]])
    targets: dict[int, np.ndarray] = {}
    for (i, anchor, target) in pins:
        root = uf.find(nodes[(i, anchor)])
        t = np.asarray(target, dtype=np.float64)
        if root in targets and np.linalg.norm(targets[root] - t) > SOLVE_TOL:
            raise InconsistentPins(
                f"pins on coincident anchors disagree by {np.linalg.norm(targets[root] - t):.3g}")
        targets[root] = t


def solve(sketch: ConstrainedSketch,
          pinned: list[tuple[int, str, tuple[float, float]]] | None = None) -> ConstrainedSketch:
    """Project a sketch onto its constraint manifold under optional pins.

    Damped least squares over [constraint rows; pin rows (weight 1e3);
    sqrt(mu) proximity rows to the initial parameters], then a short polish
    phase with the proximity re-anchored at the current iterate so the
    selection made by mu is kept while residuals are driven below tolerance.
    """
    pins = list(pinned or [])
    for c in sketch.constraints:
        if c.kind in PASSTHROUGH_KINDS:
            raise UnsupportedConstraint(f"solve does not support constraint kind {c.kind!r}")
        if c.kind not in SUPPORTED_KINDS:
            raise UnsupportedConstraint(f"unknown constraint kind {c.kind!r}")
    _check_pins(sketch.primitives, sketch.constraints, pins)

    sys_ = _System(sketch.primitives, sketch.constraints, pins)
    x = sys_.x0.copy()

    def total(xv: np.ndarray, anchor: np.ndarray, smu: float
              ) -> tuple[np.ndarray, np.ndarray]:
        rc, jc, _ = sys_.constraint_rows(xv)
        rp, jp = sys_.pin_rows(xv)
        rprox = smu * (xv - anchor)
        jprox = smu * np.eye(sys_.n_vars)
        return np.concatenate([rc, rp, rprox]), np.vstack([jc, jp, jprox])

    def lm(xv: np.ndarray, anchor_fixed: bool, iters: int, smu: float) -> np.ndarray:
        lam = 1e-6
        anchor = xv.copy()
        for _ in range(iters):
            if not anchor_fixed:
                anchor = xv.copy()
            r, jmat = total(xv, anchor, smu)
            cost = float(r @ r)
            if sys_.worst_residual(xv) < (SOLVE_TOL if anchor_fixed else 1e-12):
                break
            a = jmat.T @ jmat
            g = jmat.T @ r
            accepted = False
            for _ in range(14):
                try:
                    step = np.linalg.solve(a + lam * np.eye(sys_.n_vars), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                x_new = xv + step
                r_new, _ = total(x_new, anchor if anchor_fixed else x_new, smu)
                if float(r_new @ r_new) < cost - 1e-18:
                    xv = x_new
                    lam = max(lam / 3.0, 1e-12)
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                break
        return xv

    x = lm(x, anchor_fixed=True, iters=MAX_ITERS, smu=float(np.sqrt(PROXIMITY_MU)))
    if sys_.worst_residual(x) >= 1e-12:
        x = lm(x, anchor_fixed=False, iters=_POLISH_ITERS,
               smu=float(np.sqrt(_POLISH_MU)))

    worst = sys_.worst_residual(x)
    if worst >= SOLVE_TOL:
        raise NonConvergence(f"constraint residual {worst:.3g} after "
                             f"{MAX_ITERS + _POLISH_ITERS} iterations")
    log.debug("solve converged, worst residual %.3g", worst)
    return ConstrainedSketch(primitives=sys_.rebuild(x), constraints=list(sketch.constraints))


# ---------------------------------------------------------------------------
# JSON round-trip
# ---------------------------------------------------------------------------


def constraint_to_json(c: Constraint) -> dict:
    return {"kind": c.kind, "refs": [{"prim": i, "anchor": a} for i, a in c.refs]}


def constraint_from_json(obj: dict, n_prims: int, pointer: str = "/") -> Constraint:
    if not isinstance(obj, dict):
        raise SchemaError("constraint must be an object", pointer=pointer)
    kind = obj.get("kind")
    if kind not in SUPPORTED_KINDS and kind not in PASSTHROUGH_KINDS:
        raise SchemaError(f"unknown constraint kind {kind!r}", pointer=pointer + "/kind")
    refs_obj = obj.get("refs")
    if not isinstance(refs_obj, list) or not 1 <= len(refs_obj) <= 2:
        raise SchemaError("refs must hold one or two entries", pointer=pointer + "/refs")
    refs = []
    for k, ref in enumerate(refs_obj):
        ptr = f"{pointer}/refs/{k}"
        if not isinstance(ref, dict):
            raise SchemaError("ref must be an object", pointer=ptr)
        prim = ref.get("prim")
        anchor = ref.get("anchor")
        if not isinstance(prim, int) or not 0 <= prim < n_prims:
            raise SchemaError(f"prim index {prim!r} out of range", pointer=ptr + "/prim")
        if anchor not in _ANCHORS:
            raise SchemaError(f"bad anchor {anchor!r}", pointer=ptr + "/anchor")
        refs.append((prim, anchor))
    return Constraint(kind=kind, refs=tuple(refs))


def sketch_to_json(sketch: ConstrainedSketch) -> dict:
    return {
        "primitives": [primitive_to_json(p) for p in sketch.primitives],
        "constraints": [constraint_to_json(c) for c in sketch.constraints],
    }


def sketch_from_json(obj: dict, pointer: str = "") -> ConstrainedSketch:
    if not isinstance(obj, dict):
        raise SchemaError("sketch must be an object", pointer=pointer or "/")
    prims_obj = obj.get("primitives")
    if not isinstance(prims_obj, list):
        raise SchemaError("missing primitives array", pointer=pointer + "/primitives")
    prims = [primitive_from_json(p, pointer=f"{pointer}/primitives/{i}") for i, p in enumerate(prims_obj)]
    cons_obj = obj.get("constraints", [])
    if not isinstance(cons_obj, list):
        raise SchemaError("constraints must be an array", pointer=pointer + "/constraints")
    cons = [constraint_from_json(c, len(prims), pointer=f"{pointer}/constraints/{i}")
            for i, c in enumerate(cons_obj)]
    return ConstrainedSketch(primitives=prims, constraints=cons)
