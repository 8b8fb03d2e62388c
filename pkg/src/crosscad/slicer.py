"""Cross-section extraction: plane sampling, mesh slicing, loop stitching.

Slicing planes are axis-aligned with normals along the positive axes.  A
slice of a watertight mesh stitches into closed loops; open chains are
returned separately and signal non-watertight input.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSlice, SchemaError
from .geometry import Mesh, Plane

logger = logging.getLogger(__name__)

#: endpoint stitching tolerance (normalized units)
STITCH_TOL = 1e-5
#: consecutive directions closer than this angle (degrees) merge to one edge
COLLINEAR_ANGLE_DEG = 0.5

# per-axis in-plane frames, cyclic so that (u, v, axis) stays right-handed
_FRAME_AXES = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


@dataclass(frozen=True)
class Loop3D:
    """Closed polyline on a slicing plane (first point not repeated)."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))


@dataclass(frozen=True)
class Loop2D:
    """Planar loop in the normalized sketch frame ([0, 1]^2, y-up).

    ``source`` records (axis, slice index, loop ordinal) provenance.
    """

    points: np.ndarray
    source: tuple[int, int, int] = (-1, -1, -1)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 2))

    def signed_area(self) -> float:
        return polygon_signed_area(self.points)

    def is_ccw(self) -> bool:
        return self.signed_area() > 0.0


@dataclass(frozen=True)
class NormRecord:
    """Slice-local 2D normalization: ``normalized = (p - t) * s``."""

    t_x: float
    t_y: float
    s: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - (self.t_x, self.t_y)) * self.s

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.s + (self.t_x, self.t_y)


@dataclass
class SliceRecord:
    """One cross-section: plane, stitched 3D loops and their 2D projections."""

    plane: Plane
    axis: int
    index: int
    loops: list[Loop3D] = field(default_factory=list)
    loops2d: list[Loop2D] = field(default_factory=list)
    norm: NormRecord | None = None
    open_chains: int = 0


def polygon_signed_area(points: np.ndarray) -> float:
    """Shoelace signed area of a closed polygon (positive = CCW)."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def axis_frame(axis: int) -> tuple[int, int]:
    """In-plane coordinate axes (u, v) for slices perpendicular to ``axis``."""
    return _FRAME_AXES[axis]


def project_to_plane(points: np.ndarray, axis: int) -> np.ndarray:
    """Drop the slicing-axis coordinate, keeping the cyclic (u, v) pair."""
    u, v = axis_frame(axis)
    pts = np.asarray(points, dtype=np.float64)
    return np.stack([pts[:, u], pts[:, v]], axis=1)


def lift_from_plane(points2d: np.ndarray, axis: int, offset: float) -> np.ndarray:
    """Inverse of :func:`project_to_plane` at the given axis offset."""
    ua, va = axis_frame(axis)
    pts = np.asarray(points2d, dtype=np.float64)
    out = np.empty((len(pts), 3), dtype=np.float64)
    out[:, ua] = pts[:, 0]
    out[:, va] = pts[:, 1]
    out[:, axis] = offset
    return out


def sample_planes(mesh: Mesh, n_per_axis: int = 40) -> list[tuple[int, int, Plane]]:
    """Candidate slicing planes at cell centers of the mesh bbox.

    Along each axis, plane ``k`` sits at ``bbox_min + (k + 0.5) / n * extent``
    with the normal pointing along the positive axis.
    """
    lo, hi = mesh.bbox
    out = []
    eye = np.eye(3)
    for axis in range(3):
        extent = hi[axis] - lo[axis]
        for k in range(n_per_axis):
            origin = np.array([0.0, 0.0, 0.0])
            origin[axis] = lo[axis] + (k + 0.5) / n_per_axis * extent
            out.append((axis, k, Plane(origin=origin, normal=eye[axis])))
    return out


def slice_mesh(mesh: Mesh, plane: Plane) -> np.ndarray:
    """Intersect every triangle with the plane.

    Returns an (s, 2, 3) array of segments.  Vertices exactly on the plane
    are treated as lying on the positive side (simulation of simplicity),
    so each triangle that properly crosses yields exactly one segment and
    coplanar triangles contribute nothing.
    """
    tri = mesh.triangles()
    if len(tri) == 0:
        return np.zeros((0, 2, 3))
    d = tri @ plane.normal - plane.offset  # (m, 3) signed distances
    pos = d >= 0.0
    npos = pos.sum(axis=1)
    crossing = (npos == 1) | (npos == 2)
    if not crossing.any():
        return np.zeros((0, 2, 3))
    tri = tri[crossing]
    d = d[crossing]
    pos = pos[crossing]

    # orient so exactly one vertex sits alone on its side ("apex")
    alone_positive = pos.sum(axis=1) == 1
    apex_mask = np.where(alone_positive[:, None], pos, ~pos)
    apex_idx = apex_mask.argmax(axis=1)
    rows = np.arange(len(tri))
    a = tri[rows, apex_idx]
    b = tri[rows, (apex_idx + 1) % 3]
    c = tri[rows, (apex_idx + 2) % 3]
    da = d[rows, apex_idx]
    db = d[rows, (apex_idx + 1) % 3]
    dc = d[rows, (apex_idx + 2) % 3]

    # crossing edges are apex-b and apex-c; denominators are nonzero because
    # the endpoints lie strictly on opposite sides under the sign convention
    tb = da / (da - db)
    tc = da / (da - dc)
    p1 = a + tb[:, None] * (b - a)
    p2 = a + tc[:, None] * (c - a)
    return np.stack([p1, p2], axis=1)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def _cluster_endpoints(points: np.ndarray, tol: float) -> np.ndarray:
    """Group points within ``tol`` (KD-tree pair query + union-find)."""
    n = len(points)
    uf = _UnionFind(n)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    for i, j in pairs:
        uf.union(int(i), int(j))
    return np.array([uf.find(i) for i in range(n)], dtype=np.int64)


def _simplify_collinear(points: np.ndarray, closed: bool, angle_deg: float = COLLINEAR_ANGLE_DEG) -> np.ndarray:
    """Drop interior points whose turning angle is below ``angle_deg``.

    Whole passes run vectorized: all duplicate/straight-through points found
    in one sweep are removed together, and passes repeat until stable (a
    removal can straighten its neighbors).
    """
    cos_keep = np.cos(np.radians(angle_deg))
    pts = np.asarray(points, dtype=np.float64)
    min_pts = 3 if closed else 2
    while len(pts) > min_pts:
        n = len(pts)
        u = pts - np.roll(pts, 1, axis=0)
        v = np.roll(pts, -1, axis=0) - pts
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosv = np.einsum("ij,ij->i", u, v) / (nu * nv)
        drop = (nu == 0.0) | (cosv > cos_keep)
        if not closed:
            drop[0] = False
            drop[-1] = False
        if not drop.any():
            break
        if n - int(drop.sum()) < min_pts:
            keep_idx = np.flatnonzero(~drop)
            extra = np.flatnonzero(drop)[: min_pts - len(keep_idx)]
            drop[extra] = False
        pts = pts[~drop]
    return pts


def stitch_loops(segments: np.ndarray, tol: float = STITCH_TOL) -> tuple[list[Loop3D], list[np.ndarray]]:
    """Chain raw slice segments into closed loops and open polylines.

    Endpoints within ``tol`` are merged; near-collinear interior points are
    removed.  The result is independent of segment order: endpoints are
    clustered with a commutative union-find, cluster representatives are
    averaged in sorted order, and traversal starts from canonical nodes.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    if len(segments) == 0:
        return [], []
    flat = segments.reshape(-1, 3)
    labels = _cluster_endpoints(flat, tol)

    # canonical representative per cluster: mean over members, accumulated in
    # lexicographic order so the value does not depend on input order
    order = np.lexsort((flat[:, 2], flat[:, 1], flat[:, 0]))
    uniq, inverse, counts = np.unique(labels[order], return_inverse=True,
                                      return_counts=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, flat[order])
    means = sums / counts[:, None]
    reps: dict[int, np.ndarray] = {int(lbl): means[i] for i, lbl in enumerate(uniq)}

    # edge set between clusters (dedup, drop self-loops)
    edges = set()
    for k in range(len(segments)):
        a, b = int(labels[2 * k]), int(labels[2 * k + 1])
        if a != b:
            edges.add((min(a, b), max(a, b)))

    adj: dict[int, list[int]] = {}
    for a, b in sorted(edges):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v in adj:
        adj[v].sort()

    remaining = {frozenset(e) for e in edges}

    def walk(start: int, first: int) -> list[int]:
        path = [start, first]
        remaining.discard(frozenset((start, first)))
        while True:
            cur = path[-1]
            nxt = None
            for cand in adj.get(cur, ()):
                if frozenset((cur, cand)) in remaining:
                    nxt = cand
                    break
            if nxt is None:
                return path
            remaining.discard(frozenset((cur, nxt)))
            path.append(nxt)
            if nxt == start:
                return path

    closed: list[Loop3D] = []
    open_chains: list[np.ndarray] = []

    # open chains first, seeded at odd-degree nodes in ascending order
    for node in sorted(adj):
        while sum(1 for c in adj[node] if frozenset((node, c)) in remaining) % 2 == 1:
            first = next(c for c in adj[node] if frozenset((node, c)) in remaining)
            path = walk(node, first)
            pts = np.asarray([reps[i] for i in path])
            pts = _simplify_collinear(pts, closed=False)
            if len(pts) >= 2:
                open_chains.append(pts)

    # remaining edges form cycles
    for node in sorted(adj):
        while True:
            first = next((c for c in adj[node] if frozenset((node, c)) in remaining), None)
            if first is None:
                break
            path = walk(node, first)
            if path[0] == path[-1] and len(path) > 3:
                pts = np.asarray([reps[i] for i in path[:-1]])
                pts = _simplify_collinear(pts, closed=True)
                if len(pts) >= 3:
                    closed.append(Loop3D(points=pts))
            else:
                pts = np.asarray([reps[i] for i in path])
                pts = _simplify_collinear(pts, closed=False)
                if len(pts) >= 2:
                    open_chains.append(pts)

    return closed, open_chains


#: fraction of the unit sketch box left as margin on each side
SKETCH_MARGIN = 0.05


def project_and_normalize(
    loops: list[Loop3D],
    plane: Plane,
    axis: int | None = None,
    index: int = -1,
) -> tuple[list[Loop2D], NormRecord]:
    """Project loops to the plane frame and normalize into the unit box.

    The joint bbox of all loops maps to [margin, 1 - margin]^2 with a single
    uniform scale; CCW orientation is enforced.  Loops with bbox diagonal
    below 1e-6 are dropped; if none survive, DegenerateSlice is raised.
    """
    if axis is None:
        axis = int(np.argmax(np.abs(plane.normal)))
    projected = []
    for loop in loops:
        p2 = project_to_plane(loop.points, axis)
        lo = p2.min(axis=0)
        hi = p2.max(axis=0)
        if float(np.linalg.norm(hi - lo)) >= 1e-6:
            projected.append(p2)
    if not projected:
        raise DegenerateSlice(f"slice (axis={axis}, index={index}) has no usable loops")

    # largest loop first so containing profiles get lower ordinals than holes
    projected.sort(key=lambda p: -abs(polygon_signed_area(p)))

    lo = np.min([p.min(axis=0) for p in projected], axis=0)
    hi = np.max([p.max(axis=0) for p in projected], axis=0)
    extent = float((hi - lo).max())
    span = 1.0 - 2.0 * SKETCH_MARGIN
    s = span / extent
    center = (lo + hi) / 2.0
    t = center - 0.5 / s
    norm = NormRecord(t_x=float(t[0]), t_y=float(t[1]), s=float(s))

    out = []
    for ordinal, p2 in enumerate(projected):
        q = norm.apply(p2)
        if polygon_signed_area(q) < 0.0:
            q = q[::-1]
        out.append(Loop2D(points=q, source=(axis, index, ordinal)))
    return out, norm


def make_slices(mesh: Mesh, n_per_axis: int = 40, tol: float = STITCH_TOL) -> list[SliceRecord]:
    """Slice the mesh along all three axes and stitch every cross-section."""
    records = []
    for axis, index, plane in sample_planes(mesh, n_per_axis):
        segments = slice_mesh(mesh, plane)
        loops, open_chains = stitch_loops(segments, tol)
        rec = SliceRecord(plane=plane, axis=axis, index=index, loops=loops, open_chains=len(open_chains))
        if loops:
            try:
                rec.loops2d, rec.norm = project_and_normalize(loops, plane, axis, index)
            except DegenerateSlice:
                rec.loops2d, rec.norm = [], None
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# persistence


def slices_to_json(records: list[SliceRecord]) -> dict:
    out = []
    for rec in records:
        entry = {
            "axis": rec.axis,
            "index": rec.index,
            "origin": rec.plane.origin.tolist(),
            "normal": rec.plane.normal.tolist(),
            "loops": [loop.points.tolist() for loop in rec.loops],
        }
        if rec.norm is not None:
            entry.update(t_x=rec.norm.t_x, t_y=rec.norm.t_y, s=rec.norm.s)
        out.append(entry)
    return {"slices": out}


def save_slices(records: list[SliceRecord], path: str | Path) -> None:
    Path(path).write_text(json.dumps(slices_to_json(records), indent=1) + "\n")


def load_slices(path: str | Path) -> list[SliceRecord]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "slices" not in doc:
        raise SchemaError("missing 'slices' key", "/slices")
    records = []
    for i, entry in enumerate(doc["slices"]):
        for key in ("axis", "index", "origin", "normal", "loops"):
            if key not in entry:
                raise SchemaError(f"missing {key!r}", f"/slices/{i}/{key}")
        plane = Plane(origin=np.asarray(entry["origin"]), normal=np.asarray(entry["normal"]))
        rec = SliceRecord(
            plane=plane,
            axis=int(entry["axis"]),
            index=int(entry["index"]),
            loops=[Loop3D(points=np.asarray(pts)) for pts in entry["loops"]],
        )
        if "s" in entry:
            rec.norm = NormRecord(t_x=float(entry["t_x"]), t_y=float(entry["t_y"]), s=float(entry["s"]))
            if rec.loops:
                rec.loops2d, _ = project_and_normalize(rec.loops, plane, rec.axis, rec.index)
        records.append(rec)
    return records
