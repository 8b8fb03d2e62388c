"""Reconstruction quality metrics: chamfer, edge chamfer, voxel IoU, invalidity.

Chamfer-style metrics normalize each point set independently (centered,
longest bbox side scaled to 1) so models are compared shape-to-shape;
IoU instead voxelizes both models in one shared frame spanning the joint
bounding box, since overlap in independently normalized frames would be
meaningless.  Sampling seeds derive from content hashes, which makes both
chamfer metrics exactly symmetric and exactly zero for identical inputs.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cad_model import (CadModel, _plane_groups, is_watertight, step_polygon,
                        tessellate, voxelize)
from .errors import CrossCadError, EmptyMesh, EmptyOccupancy, NoEdges
from .extrude import CUT, NEW, build_nesting
from .geometry import Mesh, sample_surface_points
from .slicer import Loop2D, lift_from_plane
from .triangulate import polygon_area

log = logging.getLogger(__name__)

CD_SAMPLES = 8192
ECD_SAMPLES = 4096


@dataclass
class EvalReport:
    """Per-pair evaluation record; cd/ecd are raw (tables use x1000)."""

    cd: float
    ecd: float
    iou: float
    valid: bool
    timings: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# nearest neighbors


def nearest_squared(points: np.ndarray, ref: np.ndarray, method: str = "kdtree"
                    ) -> np.ndarray:
    """Squared distance from each point to its nearest neighbor in ``ref``."""
    points = np.asarray(points, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if method == "brute":
        d2 = ((points[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        return d2.min(axis=1)
    d, _ = cKDTree(ref).query(points, k=1)
    return d ** 2


def _normalize_points(pts: np.ndarray) -> np.ndarray:
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent < 1e-12:
        extent = 1.0
    return (pts - (lo + hi) / 2.0) / extent


def _normalized_mesh(mesh: Mesh) -> Mesh:
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = float((hi - lo).max())
    if extent < 1e-12:
        extent = 1.0
    return Mesh(vertices=(v - (lo + hi) / 2.0) / extent, faces=mesh.faces)


def _mesh_seed(mesh: Mesh, seed: int) -> int:
    """Content-derived sampling seed: identical shapes sample identically."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.round(mesh.vertices, 12)).tobytes())
    h.update(np.ascontiguousarray(mesh.faces).tobytes())
    h.update(int(seed).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little")


def chamfer_distance(a: Mesh, b: Mesh, n: int = CD_SAMPLES, seed: int = 0) -> float:
    """Bidirectional mean squared nearest distance over surface samples.

    Each mesh is centered and scaled to a unit bounding box independently
    before ``n`` surface points are drawn, and the two directed means are
    averaged with 1/2 weights.  The per-mesh sampling seed is derived from
    the normalized geometry, so translated or uniformly scaled copies draw
    the same points and compare to exactly zero.
    """
    for m in (a, b):
        if len(m.vertices) == 0 or len(m.faces) == 0:
            raise EmptyMesh("chamfer distance needs non-empty meshes")
    na = _normalized_mesh(a)
    nb = _normalized_mesh(b)
    pa = sample_surface_points(na, n, seed=_mesh_seed(na, seed))
    pb = sample_surface_points(nb, n, seed=_mesh_seed(nb, seed))
    return 0.5 * float(nearest_squared(pa, pb).mean()) + \
        0.5 * float(nearest_squared(pb, pa).mean())


# --------------------------------------------------------------------------
# edge chamfer


def _sketch_corners(prims) -> list[np.ndarray]:
    pts = []
    for p in prims:
        if p.kind == "circle":
            continue
        pts.append(np.asarray(p.start, dtype=np.float64))
        pts.append(np.asarray(p.end, dtype=np.float64))
    out: list[np.ndarray] = []
    for q in pts:
        if not any(np.linalg.norm(q - r) < 1e-9 for r in out):
            out.append(q)
    return out


def model_edges(model: CadModel, circle_segments: int = 64) -> list[np.ndarray]:
    """Edge curves of the tessellated solid, as 3D polylines.

    For every new step: its profile ring (and the rings of same-plane cut
    profiles nested in it) at the base plane and at the cap plane offset by
    h*v, plus straight side edges connecting the two at each sketch corner.
    """
    curves: list[np.ndarray] = []
    for group in _plane_groups(model):
        polys = {i: step_polygon(model.steps[i], circle_segments) for i in group}
        loops = [Loop2D(points=polys[i], source=model.steps[i].source) for i in group]
        tree = build_nesting(loops)
        for gi, i in enumerate(group):
            step = model.steps[i]
            if step.extrusion.type != NEW:
                continue
            ex = step.extrusion
            members = [i] + [group[gj] for gj in range(len(group))
                             if tree.parent[gj] == gi
                             and model.steps[group[gj]].extrusion.type == CUT]
            shift = float(ex.length) * np.asarray(ex.direction, dtype=np.float64)
            for j in members:
                ring2d = np.vstack([polys[j], polys[j][:1]])  # closed polyline
                base = lift_from_plane(ring2d, ex.axis, float(ex.plane.offset))
                curves.append(base)
                curves.append(base + shift)
                for corner in _sketch_corners(model.steps[j].sketch.primitives):
                    p0 = lift_from_plane(corner.reshape(1, 2), ex.axis,
                                         float(ex.plane.offset))[0]
                    curves.append(np.vstack([p0, p0 + shift]))
    return curves


def _sample_polylines(curves: list[np.ndarray], m: int) -> np.ndarray:
    """``m`` points spread arc-length-uniformly over all curves (deterministic)."""
    segs_a = []
    segs_b = []
    for c in curves:
        if len(c) >= 2:
            segs_a.append(c[:-1])
            segs_b.append(c[1:])
    if not segs_a:
        raise NoEdges("model contributed no edge curves")
    a = np.vstack(segs_a)
    b = np.vstack(segs_b)
    lens = np.linalg.norm(b - a, axis=1)
    total = float(lens.sum())
    if total < 1e-12:
        raise NoEdges("total edge length is zero")
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    t = (np.arange(m) + 0.5) / m * total
    idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(lens) - 1)
    local = (t - cum[idx]) / np.where(lens[idx] > 1e-18, lens[idx], 1.0)
    return a[idx] + local[:, None] * (b[idx] - a[idx])


def edge_chamfer_distance(a: CadModel, b: CadModel, m: int = ECD_SAMPLES) -> float:
    """Bidirectional mean squared distance between sampled edge curves.

    Point sets are centered and unit-bbox normalized independently; the
    sampler is deterministic, so identical models give exactly zero.
    """
    pa = _normalize_points(_sample_polylines(model_edges(a), m))
    pb = _normalize_points(_sample_polylines(model_edges(b), m))
    return 0.5 * float(nearest_squared(pa, pb).mean()) + \
        0.5 * float(nearest_squared(pb, pa).mean())


# --------------------------------------------------------------------------
# volumetric


def iou(a: CadModel, b: CadModel, res: int = 64) -> float:
    """Voxel intersection-over-union in a shared joint-bbox frame."""
    from .cad_model import _model_bbox

    lo_a, hi_a = _model_bbox(a)
    lo_b, hi_b = _model_bbox(b)
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    ga = voxelize(a, res=res, bbox=(lo, hi)).occupancy
    gb = voxelize(b, res=res, bbox=(lo, hi)).occupancy
    union = int(np.logical_or(ga, gb).sum())
    if union == 0:
        raise EmptyOccupancy("both models voxelize to empty grids")
    inter = int(np.logical_and(ga, gb).sum())
    return inter / union


def invalidity(models: list) -> float:
    """Fraction of reconstruction attempts without a valid watertight mesh.

    ``None`` entries (pipeline failures) count as invalid, as do models
    whose tessellation raises or fails the watertight check.
    """
    if not models:
        return 0.0
    bad = 0
    for m in models:
        if m is None:
            bad += 1
            continue
        try:
            if not is_watertight(tessellate(m)):
                bad += 1
        except CrossCadError:
            bad += 1
    return bad / len(models)


# --------------------------------------------------------------------------
# report plumbing


def evaluate_pair(reference: CadModel, candidate: CadModel, n: int = CD_SAMPLES,
                  m: int = ECD_SAMPLES, res: int = 64, seed: int = 0) -> EvalReport:
    """CD/ECD/IoU/validity for one (ground truth, reconstruction) pair."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    mesh_ref = tessellate(reference)
    try:
        mesh_cand = tessellate(candidate)
        valid = is_watertight(mesh_cand)
    except CrossCadError:
        mesh_cand = None
        valid = False
    timings["tessellate"] = time.perf_counter() - t0

    if mesh_cand is None:
        return EvalReport(cd=float("inf"), ecd=float("inf"), iou=0.0,
                          valid=False, timings=timings)
    t0 = time.perf_counter()
    cd = chamfer_distance(mesh_ref, mesh_cand, n=n, seed=seed)
    timings["cd"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        ecd = edge_chamfer_distance(reference, candidate, m=m)
    except NoEdges:
        ecd = float("inf")
    timings["ecd"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        iou_val = iou(reference, candidate, res=res)
    except EmptyOccupancy:
        iou_val = 0.0
    timings["iou"] = time.perf_counter() - t0
    return EvalReport(cd=cd, ecd=ecd, iou=iou_val, valid=valid, timings=timings)


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Corpus summary: median CD, mean IoU, invalidity ratio, median ECD."""
    if not reports:
        return {"median_cd": float("nan"), "mean_iou": float("nan"),
                "invalidity": float("nan"), "median_ecd": float("nan")}
    valid = [r for r in reports if r.valid and np.isfinite(r.cd)]
    cds = [r.cd for r in valid]
    ecds = [r.ecd for r in valid if np.isfinite(r.ecd)]
    ious = [r.iou for r in valid]
    return {
        "median_cd": float(np.median(cds)) if cds else float("inf"),
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
        "invalidity": 1.0 - len(valid) / len(reports),
        "median_ecd": float(np.median(ecds)) if ecds else float("inf"),
    }
