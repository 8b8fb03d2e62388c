"""Assembled CAD models: ordered sketch-extrude steps, tessellation, voxel CSG.

A model is a sequence of steps, each pairing a constrained sketch (stored in
the plane's local 2D frame, in mesh coordinates) with an extrusion.  Steps
are ordered by (axis, slice index, loop ordinal) so containing profiles come
before the holes cut into them.  ``tessellate`` turns new steps into closed
prisms, subtracting same-plane cut profiles as polygon holes; cross-plane
cuts only participate in the voxel evaluation (``voxelize``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstrainedSketch, sketch_from_json, sketch_to_json
from .errors import IndexMismatch, NoSteps, SchemaError
from .extrude import CUT, NEW, ExtrusionSpec, build_nesting
from .geometry import Mesh, Plane, points_in_polygon
from .sketch_fit import Arc, Circle, Line, Primitive, sketch_to_loop
from .slicer import Loop2D, NormRecord, SliceRecord, axis_frame, lift_from_plane
from .triangulate import clean_ring, polygon_area, triangulate_polygon

log = logging.getLogger(__name__)

VOXEL_RES = 64
CIRCLE_SEGMENTS = 64


@dataclass
class CadStep:
    """One sketch-extrude operation, plane-local sketch in mesh units."""

    sketch: ConstrainedSketch
    extrusion: ExtrusionSpec
    norm: NormRecord | None = None

    @property
    def source(self) -> tuple[int, int, int]:
        src = self.extrusion.source
        return (-1, -1, -1) if src is None else src


@dataclass
class CadModel:
    steps: list[CadStep] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def new_steps(self) -> list[CadStep]:
        return [s for s in self.steps if s.extrusion.type == NEW]

    def cut_steps(self) -> list[CadStep]:
        return [s for s in self.steps if s.extrusion.type == CUT]


@dataclass
class VoxelGrid:
    """Boolean occupancy over a bbox, ``res``^3 cells, centers sampled."""

    occupancy: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    res: int

    def count(self) -> int:
        return int(self.occupancy.sum())

    def fraction(self) -> float:
        return self.count() / float(self.res ** 3)


# --------------------------------------------------------------------------
# assembly


def _map_primitive(prim: Primitive, fn) -> Primitive:
    """Rebuild a primitive with every 2D point passed through ``fn``."""
    if prim.kind == "line":
        return Line(start=fn(prim.start), end=fn(prim.end))
    if prim.kind == "arc":
        return Arc(start=fn(prim.start), mid=fn(prim.mid), end=fn(prim.end))
    c0 = np.asarray(prim.center, dtype=np.float64)
    c1 = fn(prim.center)
    # uniform maps only: recover the scale from a probe point on the circle
    probe = fn(c0 + (prim.radius, 0.0))
    r1 = float(np.hypot(probe[0] - c1[0], probe[1] - c1[1]))
    return Circle(center=c1, radius=r1)


def _denormalize_sketch(sketch: ConstrainedSketch, norm: NormRecord) -> ConstrainedSketch:
    def fn(p):
        q = norm.invert(np.asarray(p, dtype=np.float64).reshape(1, 2))[0]
        return (float(q[0]), float(q[1]))

    prims = [_map_primitive(p, fn) for p in sketch.primitives]
    return ConstrainedSketch(primitives=prims, constraints=list(sketch.constraints))


def assemble(slices: list[SliceRecord], sketches: list[ConstrainedSketch],
             specs: list[ExtrusionSpec], provenance: dict | None = None) -> CadModel:
    """Combine per-loop sketches and extrusions into an ordered model.

    ``sketches`` and ``specs`` are parallel; each spec's ``source`` must name
    a slice in ``slices`` whose normalization record is used to map the
    sketch from the fitting frame back to plane-local mesh coordinates.
    """
    if len(sketches) != len(specs):
        raise IndexMismatch(
            f"{len(sketches)} sketches vs {len(specs)} extrusion specs")
    if not specs:
        raise NoSteps("no steps to assemble")
    by_key = {(rec.axis, rec.index): rec for rec in slices}
    steps = []
    for sk, spec in zip(sketches, specs):
        if spec.source is None:
            raise IndexMismatch("extrusion spec has no slice source")
        key = (spec.source[0], spec.source[1])
        rec = by_key.get(key)
        if rec is None:
            raise IndexMismatch(f"spec source {spec.source} matches no slice")
        if abs(spec.plane.offset - rec.plane.offset) > 1e-9 or spec.axis != rec.axis:
            raise IndexMismatch(
                f"spec plane for {spec.source} disagrees with its slice plane")
        steps.append(CadStep(sketch=_denormalize_sketch(sk, rec.norm),
                             extrusion=spec, norm=rec.norm))
    steps.sort(key=lambda st: st.source)
    return CadModel(steps=steps, provenance=dict(provenance or {}))


# --------------------------------------------------------------------------
# tessellation


def step_polygon(step: CadStep, circle_segments: int = CIRCLE_SEGMENTS) -> np.ndarray:
    """The step's profile as a closed polygon in the plane's 2D frame."""
    loop = sketch_to_loop(step.sketch.primitives, pts_per_prim=circle_segments,
                          strict=False)
    return np.asarray(loop.points, dtype=np.float64)


def _plane_groups(model: CadModel) -> list[list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, step in enumerate(model.steps):
        ex = step.extrusion
        key = (ex.axis, round(float(ex.plane.offset), 9))
        groups.setdefault(key, []).append(i)
    return [groups[k] for k in sorted(groups)]


def _prism_mesh(outer: np.ndarray, holes: list[np.ndarray], axis: int,
                offset: float, direction: np.ndarray, length: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Closed prism over a polygon-with-holes profile.

    Caps reuse the ring vertices referenced by the side walls, so every
    boundary edge lands in exactly one cap and one side triangle.
    """
    outer = clean_ring(outer)
    holes = [h for h in map(clean_ring, holes) if len(h) >= 3]
    outer = outer if polygon_area(outer) > 0 else outer[::-1]
    holes = [h if polygon_area(h) < 0 else h[::-1] for h in holes]
    verts2d, tris = triangulate_polygon(outer, holes)

    rings = [list(range(len(outer)))]
    base_i = len(outer)
    for h in holes:
        rings.append(list(range(base_i, base_i + len(h))))
        base_i += len(h)

    direction = np.asarray(direction, dtype=np.float64)
    sign = 1.0 if direction[axis] > 0 else -1.0
    base = lift_from_plane(verts2d, axis, offset)
    top = base + length * direction
    n = len(verts2d)
    vertices = np.vstack([base, top])

    faces = []
    for (a, b, c) in tris:
        if sign > 0:
            faces.append((a, c, b))              # start cap faces -direction
            faces.append((n + a, n + b, n + c))  # end cap faces +direction
        else:
            faces.append((a, b, c))
            faces.append((n + a, n + c, n + b))
    for ring in rings:
        m = len(ring)
        for k in range(m):
            i, j = ring[k], ring[(k + 1) % m]
            if sign > 0:
                faces.append((i, j, n + j))
                faces.append((i, n + j, n + i))
            else:
                faces.append((i, n + j, j))
                faces.append((i, n + i, n + j))
    return vertices, np.asarray(faces, dtype=np.int64)


def tessellate(model: CadModel, tol: float = 1e-9,
               circle_segments: int = CIRCLE_SEGMENTS) -> Mesh:
    """Triangle mesh of the model's new prisms minus same-plane hole profiles.

    Cut profiles on other planes do not carve the mesh (use ``voxelize`` for
    the full boolean evaluation); each emitted prism is watertight on its
    own, so the result is watertight per connected component.
    """
    if not model.steps:
        raise NoSteps("cannot tessellate an empty model")
    all_v: list[np.ndarray] = []
    all_f: list[np.ndarray] = []
    base = 0
    for group in _plane_groups(model):
        polys = {i: step_polygon(model.steps[i], circle_segments) for i in group}
        loops = [Loop2D(points=polys[i], source=model.steps[i].source) for i in group]
        tree = build_nesting(loops)
        for gi, i in enumerate(group):
            step = model.steps[i]
            if step.extrusion.type != NEW:
                continue
            holes = [polys[group[gj]] for gj in range(len(group))
                     if tree.parent[gj] == gi
                     and model.steps[group[gj]].extrusion.type == CUT]
            ex = step.extrusion
            if abs(polygon_area(polys[i])) <= 1e-12:
                log.debug("skipping zero-area profile for step %s", step.source)
                continue
            v, f = _prism_mesh(polys[i], holes, ex.axis, float(ex.plane.offset),
                               ex.direction, float(ex.length))
            keep = np.ptp(v, axis=0).max() > tol
            if not keep:
                log.debug("skipping degenerate prism for step %s", step.source)
                continue
            all_v.append(v)
            all_f.append(f + base)
            base += len(v)
    if not all_v:
        raise NoSteps("model has no new steps to tessellate")
    return Mesh(vertices=np.vstack(all_v), faces=np.vstack(all_f))


def is_watertight(mesh: Mesh) -> bool:
    """Every undirected edge in exactly two faces, once per direction."""
    directed: dict[tuple[int, int], int] = {}
    for (a, b, c) in mesh.faces:
        for e in ((a, b), (b, c), (c, a)):
            e = (int(e[0]), int(e[1]))
            directed[e] = directed.get(e, 0) + 1
    for (a, b), cnt in directed.items():
        if cnt != 1 or directed.get((b, a), 0) != 1:
            return False
    return True


def enclosed_volume(mesh: Mesh) -> float:
    """Signed volume via the divergence theorem (exact for closed meshes)."""
    v = mesh.vertices
    a = v[mesh.faces[:, 0]]
    b = v[mesh.faces[:, 1]]
    c = v[mesh.faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


# --------------------------------------------------------------------------
# voxel evaluation


def _model_bbox(model: CadModel) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for step in model.new_steps():
        ex = step.extrusion
        poly = step_polygon(step)
        base = lift_from_plane(poly, ex.axis, float(ex.plane.offset))
        top = base + float(ex.length) * np.asarray(ex.direction, dtype=np.float64)
        lo = np.minimum(lo, np.minimum(base.min(axis=0), top.min(axis=0)))
        hi = np.maximum(hi, np.maximum(base.max(axis=0), top.max(axis=0)))
    if not np.all(np.isfinite(lo)):
        raise NoSteps("model has no new steps to bound")
    return lo, hi


def _footprint_mask(poly: np.ndarray, axis: int, centers: list[np.ndarray],
                    res: int) -> np.ndarray:
    """3D mask of voxel centers whose in-plane projection is inside ``poly``."""
    ua, va = axis_frame(axis)
    uu, vv = np.meshgrid(centers[ua], centers[va], indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    inside2d = points_in_polygon(pts, poly).reshape(res, res)
    mask = np.zeros((res, res, res), dtype=bool)
    if axis == 2:
        mask[:, :, :] = inside2d[:, :, None]
    elif axis == 0:
        mask[:, :, :] = inside2d[None, :, :]
    else:  # axis == 1, frame axes (z, x)
        mask[:, :, :] = inside2d.T[:, None, :]
    return mask


def voxelize(model: CadModel, res: int = VOXEL_RES,
             bbox: tuple[np.ndarray, np.ndarray] | None = None) -> VoxelGrid:
    """Occupancy grid of the model under sequential boolean semantics.

    New steps OR their prism into the grid in step order; cut steps AND-NOT
    an infinite prism (their footprint swept across the whole bbox along the
    plane normal).  Membership is tested at voxel centers.
    """
    if not model.steps:
        raise NoSteps("cannot voxelize an empty model")
    if bbox is None:
        lo, hi = _model_bbox(model)
    else:
        lo = np.asarray(bbox[0], dtype=np.float64).reshape(3)
        hi = np.asarray(bbox[1], dtype=np.float64).reshape(3)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    centers = [lo[a] + (np.arange(res) + 0.5) * span[a] / res for a in range(3)]

    occ = np.zeros((res, res, res), dtype=bool)
    for step in model.steps:
        ex = step.extrusion
        poly = step_polygon(step)
        mask = _footprint_mask(poly, ex.axis, centers, res)
        if ex.type == NEW:
            o = float(ex.plane.offset)
            e = o + float(ex.length) * float(ex.direction[ex.axis])
            a_lo, a_hi = min(o, e), max(o, e)
            slab = (centers[ex.axis] >= a_lo) & (centers[ex.axis] <= a_hi)
            shape = [1, 1, 1]
            shape[ex.axis] = res
            occ |= mask & slab.reshape(shape)
        else:
            occ &= ~mask
    return VoxelGrid(occupancy=occ, lo=lo, hi=hi, res=res)


# --------------------------------------------------------------------------
# serialization


def _require(obj: dict, key: str, pointer: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing required key '{key}'", pointer=f"{pointer}/{key}")
    return obj[key]


def _vec3(obj, pointer: str) -> np.ndarray:
    if (not isinstance(obj, (list, tuple)) or len(obj) != 3
            or not all(isinstance(x, (int, float)) for x in obj)):
        raise SchemaError("expected a 3-vector of numbers", pointer=pointer)
    return np.asarray(obj, dtype=np.float64)


def step_to_json(step: CadStep) -> dict:
    ex = step.extrusion
    doc = {
        "plane": {"origin": [float(x) for x in ex.plane.origin],
                  "normal": [float(x) for x in ex.plane.normal]},
        "type": ex.type,
        "direction": [float(x) for x in ex.direction],
        "length": float(ex.length),
        "sketch": sketch_to_json(step.sketch),
    }
    if step.norm is not None:
        doc["norm"] = {"t_x": step.norm.t_x, "t_y": step.norm.t_y, "s": step.norm.s}
    if ex.source is not None:
        doc["source"] = list(ex.source)
    return doc


def step_from_json(doc: dict, pointer: str) -> CadStep:
    if not isinstance(doc, dict):
        raise SchemaError("step must be an object", pointer=pointer)
    plane_doc = _require(doc, "plane", pointer)
    origin = _vec3(_require(plane_doc, "origin", f"{pointer}/plane"),
                   f"{pointer}/plane/origin")
    normal = _vec3(_require(plane_doc, "normal", f"{pointer}/plane"),
                   f"{pointer}/plane/normal")
    step_type = _require(doc, "type", pointer)
    if step_type not in (NEW, CUT):
        raise SchemaError(f"unknown step type {step_type!r}", pointer=f"{pointer}/type")
    direction = _vec3(_require(doc, "direction", pointer), f"{pointer}/direction")
    length = _require(doc, "length", pointer)
    if not isinstance(length, (int, float)) or length < 0:
        raise SchemaError("length must be a non-negative number",
                          pointer=f"{pointer}/length")
    sketch = sketch_from_json(_require(doc, "sketch", pointer), f"{pointer}/sketch")
    norm = None
    if "norm" in doc:
        nd = doc["norm"]
        for k in ("t_x", "t_y", "s"):
            if not isinstance(nd, dict) or not isinstance(nd.get(k), (int, float)):
                raise SchemaError(f"norm record needs numeric '{k}'",
                                  pointer=f"{pointer}/norm")
        norm = NormRecord(t_x=float(nd["t_x"]), t_y=float(nd["t_y"]), s=float(nd["s"]))
    source = None
    if "source" in doc:
        src = doc["source"]
        if (not isinstance(src, list) or len(src) != 3
                or not all(isinstance(x, int) for x in src)):
            raise SchemaError("source must be [axis, index, ordinal] ints",
                              pointer=f"{pointer}/source")
        source = (src[0], src[1], src[2])
    plane = Plane(origin=origin, normal=normal)
    axis = int(np.argmax(np.abs(plane.normal)))
    spec = ExtrusionSpec(plane=plane, type=step_type, direction=direction,
                         length=float(length), anchors=np.zeros((0, 3)),
                         axis=axis, source=source)
    return CadStep(sketch=sketch, extrusion=spec, norm=norm)


def model_to_json(model: CadModel) -> dict:
    return {
        "provenance": dict(model.provenance),
        "steps": [step_to_json(s) for s in model.steps],
    }


def model_from_json(obj: dict) -> CadModel:
    if not isinstance(obj, dict):
        raise SchemaError("model document must be an object", pointer="/")
    if "steps" not in obj:
        raise SchemaError("missing required key 'steps'", pointer="/steps")
    steps_doc = obj["steps"]
    if not isinstance(steps_doc, list):
        raise SchemaError("steps must be an array", pointer="/steps")
    steps = [step_from_json(d, f"/steps/{i}") for i, d in enumerate(steps_doc)]
    prov = obj.get("provenance", {})
    if not isinstance(prov, dict):
        raise SchemaError("provenance must be an object", pointer="/provenance")
    return CadModel(steps=steps, provenance=dict(prov))


def save_model(model: CadModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> CadModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", pointer="/") from exc
    return model_from_json(obj)


# --------------------------------------------------------------------------
# frame transfer


def transform_model(model: CadModel, scale: float, translate: np.ndarray) -> CadModel:
    """Map a model built in normalized mesh coordinates back to input units.

    Applies ``p -> p / scale + translate`` to all 3D geometry; in-plane
    sketch coordinates shift by the frame components of ``translate`` and
    lengths divide by ``scale``.  Normalization records are recomposed so
    they still map the stored sketch back to the fitting frame.
    """
    translate = np.asarray(translate, dtype=np.float64).reshape(3)
    out_steps = []
    for step in model.steps:
        ex = step.extrusion
        ua, va = axis_frame(ex.axis)
        t2 = np.array([translate[ua], translate[va]])

        def fn(p, _t2=t2):
            q = np.asarray(p, dtype=np.float64) / scale + _t2
            return (float(q[0]), float(q[1]))

        sketch = ConstrainedSketch(
            primitives=[_map_primitive(p, fn) for p in step.sketch.primitives],
            constraints=list(step.sketch.constraints))
        plane = Plane(origin=np.asarray(ex.plane.origin) / scale + translate,
                      normal=np.asarray(ex.plane.normal).copy())
        anchors = (np.asarray(ex.anchors) / scale + translate
                   if ex.anchors is not None and len(ex.anchors) else ex.anchors)
        footprint = (np.asarray(ex.footprint) / scale + t2
                     if ex.footprint is not None else None)
        spec = ExtrusionSpec(plane=plane, type=ex.type, direction=ex.direction,
                             length=float(ex.length) / scale, anchors=anchors,
                             axis=ex.axis, footprint=footprint, source=ex.source)
        norm = step.norm
        if norm is not None:
            norm = NormRecord(t_x=t2[0] + norm.t_x / scale,
                              t_y=t2[1] + norm.t_y / scale,
                              s=norm.s * scale)
        out_steps.append(CadStep(sketch=sketch, extrusion=spec, norm=norm))
    return CadModel(steps=out_steps, provenance=dict(model.provenance))
