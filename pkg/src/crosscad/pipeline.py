"""End-to-end reconstruction: mesh -> slices -> key planes -> sketches ->
extrusion lengths -> assembled parametric model.

All stages run in the normalized unit-box frame; the assembled model is
mapped back through the input mesh's bbox transform at the end, so emitted
lengths and sketch coordinates are in the caller's original units.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cad_model import CadModel, assemble, transform_model
from .constraints import ConstrainedSketch, infer_constraints, solve
from .errors import (CrossCadError, DegenerateSlice, NonConvergence, NoSteps,
                     UnfittablePrimitive)
from .extrude import (ExtrusionSpec, assign_types, build_nesting,
                      optimize_lengths, sample_anchors)
from .geometry import BBoxTransform, Mesh
from .plane_detect import DetectConfig, PlaneScore, score_slices
from .sketch_fit import FitConfig, fit_primitives, sketch_to_loop
from .slicer import (Loop3D, SliceRecord, lift_from_plane, make_slices,
                     polygon_signed_area)
from .triangulate import ring_self_intersects
from .extrude import OptConfig

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Knobs for the full reconstruction run (defaults follow the library)."""

    n_per_axis: int = 40
    image_size: int = 128
    voxel_res: int = 64
    seed: int = 0
    solve_sketches: bool = True
    prune_planes: bool = True
    # slice cross-sections are exact mesh geometry; smoothing is for noisy
    # raster traces and only distorts them
    fit: FitConfig = field(default_factory=lambda: FitConfig(smooth=False))
    detect: DetectConfig = field(default_factory=DetectConfig)
    opt: OptConfig = field(default_factory=OptConfig)

    def describe(self) -> str:
        parts = [f"n_per_axis={self.n_per_axis}", f"image_size={self.image_size}",
                 f"voxel_res={self.voxel_res}", f"seed={self.seed}",
                 f"solve_sketches={self.solve_sketches}",
                 f"prune_planes={self.prune_planes}",
                 f"fit={self.fit!r}", f"detect={self.detect!r}", f"opt={self.opt!r}"]
        return "; ".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:12]


@dataclass
class PipelineResult:
    model: CadModel
    slices: list[SliceRecord]
    scores: list[PlaneScore]
    key_slices: list[SliceRecord]
    sketches: list[ConstrainedSketch]
    timings: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _key_records(slices: list[SliceRecord], scores: list[PlaneScore]
                 ) -> list[SliceRecord]:
    keys = {(s.axis, s.index) for s in scores if s.is_key}
    return [rec for rec in slices if (rec.axis, rec.index) in keys and rec.loops2d]


_PRUNE_SAMPLES = 2048
#: a removal is kept when the surface distance stays within this relative
#: slack; redundant slabs that hug the surface change it by far less, while
#: true structure blows it up by multiples
_PRUNE_SLACK = 0.02


def _prune_plane_groups(mesh: Mesh, key_slices: list[SliceRecord],
                        sketches: list[ConstrainedSketch],
                        specs: list[ExtrusionSpec], seed: int,
                        warnings: list[str]
                        ) -> tuple[list[ConstrainedSketch], list[ExtrusionSpec]]:
    """Greedy backward elimination of whole key-plane step groups.

    A smoothly varying cross-section occasionally passes the stability test,
    and its extrusion then bulges outside the input surface. Dropping a
    plane's steps is accepted only when it strictly lowers the symmetric
    surface distance between the assembled model and the mesh, so true
    structure (whose removal opens a coverage gap) is never discarded.
    """
    from .cad_model import tessellate
    from .geometry import sample_surface_points
    from .metrics import nearest_squared

    groups = sorted({(sp.source[0], sp.source[1]) for sp in specs})
    if len(groups) <= 1:
        return sketches, specs
    mesh_pts = sample_surface_points(mesh, _PRUNE_SAMPLES, seed=seed)

    def surface_cd(keep: set[tuple[int, int]]) -> float:
        idx = [i for i, sp in enumerate(specs)
               if (sp.source[0], sp.source[1]) in keep]
        if not any(specs[i].type == "new" for i in idx):
            return float("inf")
        try:
            model = assemble(key_slices, [sketches[i] for i in idx],
                             [specs[i] for i in idx])
            cand = tessellate(model, circle_segments=24)
            pts = sample_surface_points(cand, _PRUNE_SAMPLES, seed=seed)
        except CrossCadError:
            return float("inf")
        fwd = float(np.mean(nearest_squared(mesh_pts, pts)))
        bwd = float(np.mean(nearest_squared(pts, mesh_pts)))
        return 0.5 * (fwd + bwd)

    keep = set(groups)
    base = surface_cd(keep)
    while len(keep) > 1:
        trials = [(surface_cd(keep - {g}), g) for g in sorted(keep)]
        best_cd, best_g = min(trials)
        if not np.isfinite(best_cd):
            break
        if not best_cd <= base * (1.0 + _PRUNE_SLACK):
            break
        keep.discard(best_g)
        warnings.append(f"pruned plane (axis={best_g[0]}, index={best_g[1]}): "
                        f"surface distance {base:.3g} -> {best_cd:.3g}")
        base = best_cd
    if len(keep) < len(groups):
        idx = [i for i, sp in enumerate(specs)
               if (sp.source[0], sp.source[1]) in keep]
        sketches = [sketches[i] for i in idx]
        specs = [specs[i] for i in idx]
    return sketches, specs


def reconstruct(mesh: Mesh, transform: BBoxTransform | None = None,
                config: PipelineConfig | None = None,
                mesh_id: str = "") -> PipelineResult:
    """Reverse engineer a normalized mesh into a sketch-extrude model.

    ``mesh`` must already live in the unit-box frame (see ``load_mesh``);
    pass its ``transform`` to get the final model in original units.
    """
    cfg = config or PipelineConfig()
    timings: dict[str, float] = {}
    warnings: list[str] = []

    t0 = time.perf_counter()
    slices = make_slices(mesh, n_per_axis=cfg.n_per_axis)
    timings["slice"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores = score_slices(slices, cfg.detect)
    key_slices = _key_records(slices, scores)
    timings["detect"] = time.perf_counter() - t0
    if not key_slices:
        raise NoSteps("no key planes detected")

    t0 = time.perf_counter()
    sketches: list[ConstrainedSketch] = []
    specs: list[ExtrusionSpec] = []
    for rec in key_slices:
        tree = build_nesting(rec.loops2d)
        types = assign_types(tree)
        for loop, step_type in zip(rec.loops2d, types):
            foot = rec.norm.invert(loop.points)
            if abs(polygon_signed_area(foot)) < 1e-8:
                warnings.append(f"slice {loop.source}: degenerate profile skipped")
                continue
            try:
                prims, report = fit_primitives(loop, cfg.fit)
            except UnfittablePrimitive as exc:
                warnings.append(f"slice {loop.source}: {exc}")
                continue
            sketch = ConstrainedSketch(primitives=prims,
                                       constraints=infer_constraints(prims))
            if cfg.solve_sketches and sketch.constraints:
                try:
                    solved = solve(sketch)
                    ring = sketch_to_loop(solved.primitives, strict=False).points
                    if ring_self_intersects(ring):
                        warnings.append(f"solve {loop.source}: solution "
                                        "self-intersects, keeping raw fit")
                    else:
                        sketch = solved
                except (NonConvergence, CrossCadError) as exc:
                    warnings.append(f"solve {loop.source}: {exc}")
            # fitting or solving a sliver loop can collapse it completely
            fit_ring = rec.norm.invert(
                sketch_to_loop(sketch.primitives, strict=False).points)
            if abs(polygon_signed_area(fit_ring)) < 1e-8:
                warnings.append(f"slice {loop.source}: fitted profile is "
                                "degenerate, skipped")
                continue
            sketches.append(sketch)

            ring3d = lift_from_plane(foot, rec.axis, rec.plane.offset)
            direction = np.zeros(3)
            direction[rec.axis] = 1.0
            specs.append(ExtrusionSpec(
                plane=rec.plane, type=step_type, direction=direction,
                length=0.0, anchors=sample_anchors(Loop3D(points=ring3d),
                                                   cfg.opt.n_anchors),
                axis=rec.axis, footprint=foot, source=loop.source))
    timings["fit"] = time.perf_counter() - t0
    if not specs:
        raise NoSteps("no loops could be fitted on the key planes")

    t0 = time.perf_counter()
    specs = optimize_lengths(mesh, specs, cfg.opt)
    # same-plane cuts inherit their plane's largest new length (cosmetic:
    # cuts act as infinite prisms in the voxel evaluation regardless)
    by_plane: dict[tuple, float] = {}
    for sp in specs:
        if sp.type == "new":
            key = (sp.axis, round(float(sp.plane.offset), 9))
            by_plane[key] = max(by_plane.get(key, 0.0), float(sp.length))
    for sp in specs:
        if sp.type == "cut":
            sp.length = by_plane.get((sp.axis, round(float(sp.plane.offset), 9)), 0.0)
    timings["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cfg.prune_planes:
        sketches, specs = _prune_plane_groups(mesh, key_slices, sketches,
                                              specs, cfg.seed, warnings)
    timings["prune"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    provenance = {"mesh": mesh_id, "config": cfg.digest()}
    model = assemble(key_slices, sketches, specs, provenance=provenance)
    if transform is not None:
        model = transform_model(model, scale=transform.scale,
                                translate=transform.translate)
    timings["assemble"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())

    return PipelineResult(model=model, slices=slices, scores=scores,
                          key_slices=key_slices, sketches=sketches,
                          timings=timings, warnings=warnings)
