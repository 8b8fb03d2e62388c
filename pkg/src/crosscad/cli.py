"""Command-line front end: generate corpora, run pipeline stages, evaluate.

Exit codes: 0 success, 1 input/domain error (unreadable mesh, empty slice,
solver failure surfaced as an error), 2 reconstruction produced an invalid
(non-watertight / untessellatable) model.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .cad_model import (CadModel, CadStep, is_watertight, load_model,
                        save_model, tessellate)
from .constraints import (ConstrainedSketch, infer_constraints,
                          sketch_from_json, sketch_to_json, solve)
from .datagen import (DEFAULT_EXTRUDE_H, CorpusEntry, GenConfig, build_corpus,
                      sketch_solid)
from .errors import CrossCadError, NonConvergence
from .extrude import NEW, ExtrusionSpec, optimize_lengths, sample_anchors
from .geometry import Mesh, load_mesh, save_mesh
from .metrics import aggregate_reports, chamfer_distance, evaluate_pair
from .pipeline import PipelineConfig, reconstruct
from .plane_detect import save_planes, score_slices
from .raster import render_sketch, save_pgm
from .sketch_fit import anchor_point, fit_primitives
from .slicer import Loop3D, make_slices

log = logging.getLogger("crosscad")


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fail(exc: Exception) -> None:
    click.echo(f"error [{type(exc).__name__}]: {exc}", err=True)
    sys.exit(1)

_INPUT_ERRORS = (CrossCadError, OSError, json.JSONDecodeError, ValueError)


def _set_config(cfg: PipelineConfig, key: str, raw: str) -> None:
    """Set ``section.key`` on the config, rebuilding frozen sub-configs."""
    import dataclasses

    chain = [cfg]
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not hasattr(chain[-1], part):
            raise click.UsageError(f"unknown config section {part!r}")
        chain.append(getattr(chain[-1], part))
    leaf = parts[-1]
    if not hasattr(chain[-1], leaf):
        raise click.UsageError(f"unknown config key {key!r}")
    current = getattr(chain[-1], leaf)
    if isinstance(current, bool):
        value: object = raw.strip().lower() in ("1", "true", "yes", "on")
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    else:
        value = raw
    # walk back up, replacing frozen dataclasses along the way
    for i in range(len(parts) - 1, -1, -1):
        try:
            setattr(chain[i], parts[i], value)
            return
        except dataclasses.FrozenInstanceError:
            value = dataclasses.replace(chain[i], **{parts[i]: value})
    raise click.UsageError(f"cannot set config key {key!r}")


def _apply_overrides(cfg: PipelineConfig, pairs: tuple[str, ...]) -> PipelineConfig:
    """Apply ``section.key=value`` overrides onto the config dataclasses."""
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--config expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        _set_config(cfg, key, raw)
    return cfg


@click.group()
@click.version_option(version=__version__, prog_name="crosscad")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int) -> None:
    """Reverse engineer triangle meshes into parametric sketch-extrude models."""
    _setup_logging(verbose)


# --------------------------------------------------------------------------
# gen


def _entry_id(i: int) -> str:
    return f"{i:04d}"


@main.command("gen")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--count", default=10, show_default=True, help="Corpus size.")
@click.option("--seed", default=0, show_default=True)
@click.option("--max-primitives", default=8, show_default=True)
@click.option("--arc-weight", default=0.5, show_default=True)
@click.option("--h", "height", default=DEFAULT_EXTRUDE_H, show_default=True)
@click.option("--displace/--no-displace", default=False, show_default=True,
              help="Record a random anchor displacement per entry.")
def cmd_gen(out_dir: str, count: int, seed: int, max_primitives: int,
            arc_weight: float, height: float, displace: bool) -> None:
    """Generate a synthetic ground-truth corpus (sketch + solid + render)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = GenConfig(max_primitives=max_primitives, arc_weight=arc_weight,
                        seed=seed)
        entries = build_corpus(count, cfg, h=height, displace=displace)
    except _INPUT_ERRORS as exc:
        _fail(exc)
    manifest = {"config": {"count": count, "seed": seed,
                           "max_primitives": max_primitives,
                           "arc_weight": arc_weight, "h": height,
                           "displace": displace},
                "entries": []}
    for i, entry in enumerate(entries):
        eid = _entry_id(i)
        sketch_path = out / f"{eid}.sketch.json"
        model_path = out / f"{eid}.model.json"
        mesh_path = out / f"{eid}.obj"
        image_path = out / f"{eid}.pgm"
        sketch_path.write_text(json.dumps(sketch_to_json(entry.sketch), indent=1) + "\n")
        save_model(_entry_model(entry), str(model_path))
        save_mesh(entry.solid, mesh_path)
        save_pgm(render_sketch(entry.sketch, size=128), image_path)
        manifest["entries"].append({
            "id": eid, "sketch": sketch_path.name, "model": model_path.name,
            "mesh": mesh_path.name, "image": image_path.name, "h": entry.h,
            "displacement": list(entry.displacement) if entry.displacement else None,
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    click.echo(f"wrote {count} entries to {out}")


def _entry_model(entry: CorpusEntry) -> CadModel:
    from .geometry import Plane

    plane = Plane(origin=np.zeros(3), normal=np.array([0.0, 0.0, 1.0]))
    spec = ExtrusionSpec(plane=plane, type=NEW,
                         direction=np.array([0.0, 0.0, 1.0]),
                         length=float(entry.h), anchors=np.zeros((0, 3)),
                         axis=2, source=(2, 0, 0))
    return CadModel(steps=[CadStep(sketch=entry.sketch, extrusion=spec)],
                    provenance={"mesh": "datagen", "config": "corpus"})


# --------------------------------------------------------------------------
# stage commands


@main.command("slice")
@click.argument("mesh_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--planes", "n_per_axis", default=40, show_default=True)
def cmd_slice(mesh_path: str, out_path: str, n_per_axis: int) -> None:
    """Slice a mesh into cross-section loops (normalized frame)."""
    from .slicer import save_slices

    try:
        mesh, _ = load_mesh(mesh_path)
        records = make_slices(mesh, n_per_axis=n_per_axis)
        save_slices(records, out_path)
    except _INPUT_ERRORS as exc:
        _fail(exc)
    click.echo(f"wrote {sum(len(r.loops2d) for r in records)} loops "
               f"across {len(records)} slices to {out_path}")


@main.command("detect")
@click.argument("mesh_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--planes", "n_per_axis", default=40, show_default=True)
def cmd_detect(mesh_path: str, out_path: str, n_per_axis: int) -> None:
    """Score slicing planes and mark detected key planes."""
    try:
        mesh, _ = load_mesh(mesh_path)
        records = make_slices(mesh, n_per_axis=n_per_axis)
        scores = score_slices(records)
        save_planes(out_path, records, scores)
    except _INPUT_ERRORS as exc:
        _fail(exc)
    n_keys = sum(1 for s in scores if s.is_key)
    click.echo(f"{n_keys} key planes of {len(scores)} scored; wrote {out_path}")


@main.command("fit")
@click.argument("mesh_path", type=click.Path(dir_okay=False))
@click.option("--axis", type=click.IntRange(0, 2), required=True)
@click.option("--index", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--planes", "n_per_axis", default=40, show_default=True)
def cmd_fit(mesh_path: str, axis: int, index: int, out_path: str,
            n_per_axis: int) -> None:
    """Fit constrained sketches to one slice's loops."""
    try:
        mesh, _ = load_mesh(mesh_path)
        records = make_slices(mesh, n_per_axis=n_per_axis)
        rec = next((r for r in records if r.axis == axis and r.index == index), None)
        if rec is None or not rec.loops2d:
            raise CrossCadError(f"slice (axis={axis}, index={index}) has no loops")
        out = []
        for loop in rec.loops2d:
            prims, report = fit_primitives(loop)
            sketch = ConstrainedSketch(primitives=prims,
                                       constraints=infer_constraints(prims))
            out.append({"source": list(loop.source),
                        "max_residual": report.max_residual,
                        "sketch": sketch_to_json(sketch)})
    except _INPUT_ERRORS as exc:
        _fail(exc)
    Path(out_path).write_text(json.dumps({"sketches": out}, indent=1) + "\n")
    click.echo(f"fitted {len(out)} loops to {out_path}")


@main.command("optimize")
@click.argument("mesh_path", type=click.Path(dir_okay=False))
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
def cmd_optimize(mesh_path: str, model_path: str, out_path: str, seed: int) -> None:
    """Re-optimize a model's extrusion lengths against a mesh."""
    from .cad_model import step_polygon
    from .extrude import OptConfig
    from .slicer import lift_from_plane

    try:
        mesh_n, bt = load_mesh(mesh_path)
        mesh = Mesh(vertices=bt.to_original(mesh_n.vertices), faces=mesh_n.faces)
        model = load_model(model_path)
        specs = []
        for step in model.steps:
            ex = step.extrusion
            poly = step_polygon(step)
            ring = lift_from_plane(poly, ex.axis, float(ex.plane.offset))
            specs.append(ExtrusionSpec(
                plane=ex.plane, type=ex.type, direction=ex.direction,
                length=float(ex.length),
                anchors=sample_anchors(Loop3D(points=ring), 8),
                axis=ex.axis, footprint=poly, source=ex.source))
        cfg = OptConfig(seed=seed)
        specs = optimize_lengths(mesh, specs, cfg)
        for step, spec in zip(model.steps, specs):
            step.extrusion.length = float(spec.length)
        save_model(model, out_path)
    except _INPUT_ERRORS as exc:
        _fail(exc)
    lengths = [round(float(s.length), 6) for s in specs if s.type == NEW]
    click.echo(f"optimized lengths {lengths}; wrote {out_path}")


# --------------------------------------------------------------------------
# reconstruct


@main.command("reconstruct")
@click.argument("mesh_path", type=click.Path(dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--config", "overrides", multiple=True,
              help="Override config values, e.g. --config fit.corner_angle_deg=30.")
def cmd_reconstruct(mesh_path: str, out_dir: str, seed: int,
                    overrides: tuple[str, ...]) -> None:
    """Full pipeline: mesh in, parametric model + artifacts out."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(seed=seed)
    _set_config(cfg, "opt.seed", str(seed))
    _apply_overrides(cfg, overrides)
    try:
        mesh, bt = load_mesh(mesh_path)
        result = reconstruct(mesh, transform=bt, config=cfg,
                             mesh_id=Path(mesh_path).name)
    except _INPUT_ERRORS as exc:
        _fail(exc)

    save_model(result.model, str(out / "model.json"))
    save_planes(out / "planes.json", result.slices, result.scores)
    sketch_dir = out / "sketches"
    sketch_dir.mkdir(exist_ok=True)
    for i, sketch in enumerate(result.sketches):
        src = result.model.steps[i].source if i < len(result.model.steps) else (0, 0, i)
        stem = f"{src[0]}_{src[1]:02d}_{src[2]:02d}"
        (sketch_dir / f"{stem}.sketch.json").write_text(
            json.dumps(sketch_to_json(sketch), indent=1) + "\n")
        save_pgm(render_sketch(sketch, size=cfg.image_size),
                 sketch_dir / f"{stem}.pgm")

    valid = True
    failure = ""
    try:
        recon = tessellate(result.model)
        save_mesh(recon, out / "recon.obj")
        valid = is_watertight(recon)
        if not valid:
            failure = "tessellation is not watertight"
    except CrossCadError as exc:
        valid = False
        failure = f"{type(exc).__name__}: {exc}"

    report = {
        "input": Path(mesh_path).name,
        "config": cfg.digest(),
        "steps": len(result.model.steps),
        "key_planes": sorted([s.axis, s.index] for s in result.scores if s.is_key),
        "valid": valid,
        "failure": failure,
        "warnings": result.warnings,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    (out / "timings.json").write_text(json.dumps(
        {k: round(v, 4) for k, v in result.timings.items()}, indent=1) + "\n")
    click.echo(f"reconstructed {len(result.model.steps)} steps -> {out} "
               f"(valid={valid})")
    if not valid:
        sys.exit(2)


# --------------------------------------------------------------------------
# eval


def _eval_one(args: tuple[str, str, str, int]) -> tuple[str, dict]:
    eid, gt_path, recon_path, seed = args
    try:
        gt = load_model(gt_path)
        cand = load_model(recon_path)
        rep = evaluate_pair(gt, cand, seed=seed)
        return eid, {"cd": rep.cd, "ecd": rep.ecd, "iou": rep.iou,
                     "valid": rep.valid}
    except (CrossCadError, OSError) as exc:
        log.warning("eval %s failed: %s", eid, exc)
        return eid, {"cd": float("inf"), "ecd": float("inf"), "iou": 0.0,
                     "valid": False}


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--recon-dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True)
def cmd_eval(manifest_path: str, recon_dir: str, out_path: str, seed: int,
             jobs: int) -> None:
    """Score reconstructions against ground truth; write eval.csv."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except _INPUT_ERRORS as exc:
        _fail(exc)
    base = Path(manifest_path).parent
    tasks = []
    for entry in manifest.get("entries", []):
        eid = entry["id"]
        gt = str(base / entry["model"])
        recon = str(Path(recon_dir) / eid / "model.json")
        tasks.append((eid, gt, recon, seed))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_one, tasks))
    else:
        results = [_eval_one(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    from .metrics import EvalReport
    reports = [EvalReport(cd=r["cd"], ecd=r["ecd"], iou=r["iou"], valid=r["valid"])
               for _, r in results]
    agg = aggregate_reports(reports)

    def fmt(x: float) -> str:
        return "inf" if not np.isfinite(x) else f"{x:.6f}"

    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cd_x1000", "ecd_x1000", "iou", "valid"])
        for eid, r in results:
            writer.writerow([eid, fmt(r["cd"] * 1e3), fmt(r["ecd"] * 1e3),
                             fmt(r["iou"]), int(r["valid"])])
        writer.writerow(["aggregate", fmt(agg["median_cd"] * 1e3),
                         fmt(agg["median_ecd"] * 1e3), fmt(agg["mean_iou"]),
                         fmt(agg["invalidity"])])
    click.echo(f"evaluated {len(results)} pairs -> {out_path} "
               f"(median cd x1000 = {fmt(agg['median_cd'] * 1e3)})")


# --------------------------------------------------------------------------
# displacement experiment


def _nearest_anchor(sketch: ConstrainedSketch, target: np.ndarray
                    ) -> tuple[int, str]:
    best = (0, "start")
    best_d = np.inf
    for i, prim in enumerate(sketch.primitives):
        names = ["center"] if prim.kind == "circle" else ["start", "mid", "end"]
        for name in names:
            d = float(np.linalg.norm(np.asarray(anchor_point(prim, name)) - target))
            if d < best_d:
                best_d = d
                best = (i, name)
    return best


def _displaced_solid(sketch: ConstrainedSketch, pin: tuple[int, str, tuple[float, float]],
                     h: float, strip: bool) -> tuple[Mesh | None, bool]:
    work = ConstrainedSketch(primitives=list(sketch.primitives),
                             constraints=[] if strip else list(sketch.constraints))
    try:
        solved = solve(work, pinned=[pin])
    except NonConvergence:
        return None, False
    except CrossCadError:
        return None, False
    try:
        return sketch_solid(solved, h), True
    except CrossCadError:
        return None, True


@main.command("displace")
@click.option("--corpus", "manifest_path", required=True,
              type=click.Path(dir_okay=False),
              help="manifest.json of a corpus generated with --displace.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
def cmd_displace(manifest_path: str, out_path: str, seed: int) -> None:
    """Displacement experiment: constrained vs constraint-stripped re-solve."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except _INPUT_ERRORS as exc:
        _fail(exc)
    base = Path(manifest_path).parent
    rows = []
    for entry in manifest.get("entries", []):
        disp = entry.get("displacement")
        if disp is None:
            continue
        eid = entry["id"]
        gt_sketch = sketch_from_json(
            json.loads((base / entry["sketch"]).read_text()))
        h = float(entry["h"])
        pi, anchor, dx, dy = int(disp[0]), str(disp[1]), float(disp[2]), float(disp[3])
        origin = np.asarray(anchor_point(gt_sketch.primitives[pi], anchor))
        target = origin + (dx, dy)

        gt_solid, _ = _displaced_solid(
            gt_sketch, (pi, anchor, (float(target[0]), float(target[1]))), h,
            strip=False)
        if gt_solid is None:
            rows.append([eid, "inf", "inf", 0, 0])
            continue

        # reconstruct the sketch from the undisplaced solid, then displace the
        # nearest predicted anchor by the same vector
        try:
            mesh_n, bt = load_mesh(str(base / entry["mesh"]))
            result = reconstruct(mesh_n, transform=bt,
                                 config=PipelineConfig(seed=seed), mesh_id=eid)
            pred_step = next(s for s in result.model.steps
                             if s.extrusion.type == NEW)
            pred_sketch = pred_step.sketch
            pred_h = float(pred_step.extrusion.length)
        except (CrossCadError, StopIteration) as exc:
            log.warning("displace %s: reconstruction failed: %s", eid, exc)
            rows.append([eid, "inf", "inf", 0, 0])
            continue

        pj, pname = _nearest_anchor(pred_sketch, origin)
        ptarget = np.asarray(anchor_point(pred_sketch.primitives[pj], pname)) + (dx, dy)
        pin = (pj, pname, (float(ptarget[0]), float(ptarget[1])))

        solid_c, conv_c = _displaced_solid(pred_sketch, pin, pred_h, strip=False)
        solid_s, conv_s = _displaced_solid(pred_sketch, pin, pred_h, strip=True)
        cd_c = (chamfer_distance(gt_solid, solid_c, seed=seed)
                if solid_c is not None else float("inf"))
        cd_s = (chamfer_distance(gt_solid, solid_s, seed=seed)
                if solid_s is not None else float("inf"))
        rows.append([eid, f"{cd_c:.8f}" if np.isfinite(cd_c) else "inf",
                     f"{cd_s:.8f}" if np.isfinite(cd_s) else "inf",
                     int(conv_c), int(conv_s)])

    finite_c = [float(r[1]) for r in rows if r[1] != "inf"]
    finite_s = [float(r[2]) for r in rows if r[2] != "inf"]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cd_constrained", "cd_stripped",
                         "converged_constrained", "converged_stripped"])
        writer.writerows(rows)
        writer.writerow(["aggregate",
                         f"{np.median(finite_c):.8f}" if finite_c else "inf",
                         f"{np.median(finite_s):.8f}" if finite_s else "inf",
                         sum(r[3] for r in rows), sum(r[4] for r in rows)])
    click.echo(f"displacement experiment over {len(rows)} entries -> {out_path}")


if __name__ == "__main__":
    main()
