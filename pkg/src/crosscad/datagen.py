"""Synthetic training data: random constrained loop sketches, noisy renders,
and the extruded ground-truth corpus the evaluation suite runs against.

Loops start from a random star-shaped polygon (sorted angles around the
center, radii in [0.2, 0.5]); each edge becomes a line or an arc whose
midpoint is pushed outward by a fraction of the edge length.  Consecutive
primitives are chained with coincident constraints and the chain is closed
with a final one, so the constraint count always equals the primitive count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cad_model import CadModel, CadStep, tessellate
from .constraints import ConstrainedSketch, Constraint, solve
from .errors import CrossCadError
from .extrude import NEW, ExtrusionSpec
from .geometry import Mesh, Plane
from .raster import RasterImage, gaussian_blur, render_sketch, resize_nearest
from .sketch_fit import Arc, Circle, Line, Primitive
from .triangulate import polygon_area

log = logging.getLogger(__name__)

DEFAULT_EXTRUDE_H = 0.3
DISPLACEMENT_NORM = 0.05
NOISE_MAX_OFFSET = 2
SKETCH_BOX = (0.05, 0.95)


@dataclass
class GenConfig:
    max_primitives: int = 8
    arc_weight: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_primitives < 3:
            raise ValueError("max_primitives must be at least 3")
        if not 0.0 <= self.arc_weight <= 1.0:
            raise ValueError("arc_weight must be in [0, 1]")


@dataclass
class CorpusEntry:
    sketch: ConstrainedSketch
    h: float
    solid: Mesh
    # (primitive index, anchor name, dx, dy) for the displacement protocol
    displacement: tuple[int, str, float, float] | None = None


def _random_star_polygon(n: int, rng: np.random.Generator) -> np.ndarray:
    """Simple polygon: vertices at sorted angles, radii in [0.2, 0.5]."""
    angles = np.sort(rng.random(n) * 2.0 * np.pi)
    radii = rng.uniform(0.2, 0.5, n)
    pts = np.stack([0.5 + radii * np.cos(angles), 0.5 + radii * np.sin(angles)], axis=1)
    if polygon_area(pts) < 0:
        pts = pts[::-1]
    return pts


def _refit_points(prims: list[Primitive]) -> list[Primitive]:
    """Uniformly rescale the sketch so its bbox fills the render window."""
    from .cad_model import _map_primitive

    pts = []
    for p in prims:
        if p.kind == "line":
            pts += [p.start, p.end]
        elif p.kind == "arc":
            pts += [p.start, p.mid, p.end]
        else:
            c = np.asarray(p.center)
            pts += [tuple(c - p.radius), tuple(c + p.radius)]
    pts = np.asarray(pts, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent < 1e-12:
        return prims
    box_lo, box_hi = SKETCH_BOX
    s = (box_hi - box_lo) / extent
    center = (lo + hi) / 2.0
    target = (box_lo + box_hi) / 2.0

    def fn(p):
        q = (np.asarray(p, dtype=np.float64) - center) * s + target
        return (float(q[0]), float(q[1]))

    return [_map_primitive(p, fn) for p in prims]


def _chain_constraints(n_p: int, swapped: list[bool]) -> list[Constraint]:
    constraints = []
    for i in range(1, n_p):
        a = "start" if swapped[i - 1] else "end"
        b = "end" if swapped[i] else "start"
        constraints.append(Constraint(kind="coincident",
                                      refs=((i - 1, a), (i, b))))
    a = "start" if swapped[n_p - 1] else "end"
    b = "end" if swapped[0] else "start"
    constraints.append(Constraint(kind="coincident",
                                  refs=((n_p - 1, a), (0, b))))
    return constraints


def _loop_is_simple(prims: list[Primitive]) -> bool:
    from .sketch_fit import sketch_to_loop
    from .triangulate import ring_self_intersects

    pts = sketch_to_loop(prims, strict=False).points
    return not ring_self_intersects(pts)


def generate_random_loop_sketch(cfg: GenConfig,
                                rng: np.random.Generator | None = None
                                ) -> ConstrainedSketch:
    """Random closed loop of lines/arcs with chained coincident constraints.

    Per edge of a random polygon: a line with probability 1 - arc_weight,
    otherwise an arc bulged outward by delta ~ U(0.05, 0.15) of the edge
    length, with its direction reversed 20% of the time.  Arc bulges can
    cross a neighboring edge on cramped polygons, so draws repeat until the
    loop is simple (at most 10 tries, then the bare polygon is used).
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n_p = int(rng.integers(3, cfg.max_primitives + 1))

    poly = None
    for _ in range(10):
        poly = _random_star_polygon(n_p, rng)
        prims: list[Primitive] = []
        swapped: list[bool] = []
        for i in range(n_p):
            xs = poly[i]
            xe = poly[(i + 1) % n_p]
            if rng.random() > cfg.arc_weight:
                prims.append(Line(start=(float(xs[0]), float(xs[1])),
                                  end=(float(xe[0]), float(xe[1]))))
                swapped.append(False)
            else:
                xm = (xs + xe) / 2.0
                v = xe - xs
                delta = rng.uniform(0.05, 0.15)
                perp = np.array([v[1], -v[0]])  # outward for a CCW polygon
                xa = xm + delta * perp
                swap = rng.random() > 0.8
                if swap:
                    xs, xe = xe, xs
                prims.append(Arc(start=(float(xs[0]), float(xs[1])),
                                 mid=(float(xa[0]), float(xa[1])),
                                 end=(float(xe[0]), float(xe[1]))))
                swapped.append(swap)
        if _loop_is_simple(prims):
            return ConstrainedSketch(primitives=_refit_points(prims),
                                     constraints=_chain_constraints(n_p, swapped))

    log.warning("no simple arc loop after 10 tries; falling back to polygon edges")
    prims = [Line(start=(float(poly[i][0]), float(poly[i][1])),
                  end=(float(poly[(i + 1) % n_p][0]), float(poly[(i + 1) % n_p][1])))
             for i in range(n_p)]
    return ConstrainedSketch(primitives=_refit_points(prims),
                             constraints=_chain_constraints(n_p, [False] * n_p))


def add_noise_near_foreground(img: RasterImage, d: int = NOISE_MAX_OFFSET,
                              seed: int = 0,
                              rng: np.random.Generator | None = None
                              ) -> RasterImage:
    """Speckle up to 100 pixels near foreground strokes.

    Each point starts at a uniformly chosen foreground pixel, offset by
    independent integers in [-d, d] (clipped to bounds), and is written as
    pure black half the time, otherwise a gray value in [0, 20].
    An all-background image is returned unchanged.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    out = img.copy()
    rows, cols = np.nonzero(out.foreground_mask())
    if len(rows) == 0:
        return out
    h, w = out.pixels.shape
    n = int(rng.integers(0, 101))
    for _ in range(n):
        k = int(rng.integers(0, len(rows)))
        dx, dy = rng.integers(-d, d + 1, size=2)
        x = int(np.clip(cols[k] + dx, 0, w - 1))
        y = int(np.clip(rows[k] + dy, 0, h - 1))
        if rng.random() < 0.5:
            out.pixels[y, x] = 0
        else:
            out.pixels[y, x] = int(rng.integers(0, 21))
    return out


def render_with_noise(sketch: ConstrainedSketch, seed: int = 0,
                      is_hand_drawn: bool = False,
                      rng: np.random.Generator | None = None) -> RasterImage:
    """128x128 render with randomized resolution, speckle, and blur.

    Each augmentation fires independently with probability 0.2: render at a
    resolution drawn from {64, 128, 256} (then resized back), add speckle
    noise near the strokes, and blur with a kernel of size 2k+1, k in {3,5}.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    size = 128
    if rng.random() < 0.2:
        size = int(rng.choice([64, 128, 256]))
    img = render_sketch(sketch, size=size, is_hand_drawn=is_hand_drawn)
    img = resize_nearest(img, 128)
    if rng.random() < 0.2:
        img = add_noise_near_foreground(img, d=NOISE_MAX_OFFSET, rng=rng)
    if rng.random() < 0.2:
        k = int(rng.choice([3, 5]))
        img = gaussian_blur(img, 2 * k + 1)
    return img


def _sketch_anchor_names(prim: Primitive) -> list[str]:
    if prim.kind == "line":
        return ["start", "end"]
    if prim.kind == "arc":
        return ["start", "mid", "end"]
    return ["center"]


def sketch_solid(sketch: ConstrainedSketch, h: float = DEFAULT_EXTRUDE_H) -> Mesh:
    """Tessellated prism of the sketch extruded by ``h`` along +z."""
    plane = Plane(origin=np.zeros(3), normal=np.array([0.0, 0.0, 1.0]))
    spec = ExtrusionSpec(plane=plane, type=NEW, direction=np.array([0.0, 0.0, 1.0]),
                         length=float(h), anchors=np.zeros((0, 3)), axis=2,
                         source=(2, 0, 0))
    model = CadModel(steps=[CadStep(sketch=sketch, extrusion=spec)])
    return tessellate(model)


def build_corpus(n: int, cfg: GenConfig | None = None, h: float = DEFAULT_EXTRUDE_H,
                 displace: bool = False) -> list[CorpusEntry]:
    """``n`` ground-truth entries: sketch, extrusion height, tessellated solid.

    Entry ``i`` draws from ``default_rng([cfg.seed, i])``, so the corpus is
    deterministic per seed and any prefix is stable when ``n`` grows.  With
    ``displace`` each entry also records a random anchor displacement of
    norm 0.05 for the constraint-solve experiment.
    """
    if n < 1:
        raise ValueError("corpus size must be at least 1")
    cfg = cfg or GenConfig()
    entries = []
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, i])
        sketch = generate_random_loop_sketch(cfg, rng=rng)
        solid = sketch_solid(sketch, h)
        disp = _pick_displacement(sketch, rng) if displace else None
        entries.append(CorpusEntry(sketch=sketch, h=float(h), solid=solid,
                                   displacement=disp))
    return entries


def _pick_displacement(sketch: ConstrainedSketch, rng: np.random.Generator,
                       attempts: int = 20) -> tuple[int, str, float, float] | None:
    """Random anchor displacement whose solved profile stays a simple loop.

    Pulling an anchor on a cramped profile can drag an edge across its
    neighbor, so draws that leave no buildable ground truth are rejected and
    redrawn (bounded; the entry records no displacement if all draws fail).
    """
    from .sketch_fit import anchor_point, sketch_to_loop
    from .triangulate import ring_self_intersects

    for _ in range(attempts):
        pi = int(rng.integers(0, len(sketch.primitives)))
        names = _sketch_anchor_names(sketch.primitives[pi])
        anchor = names[int(rng.integers(0, len(names)))]
        theta = rng.random() * 2.0 * np.pi
        dx = float(DISPLACEMENT_NORM * np.cos(theta))
        dy = float(DISPLACEMENT_NORM * np.sin(theta))
        base = anchor_point(sketch.primitives[pi], anchor)
        try:
            solved = solve(sketch, pinned=[(pi, anchor,
                                            (base[0] + dx, base[1] + dy))])
            loop = sketch_to_loop(solved.primitives, strict=False)
        except CrossCadError:
            continue
        if not ring_self_intersects(loop.points):
            return (pi, anchor, dx, dy)
    log.warning("no realizable displacement found in %d draws", attempts)
    return None


def displacement_pins(entry: CorpusEntry) -> dict:
    """Pin map {(prim index, anchor): displaced target} for the solver."""
    from .sketch_fit import anchor_point

    if entry.displacement is None:
        raise ValueError("corpus entry has no displacement record")
    pi, anchor, dx, dy = entry.displacement
    base = anchor_point(entry.sketch.primitives[pi], anchor)
    return {(pi, anchor): np.asarray(base, dtype=np.float64) + (dx, dy)}
