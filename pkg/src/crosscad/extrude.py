"""Extrusion typing by loop nesting and length recovery by gradient descent.

Each new-typed loop carries a learnable extrusion length ``h``.  The loss is
the mean squared distance from mesh surface samples to their nearest
extrusion segment ``[r, r + h v]`` plus an ``L2`` penalty on the lengths; its
gradient in ``h`` is analytic (only tip-clamped samples contribute).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CrossingLoops, NoSamples, NoSpecs
from .geometry import Mesh, Plane, points_in_polygon, sample_surface_points
from .slicer import Loop2D, Loop3D, project_to_plane

log = logging.getLogger(__name__)

NEW = "new"
CUT = "cut"


@dataclass
class NestingTree:
    parent: list[int | None]
    depth: list[int]


@dataclass
class ExtrusionSpec:
    plane: Plane
    type: str  # "new" | "cut"
    direction: np.ndarray  # unit vector, equals plane.normal
    length: float
    anchors: np.ndarray  # (n_r, 3)
    axis: int
    footprint: np.ndarray | None = None  # loop polygon in the plane's 2D frame
    source: tuple[int, int, int] | None = None  # (axis, slice index, loop ordinal)


@dataclass
class OptState:
    lengths: list[float]
    iterations: int
    loss: float
    lam: float
    lr: float
    loss_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class OptConfig:
    iters: int = 200
    lr: float = 2e-4
    lam: float = 1e-4
    n_samples: int = 4096
    n_anchors: int = 8
    grid_candidates: int = 32
    seed: int = 0
    loss_scope: str = "footprint"  # or "global"


# ---------------------------------------------------------------------------
# nesting
# ---------------------------------------------------------------------------


def _segments_cross(a: np.ndarray, b: np.ndarray) -> bool:
    """True when any edge of polygon a properly crosses an edge of polygon b."""
    a1 = a
    a2 = np.roll(a, -1, axis=0)
    b1 = b
    b2 = np.roll(b, -1, axis=0)

    def orient(p, q, r):
        return ((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    p = a1[:, None, :]
    q = a2[:, None, :]
    r = b1[None, :, :]
    s = b2[None, :, :]
    d1 = orient(p, q, r)
    d2 = orient(p, q, s)
    d3 = orient(r, s, p)
    d4 = orient(r, s, q)
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def build_nesting(loops: list[Loop2D]) -> NestingTree:
    """Containment forest: parent = smallest-area loop strictly containing it."""
    polys = [np.asarray(lp.points, dtype=np.float64) for lp in loops]
    n = len(polys)
    for i in range(n):
        for j in range(i + 1, n):
            if _segments_cross(polys[i], polys[j]):
                raise CrossingLoops(f"loop {i} crosses loop {j}")
    areas = [abs(lp.signed_area()) for lp in loops]
    parent: list[int | None] = [None] * n
    for i in range(n):
        best = None
        probe = polys[i][0]
        for j in range(n):
            if j == i:
                continue
            if points_in_polygon(probe[None, :], polys[j])[0]:
                if best is None or areas[j] < areas[best]:
                    best = j
        parent[i] = best
    depth = [0] * n
    for i in range(n):
        d, k = 0, parent[i]
        while k is not None:
            d += 1
            k = parent[k]
        depth[i] = d
    return NestingTree(parent=parent, depth=depth)


def assign_types(tree: NestingTree) -> list[str]:
    """Alternate new/cut with nesting depth, outermost = new."""
    return [NEW if d % 2 == 0 else CUT for d in tree.depth]


# ---------------------------------------------------------------------------
# anchors and loss
# ---------------------------------------------------------------------------


def sample_anchors(loop: Loop3D, n_r: int) -> np.ndarray:
    """n_r points equally spaced by arc length, starting at the first vertex."""
    if n_r < 1:
        raise ValueError("n_r must be >= 1")
    pts = np.asarray(loop.points, dtype=np.float64)
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return np.repeat(pts[:1], n_r, axis=0)
    targets = np.arange(n_r) * total / n_r
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return closed[idx] + frac[:, None] * (closed[idx + 1] - closed[idx])


def extrusion_vector(anchor: np.ndarray, h: float, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    anchor = np.asarray(anchor, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return anchor, anchor + h * v


def _stack_anchors(specs: list[ExtrusionSpec]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    anchors = np.vstack([s.anchors for s in specs])
    dirs = np.vstack([np.repeat(np.asarray(s.direction, dtype=np.float64)[None, :],
                                len(s.anchors), axis=0) for s in specs])
    owner = np.concatenate([np.full(len(s.anchors), j, dtype=np.int64)
                            for j, s in enumerate(specs)])
    return anchors, dirs, owner


class _LossEvaluator:
    """Loss/gradient in h with the h-independent geometry precomputed.

    For a unit direction v, |q - r - t v|^2 splits into a perpendicular part
    (independent of the clamp) plus (t_raw - t_clamped)^2, so each evaluation
    is a clip and an argmin over the anchor axis.
    """

    def __init__(self, mesh_samples: np.ndarray, specs: list[ExtrusionSpec], lam: float):
        if not specs:
            raise NoSpecs("no extrusion specs to optimize")
        q = np.asarray(mesh_samples, dtype=np.float64)
        if q.size == 0:
            raise NoSamples("no mesh samples")
        anchors, dirs, owner = _stack_anchors(specs)
        w = q[:, None, :] - anchors[None, :, :]           # (n, K, 3)
        self.t_raw = np.einsum("nkd,kd->nk", w, dirs)     # projections along v
        self.d2_perp = np.maximum(np.sum(w * w, axis=2) - self.t_raw**2, 0.0)
        self.owner = owner
        self.lam = lam
        self.n = q.shape[0]
        self._rows = np.arange(self.n)
        # anchors stack per spec in order, so each spec owns a column slice
        counts = np.concatenate([[0], np.cumsum([len(s.anchors) for s in specs])])
        self._col = [slice(int(a), int(b)) for a, b in zip(counts[:-1], counts[1:])]

    def min_d2_excluding(self, h: np.ndarray, j: int) -> np.ndarray:
        """Per-sample nearest squared distance over every spec but j."""
        h_per = h[self.owner]
        t_cl = np.clip(self.t_raw, 0.0, h_per[None, :])
        d2 = self.d2_perp + (self.t_raw - t_cl) ** 2
        d2[:, self._col[j]] = np.inf
        return d2.min(axis=1)

    def loss_with_column(self, j: int, cand: float, other_min: np.ndarray,
                         h_sq_others: float) -> float:
        """Loss when spec j takes length cand and the rest stay fixed."""
        sl = self._col[j]
        t = self.t_raw[:, sl]
        t_cl = np.clip(t, 0.0, cand)
        d2j = self.d2_perp[:, sl] + (t - t_cl) ** 2
        dmin = np.minimum(other_min, d2j.min(axis=1))
        return float(dmin.mean() + self.lam * (h_sq_others + cand * cand))

    def __call__(self, h: np.ndarray) -> tuple[float, np.ndarray]:
        h_per = h[self.owner]
        t_cl = np.clip(self.t_raw, 0.0, h_per[None, :])
        d2 = self.d2_perp + (self.t_raw - t_cl) ** 2
        nearest = np.argmin(d2, axis=1)
        loss = float(d2[self._rows, nearest].mean() + self.lam * np.sum(h * h))
        grad = 2.0 * self.lam * h
        t_sel = self.t_raw[self._rows, nearest]
        h_sel = h_per[nearest]
        tipped = t_sel >= h_sel
        if np.any(tipped):
            contrib = -2.0 * (t_sel[tipped] - h_sel[tipped]) / self.n
            np.add.at(grad, self.owner[nearest[tipped]], contrib)
        return loss, grad


def loss_and_grad(mesh_samples: np.ndarray, specs: list[ExtrusionSpec],
                  lam: float) -> tuple[float, np.ndarray]:
    """Mean nearest-segment squared distance + lam * sum(h^2), with d/dh.

    A sample's gradient flows into ``h_j`` only when its nearest extrusion
    vector belongs to spec ``j`` and the projection clamps at the tip; the
    contribution is ``-2 (q - r - h v) . v / n_M``.
    """
    evaluator = _LossEvaluator(mesh_samples, specs, lam)
    return evaluator(np.array([s.length for s in specs], dtype=np.float64))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def _scope_samples(samples: np.ndarray, specs: list[ExtrusionSpec]) -> np.ndarray:
    """Keep samples that project into at least one new-loop footprint."""
    keep = np.zeros(len(samples), dtype=bool)
    for s in specs:
        if s.footprint is None:
            return samples
        proj = project_to_plane(samples, s.axis)
        keep |= points_in_polygon(proj, s.footprint)
    if not np.any(keep):
        log.warning("footprint scope removed every sample; falling back to global scope")
        return samples
    return samples[keep]


def optimize_lengths(mesh: Mesh, specs: list[ExtrusionSpec],
                     cfg: OptConfig | None = None,
                     return_state: bool = False):
    """Recover extrusion lengths by grid init + adaptive-moment descent.

    Only new-typed specs carry lengths; cut specs pass through unchanged
    (they subtract as unbounded prisms downstream).
    """
    cfg = cfg or OptConfig()
    new_specs = [s for s in specs if s.type == NEW]
    if not new_specs:
        raise NoSpecs("no new-typed specs")
    samples = sample_surface_points(mesh, cfg.n_samples, seed=cfg.seed)
    if cfg.loss_scope == "footprint":
        samples = _scope_samples(samples, new_specs)

    lo, hi = mesh.bbox
    extent = hi - lo

    def with_lengths(hs: np.ndarray) -> list[ExtrusionSpec]:
        return [replace(s, length=float(max(v, 0.0))) for s, v in zip(new_specs, hs)]

    # sequential coarse grid init, one spec at a time with the others fixed
    h = np.zeros(len(new_specs), dtype=np.float64)
    for j, s in enumerate(new_specs):
        span = float(abs(np.dot(extent, np.asarray(s.direction, dtype=np.float64))))
        if span <= 0.0:
            span = float(np.max(extent))
        h[j] = span / cfg.grid_candidates
    evaluate = _LossEvaluator(samples, new_specs, cfg.lam)

    # coordinate descent on the grid: a later spec starting near zero can let
    # an earlier one swallow its samples, so sweep until the picks stabilize
    for _ in range(3):
        changed = False
        for j, s in enumerate(new_specs):
            span = float(abs(np.dot(extent, np.asarray(s.direction, dtype=np.float64))))
            if span <= 0.0:
                span = float(np.max(extent))
            other_min = evaluate.min_d2_excluding(h, j)
            h_sq_others = float(np.sum(h * h) - h[j] * h[j])
            best = (np.inf, h[j])
            for k in range(cfg.grid_candidates):
                cand = (k + 1) / cfg.grid_candidates * span
                val = evaluate.loss_with_column(j, cand, other_min, h_sq_others)
                if val < best[0]:
                    best = (val, cand)
            if best[1] != h[j]:
                changed = True
            h[j] = best[1]
        if not changed:
            break
    log.debug("grid init lengths: %s", h)

    m = np.zeros_like(h)
    v_adam = np.zeros_like(h)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    loss, grad = evaluate(h)
    history = [loss]
    it = 0
    for it in range(1, cfg.iters + 1):
        m = beta1 * m + (1 - beta1) * grad
        v_adam = beta2 * v_adam + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**it)
        v_hat = v_adam / (1 - beta2**it)
        delta = cfg.lr * m_hat / (np.sqrt(v_hat) + eps)
        scale = 1.0
        for _ in range(6):  # halve overshooting steps so loss stays monotone
            h_new = np.maximum(h - scale * delta, 0.0)
            loss_new, grad_new = evaluate(h_new)
            if loss_new <= loss:
                h, loss, grad = h_new, loss_new, grad_new
                break
            scale *= 0.5
        history.append(loss)
        if it >= 20 and history[-21] - loss <= 1e-14:
            break  # descent is monotone, so a flat window means converged
    out = []
    new_iter = iter(with_lengths(h))
    for s in specs:
        out.append(next(new_iter) if s.type == NEW else s)
    state = OptState(lengths=[float(x) for x in h], iterations=it, loss=loss,
                     lam=cfg.lam, lr=cfg.lr, loss_history=history)
    log.debug("optimized lengths %s loss %.3g", state.lengths, loss)
    if return_state:
        return out, state
    return out
