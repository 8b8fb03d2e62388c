"""Key sketch-plane detection among candidate slices, plus ground-truth labels.

The scorer is a profile-change heuristic: per axis, consecutive slices with
matching cross-section signatures form bands, and a band start is scored as
a key plane when it introduces a loop that the preceding slice did not have.
Loop-level matching keeps pure disappearances (the far cap of an extrusion)
from firing, which is what keeps precision usable on multi-body inputs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, NoSameAxisCandidate, SchemaError, ZeroExtent
from .geometry import Plane, points_in_polygon
from .slicer import SliceRecord, polygon_signed_area, project_to_plane

log = logging.getLogger(__name__)

AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True)
class DetectConfig:
    signature_res: int = 32
    hamming_tol: int = 2
    area_tol: float = 1e-3
    tau: float = 0.5
    #: bands shorter than this never fire; suppresses the one-slice bands of
    #: smoothly varying transverse cross-sections
    min_band_len: int = 2


@dataclass(frozen=True)
class PlaneScore:
    axis: int
    index: int
    score: float
    is_key: bool


@dataclass(frozen=True)
class ProfileSignature:
    loop_count: int
    total_area: float
    bitmask: np.ndarray  # (res, res) bool, even-odd fill of all loops


@dataclass
class PlaneLabels:
    labels: dict[tuple[int, int], int]
    canonical: list[Plane]


def _fill_mask(polys: list[np.ndarray], res: int) -> np.ndarray:
    """Even-odd occupancy of polygon(s) on a res x res grid over [0,1]^2."""
    centers = (np.arange(res) + 0.5) / res
    gx, gy = np.meshgrid(centers, centers)  # gy rows, gx cols
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = np.zeros(pts.shape[0], dtype=bool)
    for poly in polys:
        inside ^= points_in_polygon(pts, poly)
    return inside.reshape(res, res)


def _slice_profile(rec: SliceRecord, res: int) -> tuple[ProfileSignature, list[tuple[np.ndarray, float]]]:
    """Signature of one slice plus (mask, |area|) per loop, in raw plane coords."""
    polys = [project_to_plane(lp.points, rec.axis) for lp in rec.loops]
    per_loop = []
    for poly in polys:
        per_loop.append((_fill_mask([poly], res), abs(polygon_signed_area(poly))))
    combined = _fill_mask(polys, res)
    total = float(sum(a for _, a in per_loop))
    return ProfileSignature(loop_count=len(polys), total_area=total, bitmask=combined), per_loop


def _hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(a != b))


def score_slices(slices: list[SliceRecord], cfg: DetectConfig | None = None) -> list[PlaneScore]:
    """Heuristic key-plane scores: 1.0 at firing band starts, 0.0 elsewhere.

    A band is a maximal run of consecutive non-empty slices whose signatures
    agree (equal loop count, bitmask Hamming distance <= hamming_tol,
    |delta area| < area_tol).  A band fires when at least one of its first
    slice's loops has no match in the immediately preceding slice.
    """
    cfg = cfg or DetectConfig()
    scores: dict[tuple[int, int], float] = {(s.axis, s.index): 0.0 for s in slices}
    for axis in (0, 1, 2):
        recs = sorted((s for s in slices if s.axis == axis), key=lambda s: s.index)
        bands: list[tuple[int, int, bool]] = []  # (start index pos, length, fires)
        prev_sig: ProfileSignature | None = None
        prev_loops: list[tuple[np.ndarray, float]] = []
        prev_index: int | None = None
        cur_start: int | None = None
        cur_len = 0
        cur_fires = False

        def close() -> None:
            nonlocal cur_start, cur_len, cur_fires
            if cur_start is not None:
                bands.append((cur_start, cur_len, cur_fires))
            cur_start, cur_len, cur_fires = None, 0, False

        for rec in recs:
            sig, per_loop = _slice_profile(rec, cfg.signature_res)
            if sig.loop_count == 0:
                close()
                prev_sig, prev_loops, prev_index = None, [], rec.index
                continue
            contiguous = prev_index is not None and rec.index == prev_index + 1
            same_band = (
                contiguous
                and prev_sig is not None
                and sig.loop_count == prev_sig.loop_count
                and _hamming(sig.bitmask, prev_sig.bitmask) <= cfg.hamming_tol
                and abs(sig.total_area - prev_sig.total_area) < cfg.area_tol
            )
            if same_band:
                cur_len += 1
            else:
                close()
                unmatched = False
                for mask, area in per_loop:
                    hit = any(
                        _hamming(mask, pm) <= cfg.hamming_tol and abs(area - pa) < cfg.area_tol
                        for pm, pa in prev_loops
                    )
                    if not hit:
                        unmatched = True
                        break
                cur_start, cur_len, cur_fires = rec.index, 1, unmatched
            prev_sig, prev_loops, prev_index = sig, per_loop, rec.index
        close()
        for start, length, fires in bands:
            if fires and length >= cfg.min_band_len:
                scores[(axis, start)] = 1.0
        log.debug("axis %d: %d bands, %d keys", axis,
                  len(bands), sum(1 for s, l, f in bands if f and l >= cfg.min_band_len))
    return [
        PlaneScore(axis=s.axis, index=s.index, score=scores[(s.axis, s.index)],
                   is_key=scores[(s.axis, s.index)] >= cfg.tau)
        for s in slices
    ]


def canonicalize_extrusion_plane(o, n, e1: float, e2: float, extent_type: str) -> Plane:
    """Canonical (o*, n*) for an extrusion's sketch plane.

    The origin shifts by extent type (symmetric: o - e1 n, two-sided:
    o - e2 n, one-sided: unchanged); the normal becomes the normalized
    fwd-bwd connector flipped componentwise positive, and a flipped normal
    relocates the origin to the backward limit point.
    """
    o = np.asarray(o, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if extent_type == "symmetric":
        o_star = o - e1 * n
    elif extent_type == "two_sided":
        o_star = o - e2 * n
    elif extent_type == "one_sided":
        o_star = o.copy()
    else:
        raise ValueError(f"unknown extent_type {extent_type!r}")
    o_fwd = o + e1 * n
    o_bwd = o + e2 * n
    conn = o_fwd - o_bwd
    norm = np.linalg.norm(conn)
    if norm < 1e-12:
        raise ZeroExtent(f"extrusion extents e1={e1} e2={e2} collapse to a point")
    n_prime = conn / norm
    n_star = np.abs(n_prime)
    if not np.allclose(n_star, n_prime):
        o_star = o_bwd
    return Plane(origin=o_star, normal=n_star)


def _axis_of(normal: np.ndarray) -> int:
    normal = np.asarray(normal, dtype=np.float64)
    axis = int(np.argmax(np.abs(normal)))
    if abs(abs(normal[axis]) - 1.0) > 1e-9:
        raise NoSameAxisCandidate(f"plane normal {normal} is not axis-aligned")
    return axis


def assign_labels(canonical_planes: list[Plane], candidates: list[Plane]) -> PlaneLabels:
    """Mark, per canonical plane, the nearest same-axis candidate with label 1."""
    labels: dict[tuple[int, int], int] = {}
    per_axis: dict[int, list[int]] = {}
    for i, c in enumerate(candidates):
        axis = int(np.argmax(np.abs(c.normal)))
        labels[(axis, len(per_axis.setdefault(axis, [])))] = 0
        per_axis[axis].append(i)
    for plane in canonical_planes:
        axis = _axis_of(plane.normal)
        if axis not in per_axis:
            raise NoSameAxisCandidate(f"no candidate planes on axis {AXIS_NAMES[axis]}")
        best = None
        for pos, i in enumerate(per_axis[axis]):
            d = abs(candidates[i].offset - plane.offset)
            if best is None or d < best[0]:
                best = (d, pos)
        labels[(axis, best[1])] = 1
    return PlaneLabels(labels=labels, canonical=list(canonical_planes))


def detection_metrics(pred: list[PlaneScore], labels: PlaneLabels) -> tuple[float, float, float]:
    """Precision, recall, F1 over all candidates, with explicit 0/0 rules."""
    if len(pred) != len(labels.labels):
        raise LengthMismatch(f"{len(pred)} scores vs {len(labels.labels)} labels")
    tp = fp = fn = 0
    for s in pred:
        key = (s.axis, s.index)
        if key not in labels.labels:
            raise LengthMismatch(f"no label for axis={s.axis} index={s.index}")
        y = labels.labels[key]
        if s.is_key and y == 1:
            tp += 1
        elif s.is_key and y == 0:
            fp += 1
        elif not s.is_key and y == 1:
            fn += 1
    no_pred = (tp + fp) == 0
    no_true = (tp + fn) == 0
    precision = (1.0 if no_true else 0.0) if no_pred else tp / (tp + fp)
    recall = (1.0 if no_pred else 0.0) if no_true else tp / (tp + fn)
    f1 = (1.0 if (no_pred and no_true) else 0.0) if (2 * tp + fp + fn) == 0 else 2 * tp / (2 * tp + fp + fn)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# planes.json
# ---------------------------------------------------------------------------


def planes_to_json(slices: list[SliceRecord], scores: list[PlaneScore],
                   labels: PlaneLabels | None = None) -> dict:
    by_key = {(s.axis, s.index): s for s in scores}
    out = []
    for rec in slices:
        s = by_key[(rec.axis, rec.index)]
        entry = {
            "axis": rec.axis,
            "index": rec.index,
            "origin": [float(v) for v in rec.plane.origin],
            "normal": [float(v) for v in rec.plane.normal],
            "score": s.score,
            "is_key": bool(s.is_key),
        }
        if labels is not None:
            entry["label"] = int(labels.labels[(rec.axis, rec.index)])
        out.append(entry)
    return {"planes": out}


def save_planes(path: str | Path, slices: list[SliceRecord], scores: list[PlaneScore],
                labels: PlaneLabels | None = None) -> None:
    Path(path).write_text(json.dumps(planes_to_json(slices, scores, labels), indent=1))


def load_plane_scores(path: str | Path) -> list[PlaneScore]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or not isinstance(doc.get("planes"), list):
        raise SchemaError("missing planes array", pointer="/planes")
    out = []
    for i, entry in enumerate(doc["planes"]):
        ptr = f"/planes/{i}"
        if not isinstance(entry, dict):
            raise SchemaError("plane entry must be an object", pointer=ptr)
        try:
            out.append(PlaneScore(axis=int(entry["axis"]), index=int(entry["index"]),
                                  score=float(entry["score"]), is_key=bool(entry["is_key"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad plane entry: {exc}", pointer=ptr) from exc
    return out
