"""Core geometric types, mesh I/O and sampling.

Meshes are plain vertex/face arrays.  On load every mesh is normalized to
the unit bounding box (uniform scale, centered) and the inverse transform
is returned so downstream results can be mapped back to the input frame.
All tolerances elsewhere in the package assume this normalized frame.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyMesh, ParseError

logger = logging.getLogger(__name__)

#: vertices closer than this (normalized units) are hash-merged on load
MERGE_TOL = 1e-7


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: ``vertices`` (n, 3) float64, ``faces`` (m, 3) int.

    Face indices are 0-based and must be in range; faces are triangles
    only (polygon faces are fan-triangulated by the readers).
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise EmptyMesh("mesh has no vertices")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.faces]


@dataclass(frozen=True)
class Plane:
    """Plane through ``origin`` with unit ``normal``."""

    origin: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if norm == 0.0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "normal", n / norm)

    @property
    def offset(self) -> float:
        """Signed offset of the plane along its normal."""
        return float(np.dot(self.origin, self.normal))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.normal - self.offset


@dataclass(frozen=True)
class BBoxTransform:
    """Uniform scale + translation mapping normalized coords back to input.

    ``to_original(p) = p / scale + translate`` and
    ``to_normalized(p) = (p - translate) * scale`` are exact inverses.
    """

    translate: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "translate", np.asarray(self.translate, dtype=np.float64).reshape(3))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def to_original(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.translate

    def to_normalized(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translate) * self.scale


def normalize_mesh(vertices: np.ndarray) -> tuple[np.ndarray, BBoxTransform]:
    """Fit vertices into the unit box (longest axis spans [0, 1], centered)."""
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise EmptyMesh("mesh has zero extent")
    scale = 1.0 / extent
    center = (lo + hi) / 2.0
    translate = center - 0.5 / scale
    out = (vertices - translate) * scale
    return out, BBoxTransform(translate=translate, scale=scale)


def merge_vertices(vertices: np.ndarray, faces: np.ndarray, tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Hash-merge duplicate vertices and drop degenerate faces.

    Vertices are snapped to a grid of pitch ``tol`` for the duplicate test,
    so exact duplicates (the common STL case) always merge.  Faces that end
    up with a repeated index or (near) zero area are removed.
    """
    if len(vertices) == 0:
        return vertices, faces
    keys = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    merged = vertices[first]
    faces = inverse[faces]
    # drop faces with repeated vertices
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[ok]
    if len(faces):
        tri = merged[faces]
        area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        degenerate = area2 < 1e-14
        if degenerate.any():
            logger.warning("dropping %d degenerate faces", int(degenerate.sum()))
        faces = faces[~degenerate]
    return merged, faces


# ---------------------------------------------------------------------------
# readers / writers


def _parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad vertex coordinate: {exc}") from exc
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: face needs at least 3 indices")
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ParseError(f"line {lineno}: bad face index {token!r}") from exc
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                idx.append(i)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
        # other records (vn, vt, o, g, s, usemtl ...) are ignored
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise ParseError("face index out of range")
    return v, f


def _parse_stl_ascii(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("vertex"):
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad vertex coordinate: {exc}") from exc
    if len(verts) % 3 != 0:
        raise ParseError("ascii STL vertex count not a multiple of 3")
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
    return v, f


def _parse_stl_binary(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < 84:
        raise ParseError("binary STL shorter than header")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise ParseError(f"binary STL truncated: {len(data)} < {expected} bytes")
    records = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84).reshape(count, 50)
    floats = records[:, :48].copy().view("<f4").reshape(count, 12)
    v = floats[:, 3:12].astype(np.float64).reshape(-1, 3)
    f = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
    return v, f


def _sniff_stl_ascii(data: bytes) -> bool:
    head = data[:512].lstrip()
    if not head.startswith(b"solid"):
        return False
    # "solid"-prefixed binary files exist; require an ascii facet keyword
    return b"facet" in data[:2048] or b"endsolid" in data[:2048]


def load_mesh(path: str | Path, format: str | None = None) -> tuple[Mesh, BBoxTransform]:
    """Load an OBJ or STL mesh, normalized to the unit bounding box.

    Parameters
    ----------
    path : file to read.
    format : "obj", "stl-ascii" or "stl-binary"; autodetected when None
        (extension, then content sniffing for the STL flavor).

    Returns
    -------
    (mesh, transform) : normalized mesh plus the transform whose
        ``to_original`` maps normalized coordinates back to the file frame.
    """
    path = Path(path)
    data = path.read_bytes()
    if format is None:
        ext = path.suffix.lower()
        if ext == ".obj":
            format = "obj"
        elif ext == ".stl":
            format = "stl-ascii" if _sniff_stl_ascii(data) else "stl-binary"
        else:
            raise ParseError(f"cannot infer mesh format from extension {ext!r}")
    if format == "obj":
        v, f = _parse_obj(data.decode("utf-8", errors="replace"))
    elif format == "stl-ascii":
        v, f = _parse_stl_ascii(data.decode("utf-8", errors="replace"))
    elif format == "stl-binary":
        v, f = _parse_stl_binary(data)
    else:
        raise ParseError(f"unknown mesh format {format!r}")
    if len(v) == 0 or len(f) == 0:
        raise EmptyMesh(f"{path.name}: no triangles")
    v, transform = normalize_mesh(v)
    v, f = merge_vertices(v, f)
    if len(f) == 0:
        raise EmptyMesh(f"{path.name}: no faces left after cleanup")
    return Mesh(vertices=v, faces=f), transform


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write an OBJ file (``v``/``f`` records, 1-based indices)."""
    path = Path(path)
    lines = []
    for x, y, z in np.asarray(mesh.vertices, dtype=np.float64):
        lines.append(f"v {x.item()!r} {y.item()!r} {z.item()!r}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# queries


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd (crossing-number) containment test, vectorized over points."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    poly = np.asarray(polygon, dtype=np.float64)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    cond = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    return (cond & (px < xint)).sum(axis=1) % 2 == 1


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from point ``p`` to the closed segment ``[a, b]``."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    dd = float(np.dot(d, d))
    if dd == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, d)) / dd
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * d)))


def triangle_areas(mesh: Mesh) -> np.ndarray:
    tri = mesh.triangles()
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def sample_surface_points(mesh: Mesh, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` area-uniform surface samples (deterministic per seed)."""
    if len(mesh.faces) == 0:
        raise EmptyMesh("cannot sample an empty mesh")
    areas = triangle_areas(mesh)
    total = float(areas.sum())
    if total <= 0.0:
        raise EmptyMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(mesh.faces), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.triangles()[idx]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
