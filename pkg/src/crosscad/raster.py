"""Binary rasterization of loops/sketches and the image chamfer metric.

Images are grayscale byte arrays with foreground = 0 (black) on a 255
background.  The unit sketch box maps to the full pixel grid with y up,
so (0, 0) lands in the bottom-left pixel.  Persisted as binary PGM (P5).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyForeground, ParseError
from .sketch_fit import Arc, Circle, Line, Primitive, arc_geometry, tessellate_arc, tessellate_circle
from .slicer import Loop2D

logger = logging.getLogger(__name__)

FOREGROUND = 0
BACKGROUND = 255

#: max chord deviation for arc tessellation, in pixels
ARC_CHORD_TOL_PX = 0.5


@dataclass
class RasterImage:
    """Grayscale image; ``pixels`` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError("pixels must be a non-empty 2d array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def foreground_mask(self) -> np.ndarray:
        return self.pixels == FOREGROUND

    def foreground_count(self) -> int:
        return int(self.foreground_mask().sum())

    def copy(self) -> "RasterImage":
        return RasterImage(pixels=self.pixels.copy())


def blank(size: int = 128) -> RasterImage:
    return RasterImage(pixels=np.full((size, size), BACKGROUND, dtype=np.uint8))


def _to_pixel(points: np.ndarray, size: int) -> np.ndarray:
    """Unit-box coordinates to integer (col, row) pixel centers, y-up."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    col = np.rint(pts[:, 0] * (size - 1)).astype(np.int64)
    row = (size - 1) - np.rint(pts[:, 1] * (size - 1)).astype(np.int64)
    return np.stack([col, row], axis=1)


def _segment_cells(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Integer cells of a line from p0 to p1 (rounding DDA, 8-connected)."""
    d = p1 - p0
    n = int(max(abs(d[0]), abs(d[1])))
    if n == 0:
        return p0[None, :]
    t = np.arange(n + 1, dtype=np.float64) / n
    return np.rint(p0[None, :] + t[:, None] * d[None, :]).astype(np.int64)


def _stamp(img: RasterImage, cells: np.ndarray, stroke: int) -> None:
    h, w = img.pixels.shape
    if stroke > 1:
        lo = -((stroke - 1) // 2)
        hi = stroke // 2
        offs = np.array([(dx, dy) for dx in range(lo, hi + 1) for dy in range(lo, hi + 1)])
        cells = (cells[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    col = np.clip(cells[:, 0], 0, w - 1)
    row = np.clip(cells[:, 1], 0, h - 1)
    img.pixels[row, col] = FOREGROUND


def draw_polyline(img: RasterImage, points: np.ndarray, closed: bool = False, stroke: int = 1) -> None:
    """Rasterize a unit-box polyline into the image."""
    px = _to_pixel(points, img.width)
    if closed and len(px) > 1:
        px = np.vstack([px, px[:1]])
    for i in range(len(px) - 1):
        _stamp(img, _segment_cells(px[i], px[i + 1]), stroke)
    if len(px) == 1:
        _stamp(img, px, stroke)


def render_loops(loops: list[Loop2D], size: int = 128, stroke: int = 1) -> RasterImage:
    """Draw loop boundaries as strokes; empty input gives all background."""
    img = blank(size)
    for loop in loops:
        draw_polyline(img, loop.points, closed=True, stroke=stroke)
    return img


def _arc_segment_count(radius_px: float, sweep: float) -> int:
    if radius_px <= ARC_CHORD_TOL_PX:
        return 1
    dtheta = 2.0 * np.arccos(max(-1.0, 1.0 - ARC_CHORD_TOL_PX / radius_px))
    return max(1, int(np.ceil(abs(sweep) / dtheta)))


def render_sketch(sketch, size: int = 128, is_hand_drawn: bool = False, stroke: int = 1) -> RasterImage:
    """Render sketch primitives (lines, arcs, circles) as strokes.

    ``is_hand_drawn`` is accepted for interface fidelity but ignored.
    Arcs and circles are tessellated at <= 0.5 px chord error.
    """
    prims: list[Primitive] = getattr(sketch, "primitives", sketch)
    img = blank(size)
    for prim in prims:
        if isinstance(prim, Line):
            draw_polyline(img, np.asarray([prim.start, prim.end]), stroke=stroke)
        elif isinstance(prim, Arc):
            _, r, _, sweep = arc_geometry(prim)
            n = _arc_segment_count(r * (size - 1), sweep)
            draw_polyline(img, tessellate_arc(prim, n), stroke=stroke)
        elif isinstance(prim, Circle):
            n = _arc_segment_count(prim.radius * (size - 1), 2.0 * np.pi)
            draw_polyline(img, tessellate_circle(prim, max(n, 3)), closed=True, stroke=stroke)
        else:
            raise TypeError(f"cannot render {type(prim).__name__}")
    return img


def foreground_coords(img: RasterImage) -> np.ndarray:
    """(n, 2) pixel coordinates (col, row) of foreground pixels."""
    rows, cols = np.nonzero(img.foreground_mask())
    return np.stack([cols, rows], axis=1).astype(np.float64)


def sketch_chamfer_distance(a: RasterImage, b: RasterImage) -> float:
    """Bidirectional mean squared nearest-neighbor distance (pixel units)."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatch(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    pa = foreground_coords(a)
    pb = foreground_coords(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyForeground("both images need foreground pixels")
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return 0.5 * float(np.mean(d_ab**2)) + 0.5 * float(np.mean(d_ba**2))


# ---------------------------------------------------------------------------
# resize / blur (used by the rendering augmentations)


def resize_nearest(img: RasterImage, size: int) -> RasterImage:
    """Nearest-neighbor resize to size x size."""
    h, w = img.pixels.shape
    rows = np.minimum((np.arange(size) * h) // size, h - 1)
    cols = np.minimum((np.arange(size) * w) // size, w - 1)
    return RasterImage(pixels=img.pixels[np.ix_(rows, cols)])


def gaussian_blur(img: RasterImage, ksize: int) -> RasterImage:
    """Separable Gaussian blur with an odd kernel size.

    Sigma follows the common derived-from-kernel convention:
    ``0.3 * ((ksize - 1) * 0.5 - 1) + 0.8``.
    """
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError("kernel size must be odd and positive")
    sigma = 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8
    half = ksize // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    data = img.pixels.astype(np.float64)
    padded = np.pad(data, ((half, half), (0, 0)), mode="reflect")
    data = sum(kernel[i] * padded[i : i + data.shape[0], :] for i in range(ksize))
    padded = np.pad(data, ((0, 0), (half, half)), mode="reflect")
    data = sum(kernel[i] * padded[:, i : i + img.pixels.shape[1]] for i in range(ksize))
    return RasterImage(pixels=np.clip(np.rint(data), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# PGM persistence


def to_pgm(img: RasterImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def from_pgm(data: bytes) -> RasterImage:
    if not data.startswith(b"P5"):
        raise ParseError("not a binary PGM (P5) file")
    # header: magic, width, height, maxval separated by whitespace/comments
    tokens: list[bytes] = []
    i = 2
    while len(tokens) < 3 and i < len(data):
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 3:
        raise ParseError("truncated PGM header")
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}") from exc
    if maxval != 255:
        raise ParseError(f"unsupported PGM maxval {maxval}")
    i += 1  # single whitespace after maxval
    body = data[i : i + w * h]
    if len(body) != w * h:
        raise ParseError("truncated PGM body")
    return RasterImage(pixels=np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy())


def save_pgm(img: RasterImage, path: str | Path) -> None:
    Path(path).write_bytes(to_pgm(img))


def load_pgm(path: str | Path) -> RasterImage:
    return from_pgm(Path(path).read_bytes())
