"""Exception types raised across the package.

Every error is a subclass of :class:`CrossCadError` so callers can catch
library failures with a single except clause while still being able to
distinguish input problems (parse errors, empty meshes) from pipeline
failures (non-convergence, triangulation).
"""


class CrossCadError(Exception):
    """Base class for all package errors."""


class ParseError(CrossCadError):
    """A mesh or document file could not be parsed."""


class EmptyMesh(CrossCadError):
    """Mesh has no vertices or no faces after cleanup."""


class DegenerateSlice(CrossCadError):
    """All loops of a slice collapse to (near) zero extent."""


class ZeroExtent(CrossCadError):
    """Extrusion extents collapse; no direction can be derived."""


class NoSameAxisCandidate(CrossCadError):
    """A canonical plane has no slicing-plane candidate on its axis."""


class LengthMismatch(CrossCadError):
    """Two aligned sequences differ in length or key set."""


class EmptyForeground(CrossCadError):
    """A raster operation needs foreground pixels but found none."""


class DimensionMismatch(CrossCadError):
    """Two rasters differ in width/height."""


class UnfittablePrimitive(CrossCadError):
    """A polyline stretch admits neither a line nor an arc fit."""


class OpenChain(CrossCadError):
    """Sketch primitives do not chain into a closed loop."""


class UnsupportedConstraint(CrossCadError):
    """Constraint kind or anchor reference is not supported."""


class NonConvergence(CrossCadError):
    """Constraint solver failed to reach the residual target."""


class InconsistentPins(CrossCadError):
    """Pinned anchors demand contradictory positions."""


class CrossingLoops(CrossCadError):
    """Loop boundaries cross; containment is undefined."""


class NoSpecs(CrossCadError):
    """No new-typed extrusion specs to optimize."""


class NoSamples(CrossCadError):
    """No mesh samples available for the extrusion loss."""


class IndexMismatch(CrossCadError):
    """Assembly inputs are not aligned one-to-one."""


class NoSteps(IndexMismatch):
    """Assembly produced no steps (empty key-slice set)."""


class TriangulationFailure(CrossCadError):
    """Profile polygon could not be triangulated."""


class NoEdges(CrossCadError):
    """Model exposes no sketch edges to sample."""


class EmptyOccupancy(CrossCadError):
    """Both voxel grids are empty; IoU is undefined."""


class SchemaError(CrossCadError):
    """A JSON document violates the expected schema.

    Carries a JSON-pointer-ish ``pointer`` to the offending element.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{message} (at {pointer or '/'})")
        self.pointer = pointer
