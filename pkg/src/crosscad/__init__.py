"""crosscad: reverse-engineer triangle meshes into parametric sketch-extrude
CAD models via cross-section analysis.

The pipeline slices a mesh along the three axes, detects the planes where
the cross-section profile changes, fits each profile loop with constrained
line/arc/circle sketches, optimizes extrusion lengths against the surface,
and assembles an ordered, editable sequence of new/cut extrusion steps.
"""

from .errors import CrossCadError
from .geometry import Mesh, Plane, load_mesh, save_mesh
from .pipeline import PipelineConfig, PipelineResult, reconstruct

__version__ = "0.1.0"

__all__ = [
    "CrossCadError",
    "Mesh",
    "Plane",
    "PipelineConfig",
    "PipelineResult",
    "__version__",
    "load_mesh",
    "reconstruct",
    "save_mesh",
]
