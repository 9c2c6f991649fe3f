"""Region-based motion-compensated iterative CT reconstruction.

Jointly estimates a reconstruction, per-subscan binary region masks, and
per-subscan affine motion parameters from subscan-partitioned parallel-beam
projection data, by projected gradient descent on a single least-squares
objective.  Includes a desk-scale simulation harness and a command line
front end.
"""

from .core import (DimensionError, DomainError, GridGeom, Image, MaskStack,
                   ModelKind, MotionParams, ProjGeom, Sinogram, complement,
                   identity_params, penetrating_product)

__all__ = [
    "DimensionError", "DomainError", "GridGeom", "Image", "MaskStack",
    "ModelKind", "MotionParams", "ProjGeom", "Sinogram", "complement",
    "identity_params", "penetrating_product",
]

__version__ = "0.1.0"
