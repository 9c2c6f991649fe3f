"""Ray-driven parallel-beam projector for one subscan's angle block.

The forward pass steps along the dominant axis of each ray, one pixel per
step, and interpolates the image linearly in the transverse direction; the
ray sum is scaled by the per-step path length.  The backprojection splats
the same interpolation weights, so the pair is an exact algebraic
transpose (up to floating-point roundoff) and satisfies the dot-product
identity <W x, y> = <x, W^T y>.

Rays leaving the grid accumulate nothing there (zero padding).  The
detector array must cover the grid's circumscribed circle so no part of
the object falls outside the measured field of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DimensionError, DomainError, GridGeom, Image


@dataclass(frozen=True)
class SubscanProjector:
    """Projection operator for a contiguous block of acquisition angles."""

    grid: GridGeom
    angles: np.ndarray
    n_detectors: int
    detector_spacing: float = 1.0

    def __post_init__(self):
        angles = np.ascontiguousarray(self.angles, dtype=np.float64).reshape(-1)
        if angles.size < 1 or not np.all(np.isfinite(angles)):
            raise DomainError("angles must be a non-empty finite vector")
        object.__setattr__(self, "angles", angles)
        if self.n_detectors < 1:
            raise DimensionError("n_detectors must be >= 1")
        if not (np.isfinite(self.detector_spacing) and self.detector_spacing > 0):
            raise DomainError("detector_spacing must be positive and finite")
        coverage = self.n_detectors * self.detector_spacing
        if coverage < self.grid.diagonal:
            raise DomainError(
                f"detector array ({coverage:g}) does not cover the grid "
                f"diagonal ({self.grid.diagonal:g})")

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def block_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    def _image_2d(self, img) -> np.ndarray:
        if isinstance(img, Image):
            if img.geom.shape != self.grid.shape:
                raise DimensionError("image grid does not match projector grid")
            return img.as_2d()
        arr = np.asarray(img, dtype=np.float64)
        if arr.shape == self.grid.shape:
            return arr
        if arr.shape == (self.grid.n_pixels,):
            return arr.reshape(self.grid.shape)
        raise DimensionError(
            f"expected image of shape {self.grid.shape}, got {arr.shape}")

    def project(self, img) -> np.ndarray:
        """Forward projection; returns a (n_angles, n_detectors) block."""
        img2d = self._image_2d(img)
        return kernels.forward_project(img2d, self.angles,
                                       self.grid.pixel_size,
                                       self.n_detectors,
                                       self.detector_spacing)

    def backproject(self, block) -> np.ndarray:
        """Adjoint of :meth:`project`; returns a flat image-shaped vector."""
        block = np.asarray(block, dtype=np.float64)
        if block.shape == (self.n_angles * self.n_detectors,):
            block = block.reshape(self.block_shape)
        if block.shape != self.block_shape:
            raise DimensionError(
                f"expected sinogram block of shape {self.block_shape}, "
                f"got {block.shape}")
        img2d = kernels.back_project(block, self.angles,
                                     self.grid.pixel_size, self.grid.shape,
                                     self.detector_spacing)
        return img2d.reshape(-1)


def normal_operator_norm(projectors, geom: GridGeom, n_steps: int = 20,
                         seed: int = 0) -> float:
    """Power-iteration estimate of || sum_i W_i^T W_i ||_2.

    Used to derive a Lipschitz-safe default stepsize for the image block.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(geom.n_pixels)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_steps):
        av = np.zeros(geom.n_pixels)
        for proj in projectors:
            av += proj.backproject(proj.project(v.reshape(geom.shape)))
        lam = float(np.linalg.norm(av))
        if lam == 0.0:
            return 0.0
        v = av / lam
    return lam
