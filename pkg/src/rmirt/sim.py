"""Desk-scale dynamic acquisition simulator.

The phantom is a textured disk with a static band at the bottom of the
image; the rows above the band (inside the disk) form the moving region.
Motion follows a continuous per-angle schedule, so within one subscan the
object keeps moving while the reconstruction model assumes one parameter
set per subscan.  That deliberate mismatch makes the estimation problem
honest; an exactly solvable configuration is available through the
``subscan_constant`` schedule, which holds the parameters at the subscan
midpoint value for every angle of the subscan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .core import (DimensionError, DomainError, GridGeom, Image, MaskStack,
                   ModelKind, MotionParams, ProjGeom, Sinogram, as_model_kind)
from .projector import SubscanProjector
from .warp import build_map, warp_apply

_STRUCTURES = ("textured_disk", "layered_disk")
_SCHEDULES = ("linear", "subscan_constant")


@dataclass(frozen=True)
class PhantomSpec:
    """Disk phantom with a static bottom band."""

    geom: GridGeom
    static_band_rows: int
    texture_seed: int = 0
    structure: str = "textured_disk"

    def __post_init__(self):
        if not (0 <= self.static_band_rows < self.geom.height):
            raise DomainError("static_band_rows must lie in [0, height)")
        if self.structure not in _STRUCTURES:
            raise DomainError(
                f"structure must be one of {_STRUCTURES}, got {self.structure!r}")

    @property
    def boundary_row(self) -> int:
        """First static row; the moving region is rows [0, boundary_row)."""
        return self.geom.height - self.static_band_rows


def _disk_coverage(geom: GridGeom) -> np.ndarray:
    """Antialiased indicator of the centered disk, radius 0.36 min(H, W)."""
    h, w = geom.shape
    radius = 0.36 * min(h, w)
    rows = np.arange(h)[:, None] - 0.5 * (h - 1)
    cols = np.arange(w)[None, :] - 0.5 * (w - 1)
    dist = np.hypot(rows, cols)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def make_phantom(spec: PhantomSpec) -> tuple[Image, Image]:
    """Phantom image in [0, 1] and the binary moving-region mask."""
    geom = spec.geom
    cover = _disk_coverage(geom)
    if spec.structure == "textured_disk":
        # fine-grained speckle: high-frequency content is what makes the
        # deformation observable in the projections
        rng = np.random.default_rng(spec.texture_seed)
        noise = gaussian_filter(rng.standard_normal(geom.shape), sigma=1.0)
        lo, hi = noise.min(), noise.max()
        texture = 0.25 + 0.65 * (noise - lo) / max(hi - lo, 1e-12)
    else:
        period = max(min(geom.shape) / 8.0, 2.0)
        rows = np.arange(geom.height)[:, None]
        texture = 0.4 + 0.3 * (0.5 + 0.5 * np.sin(2.0 * np.pi * rows / period))
        texture = np.broadcast_to(texture, geom.shape)
    img = np.clip(texture * cover, 0.0, 1.0)

    inside = cover > 0.5
    region = np.zeros(geom.shape)
    region[:spec.boundary_row] = inside[:spec.boundary_row]
    return (Image.from_2d(img, pixel_size=geom.pixel_size),
            Image.from_2d(region, pixel_size=geom.pixel_size))


def make_region_guess(spec: PhantomSpec, extra_rows: int = 5) -> Image:
    """True moving region grown toward the static band by ``extra_rows``."""
    geom = spec.geom
    inside = _disk_coverage(geom) > 0.5
    guess_boundary = min(spec.boundary_row + int(extra_rows), geom.height)
    region = np.zeros(geom.shape)
    region[:guess_boundary] = inside[:guess_boundary]
    return Image.from_2d(region, pixel_size=geom.pixel_size)


@dataclass(frozen=True)
class MotionTimeline:
    """Continuous parameter schedule over the acquisition.

    ``linear`` interpolates from start to end parameters with the angle's
    midpoint position (k + 0.5) / n_angles; ``subscan_constant`` holds the
    subscan-midpoint parameters through each subscan, which makes the
    acquisition exactly representable by the reconstruction model.
    """

    kind: ModelKind
    start_params: np.ndarray
    end_params: np.ndarray
    center: tuple[float, float]
    schedule: str = "linear"

    def __post_init__(self):
        kind = as_model_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        start = np.asarray(self.start_params, dtype=np.float64).reshape(-1)
        end = np.asarray(self.end_params, dtype=np.float64).reshape(-1)
        probe = MotionParams(kind=kind, n_subscans=1, params=start,
                             center=self.center)
        MotionParams(kind=kind, n_subscans=1, params=end, center=self.center)
        del probe
        object.__setattr__(self, "start_params", start)
        object.__setattr__(self, "end_params", end)
        object.__setattr__(self, "center",
                           (float(self.center[0]), float(self.center[1])))
        if self.schedule not in _SCHEDULES:
            raise DomainError(
                f"schedule must be one of {_SCHEDULES}, got {self.schedule!r}")

    def _at_position(self, rel: float) -> np.ndarray:
        return self.start_params + (self.end_params - self.start_params) * rel

    def params_at_angle(self, k: int, proj_geom: ProjGeom) -> np.ndarray:
        """Parameter vector in effect while angle k is measured."""
        if not (0 <= k < proj_geom.n_angles):
            raise DimensionError(f"angle index {k} out of range")
        if self.schedule == "linear":
            rel = (k + 0.5) / proj_geom.n_angles
        else:
            i = int(np.searchsorted(proj_geom.subscan_bounds, k, "right")) - 1
            lo, hi = proj_geom.subscan_bounds[i], proj_geom.subscan_bounds[i + 1]
            rel = 0.5 * (lo + hi) / proj_geom.n_angles
        return self._at_position(rel)


def subscan_representative_params(timeline: MotionTimeline,
                                  proj_geom: ProjGeom) -> MotionParams:
    """Timeline parameters at each subscan's midpoint, stacked."""
    blocks = []
    for i in range(proj_geom.n_subscans):
        lo, hi = proj_geom.subscan_bounds[i], proj_geom.subscan_bounds[i + 1]
        blocks.append(timeline._at_position(0.5 * (lo + hi) / proj_geom.n_angles))
    return MotionParams(kind=timeline.kind, n_subscans=proj_geom.n_subscans,
                        params=np.concatenate(blocks), center=timeline.center)


def simulate_dynamic_sinogram(x_true: Image, mask_true: Image,
                              timeline: MotionTimeline,
                              proj_geom: ProjGeom) -> Sinogram:
    """Project the deforming object angle by angle.

    Every angle sees (1 - mask) * x + warp(params at that angle)(mask * x),
    so the static content contributes identically at all angles while the
    masked content follows the timeline.
    """
    if x_true.geom.shape != mask_true.geom.shape:
        raise DimensionError("phantom and mask live on different grids")
    vals = mask_true.data
    if vals.size and not np.all((vals == 0.0) | (vals == 1.0)):
        raise DomainError("simulation mask must be binary")
    # constructing the projector also validates detector coverage
    SubscanProjector(grid=x_true.geom, angles=proj_geom.angles,
                     n_detectors=proj_geom.n_detectors,
                     detector_spacing=proj_geom.detector_spacing)
    x2 = x_true.as_2d()
    m2 = mask_true.as_2d()
    static = (1.0 - m2) * x2
    moving = m2 * x2
    sino = Sinogram(geom=proj_geom)
    view = sino.as_2d()
    for k in range(proj_geom.n_angles):
        p_k = timeline.params_at_angle(k, proj_geom)
        amap = build_map(timeline.kind, p_k, timeline.center)
        deformed = static + warp_apply(amap, moving)
        view[k] = kernels.forward_project(
            deformed, proj_geom.angles[k:k + 1], x_true.geom.pixel_size,
            proj_geom.n_detectors, proj_geom.detector_spacing)[0]
    return sino


def add_noise(sino: Sinogram, sigma_fraction: float, seed: int) -> Sinogram:
    """Additive Gaussian noise with sigma relative to the data peak.

    A zero fraction returns an exact copy.
    """
    if sigma_fraction < 0 or not np.isfinite(sigma_fraction):
        raise DomainError("sigma_fraction must be >= 0 and finite")
    if sigma_fraction == 0.0:
        return sino.copy()
    sigma = sigma_fraction * float(sino.data.max(initial=0.0))
    rng = np.random.default_rng(seed)
    return Sinogram(geom=sino.geom,
                    data=sino.data + rng.normal(0.0, sigma, sino.data.size))


@dataclass
class GroundTruth:
    """Everything a reconstruction run can be scored against."""

    x_true: Image
    mask_region: Image
    mask_true: MaskStack
    params: MotionParams
    sino_clean: Sinogram
    sino_noisy: Sinogram


def make_ground_truth(spec: PhantomSpec, timeline: MotionTimeline,
                      proj_geom: ProjGeom, sigma_fraction: float,
                      noise_seed: int) -> GroundTruth:
    """Phantom, dynamic data and reference values for one experiment."""
    x_true, region = make_phantom(spec)
    clean = simulate_dynamic_sinogram(x_true, region, timeline, proj_geom)
    noisy = add_noise(clean, sigma_fraction, noise_seed)
    return GroundTruth(
        x_true=x_true,
        mask_region=region,
        mask_true=MaskStack.tile(region.as_2d(), proj_geom.n_subscans,
                                 pixel_size=spec.geom.pixel_size),
        params=subscan_representative_params(timeline, proj_geom),
        sino_clean=clean,
        sino_noisy=noisy,
    )
