"""Core geometry and container types shared across the package.

Conventions used everywhere:

* images are stored as flat float64 vectors of length N = height * width in
  row-major order; ``as_2d`` exposes the (height, width) view
* spatial points are (row, col) pairs in pixel units, pixel (i, j) sitting
  at coordinate (i, j); the grid is centered only where an operation says so
* sinograms are angle-major: row a holds the detector profile of angle a
* per-subscan stacks (masks, parameter vectors, sinogram blocks) are laid
  out subscan-major
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes or geometry sizes do not match."""


class DomainError(ValueError):
    """Raised when a value lies outside its admissible set."""


class ModelKind(str, enum.Enum):
    """Supported affine motion parameterizations."""

    SCALE2 = "scale2"
    SCALE_ROT_TRANS = "scale_rot_trans"


#: number of parameters per subscan for each model kind
PARAMS_PER_SUBSCAN = {ModelKind.SCALE2: 2, ModelKind.SCALE_ROT_TRANS: 5}


def as_model_kind(kind: ModelKind | str) -> ModelKind:
    try:
        return ModelKind(kind)
    except ValueError:
        raise DomainError(f"unknown motion model kind: {kind!r}") from None


def _as_float_vector(data, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class GridGeom:
    """Square-pixel reconstruction grid."""

    width: int
    height: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DimensionError("grid dimensions must be positive")
        if not (np.isfinite(self.pixel_size) and self.pixel_size > 0):
            raise DomainError("pixel_size must be positive and finite")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def diagonal(self) -> float:
        """Physical length of the grid diagonal."""
        return self.pixel_size * float(np.hypot(self.width, self.height))


@dataclass
class Image:
    """Flat row-major pixel vector tied to a grid.

    Finiteness is enforced at construction.  The [0, 1] box constraint on
    reconstruction iterates is enforced by the consumers that require it
    (the forward model and the solver), because intermediate linear-algebra
    results such as warped images may legitimately overshoot.
    """

    geom: GridGeom
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_float_vector(self.data, "image data")
        if self.data.size != self.geom.n_pixels:
            raise DimensionError(
                f"image data length {self.data.size} != grid size {self.geom.n_pixels}"
            )

    @classmethod
    def from_2d(cls, arr, pixel_size: float = 1.0) -> "Image":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError("from_2d expects a 2D array")
        geom = GridGeom(width=arr.shape[1], height=arr.shape[0], pixel_size=pixel_size)
        return cls(geom=geom, data=arr.reshape(-1))

    @classmethod
    def zeros(cls, geom: GridGeom) -> "Image":
        return cls(geom=geom, data=np.zeros(geom.n_pixels))

    def as_2d(self) -> np.ndarray:
        return self.data.reshape(self.geom.shape)

    def copy(self) -> "Image":
        return Image(geom=self.geom, data=self.data.copy())


@dataclass
class MaskStack:
    """Per-subscan region encoders, one [0, 1] valued image per subscan."""

    geom: GridGeom
    n_subscans: int
    data: np.ndarray

    def __post_init__(self):
        if self.n_subscans < 1:
            raise DimensionError("n_subscans must be >= 1")
        self.data = _as_float_vector(self.data, "mask data")
        if self.data.size != self.n_subscans * self.geom.n_pixels:
            raise DimensionError(
                f"mask data length {self.data.size} != "
                f"{self.n_subscans} * {self.geom.n_pixels}"
            )
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise DomainError("mask values must lie in [0, 1]")

    @classmethod
    def zeros(cls, geom: GridGeom, n_subscans: int) -> "MaskStack":
        return cls(geom=geom, n_subscans=n_subscans,
                   data=np.zeros(n_subscans * geom.n_pixels))

    @classmethod
    def ones(cls, geom: GridGeom, n_subscans: int) -> "MaskStack":
        return cls(geom=geom, n_subscans=n_subscans,
                   data=np.ones(n_subscans * geom.n_pixels))

    @classmethod
    def tile(cls, mask2d, n_subscans: int, pixel_size: float = 1.0) -> "MaskStack":
        """Replicate one 2D mask across all subscans."""
        img = Image.from_2d(mask2d, pixel_size=pixel_size)
        return cls(geom=img.geom, n_subscans=n_subscans,
                   data=np.tile(img.data, n_subscans))

    def block(self, i: int) -> np.ndarray:
        """Flat view of subscan i's mask."""
        n = self.geom.n_pixels
        return self.data[i * n:(i + 1) * n]

    def block_2d(self, i: int) -> np.ndarray:
        return self.block(i).reshape(self.geom.shape)

    def copy(self) -> "MaskStack":
        return MaskStack(geom=self.geom, n_subscans=self.n_subscans,
                         data=self.data.copy())


def identity_params(kind: ModelKind | str, n_subscans: int) -> np.ndarray:
    """Flat parameter vector encoding no motion for every subscan."""
    kind = as_model_kind(kind)
    if kind is ModelKind.SCALE2:
        one = [1.0, 1.0]
    else:
        one = [1.0, 1.0, 0.0, 0.0, 0.0]
    return np.tile(np.asarray(one), n_subscans)


@dataclass
class MotionParams:
    """Per-subscan affine parameters plus the shared center of motion.

    ``params`` is subscan-major with PARAMS_PER_SUBSCAN[kind] entries per
    subscan; ``center`` is a (row, col) point in pixel units.  For both
    model kinds the first two entries of a block are the horizontal and
    vertical scale factors (s_x, s_y); scale_rot_trans appends rotation
    angle and an (x, y) translation.
    """

    kind: ModelKind
    n_subscans: int
    params: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.kind = as_model_kind(self.kind)
        if self.n_subscans < 1:
            raise DimensionError("n_subscans must be >= 1")
        self.params = _as_float_vector(self.params, "motion parameters")
        m = PARAMS_PER_SUBSCAN[self.kind]
        if self.params.size != self.n_subscans * m:
            raise DimensionError(
                f"parameter vector length {self.params.size} != "
                f"{self.n_subscans} * {m}"
            )
        blocks = self.params.reshape(self.n_subscans, m)
        if np.any(blocks[:, :2] <= 0.0):
            raise DomainError("scale parameters must be positive")
        self.center = (float(self.center[0]), float(self.center[1]))
        if not all(np.isfinite(self.center)):
            raise DomainError("center of motion must be finite")

    @classmethod
    def identity(cls, kind: ModelKind | str, n_subscans: int,
                 center: tuple[float, float] = (0.0, 0.0)) -> "MotionParams":
        kind = as_model_kind(kind)
        return cls(kind=kind, n_subscans=n_subscans,
                   params=identity_params(kind, n_subscans), center=center)

    @property
    def params_per_subscan(self) -> int:
        return PARAMS_PER_SUBSCAN[self.kind]

    def block(self, i: int) -> np.ndarray:
        m = self.params_per_subscan
        return self.params[i * m:(i + 1) * m]

    def with_params(self, params: np.ndarray) -> "MotionParams":
        return MotionParams(kind=self.kind, n_subscans=self.n_subscans,
                            params=params, center=self.center)

    def with_center(self, center: tuple[float, float]) -> "MotionParams":
        return MotionParams(kind=self.kind, n_subscans=self.n_subscans,
                            params=self.params.copy(), center=center)


@dataclass(frozen=True)
class ProjGeom:
    """Parallel-beam acquisition split into contiguous subscans.

    ``subscan_bounds`` holds n_subscans + 1 strictly increasing angle
    indices starting at 0 and ending at n_angles, so subscan i covers
    angle rows [bounds[i], bounds[i + 1]).
    """

    angles: np.ndarray
    n_detectors: int
    detector_spacing: float
    subscan_bounds: tuple[int, ...]

    def __post_init__(self):
        angles = np.ascontiguousarray(self.angles, dtype=np.float64).reshape(-1)
        if angles.size < 1 or not np.all(np.isfinite(angles)):
            raise DomainError("angles must be a non-empty finite vector")
        if np.any(np.diff(angles) <= 0):
            raise DomainError("angles must be strictly increasing")
        object.__setattr__(self, "angles", angles)
        if self.n_detectors < 1:
            raise DimensionError("n_detectors must be >= 1")
        if not (np.isfinite(self.detector_spacing) and self.detector_spacing > 0):
            raise DomainError("detector_spacing must be positive and finite")
        bounds = tuple(int(b) for b in self.subscan_bounds)
        object.__setattr__(self, "subscan_bounds", bounds)
        if len(bounds) < 2 or bounds[0] != 0 or bounds[-1] != angles.size:
            raise DimensionError(
                "subscan_bounds must run from 0 to n_angles")
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
            raise DimensionError("every subscan needs at least one angle")

    @classmethod
    def equal_subscans(cls, n_angles: int, n_subscans: int, n_detectors: int,
                       detector_spacing: float = 1.0) -> "ProjGeom":
        """Evenly spaced angles over [0, pi) split into equal subscans."""
        if n_angles % n_subscans != 0:
            raise DimensionError(
                f"{n_angles} angles cannot be split into {n_subscans} equal subscans")
        angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
        step = n_angles // n_subscans
        bounds = tuple(range(0, n_angles + 1, step))
        return cls(angles=angles, n_detectors=n_detectors,
                   detector_spacing=detector_spacing, subscan_bounds=bounds)

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def n_subscans(self) -> int:
        return len(self.subscan_bounds) - 1

    @property
    def n_bins(self) -> int:
        return self.n_angles * self.n_detectors

    def subscan_slice(self, i: int) -> slice:
        return slice(self.subscan_bounds[i], self.subscan_bounds[i + 1])

    def subscan_angles(self, i: int) -> np.ndarray:
        return self.angles[self.subscan_slice(i)]


@dataclass
class Sinogram:
    """Angle-major detector data for a full acquisition."""

    geom: ProjGeom
    data: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros(self.geom.n_bins)
        self.data = _as_float_vector(self.data, "sinogram data")
        if self.data.size != self.geom.n_bins:
            raise DimensionError(
                f"sinogram length {self.data.size} != {self.geom.n_bins}")

    def as_2d(self) -> np.ndarray:
        return self.data.reshape(self.geom.n_angles, self.geom.n_detectors)

    def block(self, i: int) -> np.ndarray:
        """2D view (angles of subscan i, detectors)."""
        return self.as_2d()[self.geom.subscan_slice(i)]

    def copy(self) -> "Sinogram":
        return Sinogram(geom=self.geom, data=self.data.copy())


def penetrating_product(alpha: MaskStack, x: Image) -> np.ndarray:
    """Stacked elementwise products alpha_i * x, flattened subscan-major.

    Bilinear in (alpha, x); with an all-ones stack this is x repeated once
    per subscan.
    """
    if alpha.geom.shape != x.geom.shape:
        raise DimensionError("mask stack and image live on different grids")
    out = alpha.data.reshape(alpha.n_subscans, -1) * x.data[None, :]
    return out.reshape(-1)


def complement(alpha: MaskStack) -> MaskStack:
    """Stack of 1 - alpha_i; an involution on [0, 1] valued stacks."""
    return MaskStack(geom=alpha.geom, n_subscans=alpha.n_subscans,
                     data=1.0 - alpha.data)
