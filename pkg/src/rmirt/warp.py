"""Affine motion operators on images.

A map sends the point u to ``linear @ (u - center) + center + offset`` in
(row, col) pixel coordinates.  Warping is output-driven: every output
pixel pulls from the inverse-mapped position via Catmull-Rom cubic
interpolation with zero padding outside the grid.  The cubic kernel is C1,
which the analytic parameter derivatives require.

``warp_adjoint`` splats the same interpolation weights and is the exact
algebraic transpose of ``warp_apply`` for a fixed map.  ``warp_param_grad``
differentiates the warped image with respect to the map parameters by the
chain rule: the spatial gradient of the interpolant at the inverse-mapped
position, dotted with the parameter derivative of that position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (DimensionError, DomainError, Image, ModelKind,
                   PARAMS_PER_SUBSCAN, as_model_kind)


@dataclass(frozen=True)
class AffineMap:
    """Affine point map about a fixed center, in (row, col) coordinates."""

    linear: np.ndarray
    offset: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=np.float64).reshape(2, 2)
        offset = np.asarray(self.offset, dtype=np.float64).reshape(2)
        center = np.asarray(self.center, dtype=np.float64).reshape(2)
        for name, arr in (("linear", linear), ("offset", offset),
                          ("center", center)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"map {name} part must be finite")
        det = linear[0, 0] * linear[1, 1] - linear[0, 1] * linear[1, 0]
        if abs(det) < 1e-12:
            raise DomainError("affine map is singular")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "center", center)

    def apply_point(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return self.linear @ (p - self.center) + self.center + self.offset

    def inverse_linear(self) -> np.ndarray:
        a = self.linear
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det

    def sampling(self) -> tuple[np.ndarray, np.ndarray]:
        """(inv_linear, shift) with map^{-1}(v) = inv_linear @ v + shift.

        The shift is arranged so an identity map samples exactly on the
        grid regardless of the center value.
        """
        inv = self.inverse_linear()
        shift = self.center - inv @ (self.center + self.offset)
        return inv, shift


def build_map(kind: ModelKind | str, params, center) -> AffineMap:
    """Assemble the affine map of one subscan's parameter block.

    scale2 blocks are (s_x, s_y): axis-aligned scaling about the center.
    scale_rot_trans blocks are (s_x, s_y, theta, t_x, t_y): rotation after
    scaling, plus a translation; x is the column axis, y the row axis.
    """
    kind = as_model_kind(kind)
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    m = PARAMS_PER_SUBSCAN[kind]
    if params.size != m:
        raise DimensionError(
            f"{kind.value} expects {m} parameters, got {params.size}")
    if params[0] <= 0 or params[1] <= 0:
        raise DomainError("scale parameters must be positive")
    sx, sy = params[0], params[1]
    if kind is ModelKind.SCALE2:
        linear = np.array([[sy, 0.0], [0.0, sx]])
        offset = np.zeros(2)
    else:
        theta, tx, ty = params[2], params[3], params[4]
        c, s = np.cos(theta), np.sin(theta)
        linear = np.array([[c * sy, s * sx], [-s * sy, c * sx]])
        offset = np.array([ty, tx])
    return AffineMap(linear=linear, offset=offset, center=center)


def _param_jacobians(kind: ModelKind, params: np.ndarray):
    """Derivatives (dA/dp_j, dt/dp_j) in (row, col) convention."""
    if kind is ModelKind.SCALE2:
        return [
            (np.array([[0.0, 0.0], [0.0, 1.0]]), np.zeros(2)),  # s_x
            (np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros(2)),  # s_y
        ]
    sx, sy, theta = params[0], params[1], params[2]
    c, s = np.cos(theta), np.sin(theta)
    return [
        (np.array([[0.0, s], [0.0, c]]), np.zeros(2)),            # s_x
        (np.array([[c, 0.0], [-s, 0.0]]), np.zeros(2)),           # s_y
        (np.array([[-s * sy, c * sx], [-c * sy, -s * sx]]),
         np.zeros(2)),                                            # theta
        (np.zeros((2, 2)), np.array([0.0, 1.0])),                 # t_x
        (np.zeros((2, 2)), np.array([1.0, 0.0])),                 # t_y
    ]


def _as_2d(img) -> tuple[np.ndarray, bool]:
    if isinstance(img, Image):
        return img.as_2d(), True
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("expected an Image or a 2D array")
    return arr, False


def warp_apply(amap: AffineMap, img):
    """Warp an image by the map; linear in the image for a fixed map."""
    arr, wrap = _as_2d(img)
    inv, shift = amap.sampling()
    out = kernels.affine_pull(arr, inv, shift)
    return Image.from_2d(out, pixel_size=img.geom.pixel_size) if wrap else out


def warp_adjoint(amap: AffineMap, img):
    """Transpose of :func:`warp_apply` with the same map."""
    arr, wrap = _as_2d(img)
    inv, shift = amap.sampling()
    out = kernels.affine_splat(arr, inv, shift)
    return Image.from_2d(out, pixel_size=img.geom.pixel_size) if wrap else out


def warp_param_grad(kind: ModelKind | str, params, center, img) -> np.ndarray:
    """Derivative of the warped image with respect to each parameter.

    Returns an (M, N) array whose row j is the flattened derivative of
    ``warp_apply(build_map(kind, params, center), img)`` in parameter j.
    """
    kind = as_model_kind(kind)
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    amap = build_map(kind, params, center)
    arr, _ = _as_2d(img)
    h, w = arr.shape
    inv, shift = amap.sampling()
    gr, gc = kernels.affine_grad_samples(arr, inv, shift)

    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    src_r = inv[0, 0] * rows + inv[0, 1] * cols + shift[0]
    src_c = inv[1, 0] * rows + inv[1, 1] * cols + shift[1]
    rel_r = src_r - amap.center[0]
    rel_c = src_c - amap.center[1]

    out = np.empty((params.size, h * w))
    for j, (d_lin, d_off) in enumerate(_param_jacobians(kind, params)):
        # d src / d p_j = -A^{-1} (dA (src - center) + dt)
        wr = d_lin[0, 0] * rel_r + d_lin[0, 1] * rel_c + d_off[0]
        wc = d_lin[1, 0] * rel_r + d_lin[1, 1] * rel_c + d_off[1]
        dsrc_r = -(inv[0, 0] * wr + inv[0, 1] * wc)
        dsrc_c = -(inv[1, 0] * wr + inv[1, 1] * wc)
        out[j] = (gr * dsrc_r + gc * dsrc_c).reshape(-1)
    return out
