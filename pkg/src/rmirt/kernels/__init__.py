"""Numeric kernels with a compiled core and a NumPy fallback.

The compiled Cython backend (``_native``) is preferred when it imported
cleanly; otherwise the pure NumPy ``_reference`` module is used.  Set the
environment variable ``RMIRT_BACKEND=reference`` (or ``native``) before
import to force a choice, e.g. for benchmarking.

Work is split into chunks of fixed size regardless of the worker count,
and partial results are merged in chunk order.  All outputs are therefore
bit-identical for any thread setting; ``set_num_threads`` only changes who
computes which chunk.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _reference


def _select_backend():
    forced = os.environ.get("RMIRT_BACKEND", "").strip().lower()
    if forced == "reference":
        return _reference
    try:
        from . import _native
    except ImportError:
        if forced == "native":
            raise ImportError(
                "RMIRT_BACKEND=native requested but the compiled extension "
                "is not available")
        return _reference
    return _native


_backend = _select_backend()
BACKEND = getattr(_backend, "BACKEND_NAME", "native")

#: fixed chunk sizes; changing these changes merge grouping, so they are
#: constants rather than tunables
_ANGLE_CHUNK = 8
_ROW_CHUNK = 32

_num_threads = 1


def set_num_threads(n: int) -> None:
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


def _run_chunks(work, n_chunks: int) -> None:
    if _num_threads == 1 or n_chunks <= 1:
        for i in range(n_chunks):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=_num_threads) as pool:
            list(pool.map(work, range(n_chunks)))


def _chunk_ranges(total: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _checked_image(img) -> np.ndarray:
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2D image array")
    return img


def forward_project(img, angles, pixel_size: float, n_det: int,
                    det_spacing: float) -> np.ndarray:
    """Parallel-beam projection of a 2D image at the given angles."""
    img = _checked_image(img)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    out = np.empty((angles.size, n_det))
    ranges = _chunk_ranges(angles.size, _ANGLE_CHUNK)

    def work(i):
        lo, hi = ranges[i]
        _backend.forward_chunk(img, cos_a[lo:hi], sin_a[lo:hi],
                               pixel_size, det_spacing, out[lo:hi])

    _run_chunks(work, len(ranges))
    return out


def back_project(sino, angles, pixel_size: float, shape: tuple[int, int],
                 det_spacing: float) -> np.ndarray:
    """Exact transpose of :func:`forward_project` onto a (H, W) grid."""
    sino = np.ascontiguousarray(sino, dtype=np.float64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    if sino.ndim != 2 or sino.shape[0] != angles.size:
        raise ValueError("sinogram must be (n_angles, n_detectors)")
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    ranges = _chunk_ranges(angles.size, _ANGLE_CHUNK)
    parts = [np.zeros(shape) for _ in ranges]

    def work(i):
        lo, hi = ranges[i]
        _backend.adjoint_chunk(sino[lo:hi], cos_a[lo:hi], sin_a[lo:hi],
                               pixel_size, det_spacing, parts[i])

    _run_chunks(work, len(ranges))
    out = parts[0]
    for part in parts[1:]:
        out += part
    return out


def affine_pull(img, inv_linear, shift) -> np.ndarray:
    """Cubic resampling: out[v] = interp(img, inv_linear @ v + shift)."""
    img = _checked_image(img)
    inv_linear = np.asarray(inv_linear, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    out = np.empty(img.shape)
    ranges = _chunk_ranges(img.shape[0], _ROW_CHUNK)

    def work(i):
        lo, hi = ranges[i]
        _backend.pull_chunk(img, inv_linear, shift, lo, out[lo:hi])

    _run_chunks(work, len(ranges))
    return out


def affine_splat(y, inv_linear, shift) -> np.ndarray:
    """Exact transpose of :func:`affine_pull`."""
    y = _checked_image(y)
    inv_linear = np.asarray(inv_linear, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    ranges = _chunk_ranges(y.shape[0], _ROW_CHUNK)
    parts = [np.zeros(y.shape) for _ in ranges]

    def work(i):
        lo, hi = ranges[i]
        _backend.splat_chunk(y[lo:hi], inv_linear, shift, lo, parts[i])

    _run_chunks(work, len(ranges))
    out = parts[0]
    for part in parts[1:]:
        out += part
    return out


def affine_grad_samples(img, inv_linear, shift) -> tuple[np.ndarray, np.ndarray]:
    """Spatial gradient of the interpolant at the inverse-mapped positions.

    Returns (d/d_row, d/d_col) sampled at inv_linear @ v + shift for every
    output pixel v, in pixel units.
    """
    img = _checked_image(img)
    inv_linear = np.asarray(inv_linear, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    gr = np.empty(img.shape)
    gc = np.empty(img.shape)
    ranges = _chunk_ranges(img.shape[0], _ROW_CHUNK)

    def work(i):
        lo, hi = ranges[i]
        _backend.grad_chunk(img, inv_linear, shift, lo, gr[lo:hi], gc[lo:hi])

    _run_chunks(work, len(ranges))
    return gr, gc
