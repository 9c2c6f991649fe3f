"""NumPy fallback kernels.

Semantics match the compiled backend in ``_native.pyx``: ray-driven
projection stepping one pixel along the dominant axis with linear
transverse interpolation, and cubic (Catmull-Rom) pull/splat resampling.
Each function processes one chunk so the orchestrator in ``__init__`` can
schedule chunks over threads with a fixed merge order.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "reference"


def _cubic(s: np.ndarray) -> np.ndarray:
    """Catmull-Rom kernel (Keys, a = -0.5) evaluated for s >= 0."""
    return np.where(
        s < 1.0,
        ((1.5 * s - 2.5) * s) * s + 1.0,
        np.where(s < 2.0, ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0, 0.0),
    )


def _dcubic(s: np.ndarray) -> np.ndarray:
    """Derivative of ``_cubic`` for s >= 0."""
    return np.where(
        s < 1.0,
        (4.5 * s - 5.0) * s,
        np.where(s < 2.0, (-1.5 * s + 5.0) * s - 4.0, 0.0),
    )


def _ray_layout(dom, oth, n_det, det_spacing, pixel_size, n_steps, n_transverse):
    """Interpolation coordinates for one angle in its dominant-axis frame.

    ``dom`` and ``oth`` are the signed direction cosines along the stepped
    and transverse axes.  Returns (coord, step_len) with coord[s, k] the
    fractional transverse pixel coordinate of ray k at step s.
    """
    tau = oth / dom
    u = (np.arange(n_det) - 0.5 * (n_det - 1)) * det_spacing
    base = (u / dom / pixel_size + 0.5 * (n_transverse - 1)
            + 0.5 * (n_steps - 1) * tau)
    coord = base[None, :] - np.arange(n_steps)[:, None] * tau
    return coord, pixel_size / abs(dom)


def forward_chunk(img, cos_a, sin_a, pixel_size, det_spacing, out):
    """Project ``img`` at the chunk's angles into ``out`` (n_angles, n_det)."""
    h, w = img.shape
    n_det = out.shape[1]
    for a in range(out.shape[0]):
        row_major = abs(cos_a[a]) >= abs(sin_a[a])
        n_steps, n_tr = (h, w) if row_major else (w, h)
        dom, oth = (cos_a[a], sin_a[a]) if row_major else (sin_a[a], cos_a[a])
        coord, step_len = _ray_layout(dom, oth, n_det, det_spacing,
                                      pixel_size, n_steps, n_tr)
        i0 = np.floor(coord).astype(np.int64)
        frac = coord - i0
        plane = img if row_major else img.T
        acc = np.zeros(n_det)
        for tap, wgt in ((i0, 1.0 - frac), (i0 + 1, frac)):
            valid = (tap >= 0) & (tap < n_tr)
            vals = np.take_along_axis(plane, np.clip(tap, 0, n_tr - 1), axis=1)
            acc += np.where(valid, wgt * vals, 0.0).sum(axis=0)
        out[a] = acc * step_len


def adjoint_chunk(sino, cos_a, sin_a, pixel_size, det_spacing, out_img):
    """Exact transpose of ``forward_chunk``; accumulates into ``out_img``."""
    h, w = out_img.shape
    n_det = sino.shape[1]
    for a in range(sino.shape[0]):
        row_major = abs(cos_a[a]) >= abs(sin_a[a])
        n_steps, n_tr = (h, w) if row_major else (w, h)
        dom, oth = (cos_a[a], sin_a[a]) if row_major else (sin_a[a], cos_a[a])
        coord, step_len = _ray_layout(dom, oth, n_det, det_spacing,
                                      pixel_size, n_steps, n_tr)
        i0 = np.floor(coord).astype(np.int64)
        frac = coord - i0
        vals = step_len * np.broadcast_to(sino[a][None, :], coord.shape)
        steps = np.broadcast_to(np.arange(n_steps)[:, None], coord.shape)
        plane = np.zeros(n_steps * n_tr)
        for tap, wgt in ((i0, 1.0 - frac), (i0 + 1, frac)):
            valid = (tap >= 0) & (tap < n_tr)
            idx = steps[valid] * n_tr + tap[valid]
            plane += np.bincount(idx, weights=(wgt * vals)[valid],
                                 minlength=plane.size)
        plane = plane.reshape(n_steps, n_tr)
        out_img += plane if row_major else plane.T


def _sample_layout(inv_linear, shift, row0, n_rows, n_cols):
    a = inv_linear
    rows = np.arange(row0, row0 + n_rows)[:, None]
    cols = np.arange(n_cols)[None, :]
    src_r = a[0, 0] * rows + a[0, 1] * cols + shift[0]
    src_c = a[1, 0] * rows + a[1, 1] * cols + shift[1]
    ir = np.floor(src_r).astype(np.int64)
    ic = np.floor(src_c).astype(np.int64)
    return ir, src_r - ir, ic, src_c - ic


def _row_weights(frac, derivative=False):
    """4-tap cubic weights for tap offsets -1..2 around the base index."""
    if not derivative:
        return (_cubic(frac + 1.0), _cubic(frac), _cubic(1.0 - frac),
                _cubic(2.0 - frac))
    # signed derivative: argument of tap m is frac + 1 - m
    return (_dcubic(frac + 1.0), _dcubic(frac), -_dcubic(1.0 - frac),
            -_dcubic(2.0 - frac))


def pull_chunk(img, inv_linear, shift, row0, out):
    """Cubic resample of ``img`` at inverse-mapped positions of output rows."""
    h, w = img.shape
    ir, fr, ic, fc = _sample_layout(inv_linear, shift, row0, out.shape[0],
                                    out.shape[1])
    wr = _row_weights(fr)
    wc = _row_weights(fc)
    acc = np.zeros(out.shape)
    for m in range(4):
        rr = ir - 1 + m
        rok = (rr >= 0) & (rr < h)
        rr = np.clip(rr, 0, h - 1)
        for n in range(4):
            cc = ic - 1 + n
            ok = rok & (cc >= 0) & (cc < w)
            vals = img[rr, np.clip(cc, 0, w - 1)]
            acc += np.where(ok, wr[m] * wc[n] * vals, 0.0)
    out[...] = acc


def splat_chunk(y, inv_linear, shift, row0, out_img):
    """Exact transpose of ``pull_chunk``; accumulates into ``out_img``."""
    h, w = out_img.shape
    ir, fr, ic, fc = _sample_layout(inv_linear, shift, row0, y.shape[0],
                                    y.shape[1])
    wr = _row_weights(fr)
    wc = _row_weights(fc)
    flat = np.zeros(h * w)
    for m in range(4):
        rr = ir - 1 + m
        rok = (rr >= 0) & (rr < h)
        for n in range(4):
            cc = ic - 1 + n
            ok = rok & (cc >= 0) & (cc < w)
            idx = rr[ok] * w + cc[ok]
            flat += np.bincount(idx, weights=(wr[m] * wc[n] * y)[ok],
                                minlength=flat.size)
    out_img += flat.reshape(h, w)


def grad_chunk(img, inv_linear, shift, row0, out_gr, out_gc):
    """Spatial gradient of the cubic interpolant at inverse-mapped positions."""
    h, w = img.shape
    ir, fr, ic, fc = _sample_layout(inv_linear, shift, row0, out_gr.shape[0],
                                    out_gr.shape[1])
    wr = _row_weights(fr)
    wc = _row_weights(fc)
    dr = _row_weights(fr, derivative=True)
    dc = _row_weights(fc, derivative=True)
    gr = np.zeros(out_gr.shape)
    gc = np.zeros(out_gc.shape)
    for m in range(4):
        rr = ir - 1 + m
        rok = (rr >= 0) & (rr < h)
        rr = np.clip(rr, 0, h - 1)
        for n in range(4):
            cc = ic - 1 + n
            ok = rok & (cc >= 0) & (cc < w)
            vals = np.where(ok, img[rr, np.clip(cc, 0, w - 1)], 0.0)
            gr += dr[m] * wc[n] * vals
            gc += wr[m] * dc[n] * vals
    out_gr[...] = gr
    out_gc[...] = gc
