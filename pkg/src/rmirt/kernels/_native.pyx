# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, language_level=3
"""Compiled projection and warp kernels.

Same chunk-level contracts as the NumPy reference backend; see
``_reference.py`` for the semantics.
"""

from libc.math cimport fabs, floor

BACKEND_NAME = "native"


cdef inline double _cubic(double s) noexcept nogil:
    # Catmull-Rom kernel (Keys, a = -0.5), s >= 0
    if s < 1.0:
        return ((1.5 * s - 2.5) * s) * s + 1.0
    elif s < 2.0:
        return ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0
    return 0.0


cdef inline double _dcubic(double s) noexcept nogil:
    # derivative of _cubic, s >= 0
    if s < 1.0:
        return (4.5 * s - 5.0) * s
    elif s < 2.0:
        return (-1.5 * s + 5.0) * s - 4.0
    return 0.0


def forward_chunk(const double[:, ::1] img, const double[::1] cos_a,
                  const double[::1] sin_a, double pixel_size,
                  double det_spacing, double[:, ::1] out):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t n_det = out.shape[1]
    cdef Py_ssize_t a, k, s, i0, n_steps, n_tr
    cdef bint row_major
    cdef double dom, oth, tau, step_len, base, coord, frac, acc, u

    with nogil:
        for a in range(out.shape[0]):
            row_major = fabs(cos_a[a]) >= fabs(sin_a[a])
            if row_major:
                dom = cos_a[a]; oth = sin_a[a]; n_steps = h; n_tr = w
            else:
                dom = sin_a[a]; oth = cos_a[a]; n_steps = w; n_tr = h
            tau = oth / dom
            step_len = pixel_size / fabs(dom)
            for k in range(n_det):
                u = (k - 0.5 * (n_det - 1)) * det_spacing
                base = (u / dom / pixel_size + 0.5 * (n_tr - 1)
                        + 0.5 * (n_steps - 1) * tau)
                acc = 0.0
                for s in range(n_steps):
                    coord = base - s * tau
                    i0 = <Py_ssize_t>floor(coord)
                    frac = coord - i0
                    if row_major:
                        if 0 <= i0 < n_tr:
                            acc += (1.0 - frac) * img[s, i0]
                        if 0 <= i0 + 1 < n_tr:
                            acc += frac * img[s, i0 + 1]
                    else:
                        if 0 <= i0 < n_tr:
                            acc += (1.0 - frac) * img[i0, s]
                        if 0 <= i0 + 1 < n_tr:
                            acc += frac * img[i0 + 1, s]
                out[a, k] = acc * step_len


def adjoint_chunk(const double[:, ::1] sino, const double[::1] cos_a,
                  const double[::1] sin_a, double pixel_size,
                  double det_spacing, double[:, ::1] out_img):
    cdef Py_ssize_t h = out_img.shape[0], w = out_img.shape[1]
    cdef Py_ssize_t n_det = sino.shape[1]
    cdef Py_ssize_t a, k, s, i0, n_steps, n_tr
    cdef bint row_major
    cdef double dom, oth, tau, step_len, base, coord, frac, val, u

    with nogil:
        for a in range(sino.shape[0]):
            row_major = fabs(cos_a[a]) >= fabs(sin_a[a])
            if row_major:
                dom = cos_a[a]; oth = sin_a[a]; n_steps = h; n_tr = w
            else:
                dom = sin_a[a]; oth = cos_a[a]; n_steps = w; n_tr = h
            tau = oth / dom
            step_len = pixel_size / fabs(dom)
            for k in range(n_det):
                u = (k - 0.5 * (n_det - 1)) * det_spacing
                base = (u / dom / pixel_size + 0.5 * (n_tr - 1)
                        + 0.5 * (n_steps - 1) * tau)
                val = sino[a, k] * step_len
                for s in range(n_steps):
                    coord = base - s * tau
                    i0 = <Py_ssize_t>floor(coord)
                    frac = coord - i0
                    if row_major:
                        if 0 <= i0 < n_tr:
                            out_img[s, i0] += (1.0 - frac) * val
                        if 0 <= i0 + 1 < n_tr:
                            out_img[s, i0 + 1] += frac * val
                    else:
                        if 0 <= i0 < n_tr:
                            out_img[i0, s] += (1.0 - frac) * val
                        if 0 <= i0 + 1 < n_tr:
                            out_img[i0 + 1, s] += frac * val


cdef inline void _tap_weights(double frac, double* wgt) noexcept nogil:
    # 4-tap cubic weights for offsets -1..2; tap m argument is frac + 1 - m
    wgt[0] = _cubic(frac + 1.0)
    wgt[1] = _cubic(frac)
    wgt[2] = _cubic(1.0 - frac)
    wgt[3] = _cubic(2.0 - frac)


cdef inline void _tap_dweights(double frac, double* wgt) noexcept nogil:
    # signed derivatives of the 4 tap weights
    wgt[0] = _dcubic(frac + 1.0)
    wgt[1] = _dcubic(frac)
    wgt[2] = -_dcubic(1.0 - frac)
    wgt[3] = -_dcubic(2.0 - frac)


def pull_chunk(const double[:, ::1] img, const double[:, ::1] inv_linear,
               const double[::1] shift, Py_ssize_t row0,
               double[:, ::1] out):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r, c, m, n, ir, ic, rr, cc
    cdef double a00 = inv_linear[0, 0], a01 = inv_linear[0, 1]
    cdef double a10 = inv_linear[1, 0], a11 = inv_linear[1, 1]
    cdef double sr = shift[0], sc = shift[1]
    cdef double src_r, src_c, fr, fc, acc, row_acc
    cdef double wr[4]
    cdef double wc[4]

    with nogil:
        for r in range(out.shape[0]):
            for c in range(out.shape[1]):
                src_r = a00 * (row0 + r) + a01 * c + sr
                src_c = a10 * (row0 + r) + a11 * c + sc
                ir = <Py_ssize_t>floor(src_r)
                ic = <Py_ssize_t>floor(src_c)
                fr = src_r - ir
                fc = src_c - ic
                _tap_weights(fr, wr)
                _tap_weights(fc, wc)
                acc = 0.0
                for m in range(4):
                    rr = ir - 1 + m
                    if rr < 0 or rr >= h:
                        continue
                    row_acc = 0.0
                    for n in range(4):
                        cc = ic - 1 + n
                        if 0 <= cc < w:
                            row_acc += wc[n] * img[rr, cc]
                    acc += wr[m] * row_acc
                out[r, c] = acc


def splat_chunk(const double[:, ::1] y, const double[:, ::1] inv_linear,
                const double[::1] shift, Py_ssize_t row0,
                double[:, ::1] out_img):
    cdef Py_ssize_t h = out_img.shape[0], w = out_img.shape[1]
    cdef Py_ssize_t r, c, m, n, ir, ic, rr, cc
    cdef double a00 = inv_linear[0, 0], a01 = inv_linear[0, 1]
    cdef double a10 = inv_linear[1, 0], a11 = inv_linear[1, 1]
    cdef double sr = shift[0], sc = shift[1]
    cdef double src_r, src_c, fr, fc, val
    cdef double wr[4]
    cdef double wc[4]

    with nogil:
        for r in range(y.shape[0]):
            for c in range(y.shape[1]):
                val = y[r, c]
                if val == 0.0:
                    continue
                src_r = a00 * (row0 + r) + a01 * c + sr
                src_c = a10 * (row0 + r) + a11 * c + sc
                ir = <Py_ssize_t>floor(src_r)
                ic = <Py_ssize_t>floor(src_c)
                fr = src_r - ir
                fc = src_c - ic
                _tap_weights(fr, wr)
                _tap_weights(fc, wc)
                for m in range(4):
                    rr = ir - 1 + m
                    if rr < 0 or rr >= h:
                        continue
                    for n in range(4):
                        cc = ic - 1 + n
                        if 0 <= cc < w:
                            out_img[rr, cc] += wr[m] * wc[n] * val


def grad_chunk(const double[:, ::1] img, const double[:, ::1] inv_linear,
               const double[::1] shift, Py_ssize_t row0,
               double[:, ::1] out_gr, double[:, ::1] out_gc):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r, c, m, n, ir, ic, rr, cc
    cdef double a00 = inv_linear[0, 0], a01 = inv_linear[0, 1]
    cdef double a10 = inv_linear[1, 0], a11 = inv_linear[1, 1]
    cdef double sr = shift[0], sc = shift[1]
    cdef double src_r, src_c, fr, fc, acc_r, acc_c, val
    cdef double wr[4]
    cdef double wc[4]
    cdef double dr[4]
    cdef double dc[4]

    with nogil:
        for r in range(out_gr.shape[0]):
            for c in range(out_gr.shape[1]):
                src_r = a00 * (row0 + r) + a01 * c + sr
                src_c = a10 * (row0 + r) + a11 * c + sc
                ir = <Py_ssize_t>floor(src_r)
                ic = <Py_ssize_t>floor(src_c)
                fr = src_r - ir
                fc = src_c - ic
                _tap_weights(fr, wr)
                _tap_weights(fc, wc)
                _tap_dweights(fr, dr)
                _tap_dweights(fc, dc)
                acc_r = 0.0
                acc_c = 0.0
                for m in range(4):
                    rr = ir - 1 + m
                    if rr < 0 or rr >= h:
                        continue
                    for n in range(4):
                        cc = ic - 1 + n
                        if 0 <= cc < w:
                            val = img[rr, cc]
                            acc_r += dr[m] * wc[n] * val
                            acc_c += wr[m] * dc[n] * val
                out_gr[r, c] = acc_r
                out_gc[r, c] = acc_c
