# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled LSTM recurrence.

Arrays are time-major: ``(T, B, ...)``. Gate blocks along the last axis are
ordered forget, input, candidate, output. The input projection
``x_t @ W_x + b`` for every step is computed by the caller in one GEMM; only
the ``h_{t-1} @ W_h`` term is inside the loop.

``gates``, ``dh_up`` and ``dz`` may be strided views (e.g. one direction's
half of a bidirectional buffer) as long as the last axis is contiguous and
the batch rows are evenly spaced. With ``reverse`` the sequence is consumed
from the last step to the first; all arrays stay indexed in time order.

The elementwise loops run over raw contiguous pointers so that gcc can map
exp onto glibc's vector math library.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmin, fmax
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


# glibc's vector tanh is ~40x slower than its vector exp, so both
# nonlinearities go through exp. Arguments are clamped where the result is
# already saturated in double precision, which also rules out overflow.
cdef inline double _sigmoid(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-fmax(z, -700.0)))


cdef inline double _tanh(double z) noexcept nogil:
    return 1.0 - 2.0 / (1.0 + exp(2.0 * fmin(fmax(z, -20.0), 20.0)))


cdef void _cell_forward(double* z, const double* cprev, double* c, double* h,
                        int H) noexcept nogil:
    cdef int j
    cdef double* f = z
    cdef double* i = z + H
    cdef double* g = z + 2 * H
    cdef double* o = z + 3 * H
    for j in range(2 * H):
        z[j] = _sigmoid(z[j])
    for j in range(H):
        g[j] = _tanh(g[j])
    for j in range(H):
        o[j] = _sigmoid(o[j])
    for j in range(H):
        c[j] = f[j] * cprev[j] + i[j] * g[j]
    for j in range(H):
        h[j] = _tanh(c[j])
    for j in range(H):
        h[j] = o[j] * h[j]


cdef void _cell_backward(const double* gate, const double* cprev, const double* c,
                         const double* dh_up, double* dh, double* dc, double* dz,
                         double* tc, int H) noexcept nogil:
    cdef int j
    cdef const double* f = gate
    cdef const double* i = gate + H
    cdef const double* g = gate + 2 * H
    cdef const double* o = gate + 3 * H
    cdef double dhv, dcv
    for j in range(H):
        tc[j] = _tanh(c[j])
    for j in range(H):
        dhv = dh[j] + dh_up[j]
        dcv = dc[j] + dhv * o[j] * (1.0 - tc[j] * tc[j])
        dz[j] = dcv * cprev[j] * f[j] * (1.0 - f[j])
        dz[H + j] = dcv * g[j] * i[j] * (1.0 - i[j])
        dz[2 * H + j] = dcv * i[j] * (1.0 - g[j] * g[j])
        dz[3 * H + j] = dhv * tc[j] * o[j] * (1.0 - o[j])
        dc[j] = dcv * f[j]



cdef _check_rows(a, str name, int T, int B, int F):
    """Validate a (T, B, F) float64 view whose rows are BLAS-addressable."""
    if not isinstance(a, np.ndarray) or a.dtype != np.float64 or a.ndim != 3:
        raise TypeError(f"{name} must be a 3-d float64 ndarray")
    if a.shape[0] != T or a.shape[1] != B or a.shape[2] != F:
        raise ValueError(f"{name} has shape {a.shape}, expected {(T, B, F)}")
    if not a.flags.aligned or (F > 1 and a.strides[2] != 8) or a.strides[1] % 8 or a.strides[0] % 8:
        raise ValueError(f"{name} needs a contiguous last axis and 8-byte aligned strides")
    if B > 1 and a.strides[1] // 8 < F:
        raise ValueError(f"{name} batch rows overlap")


cdef inline Py_ssize_t _row_stride(a):
    # numpy may report any stride for a length-1 axis; BLAS needs ld >= rows
    return a.shape[2] if a.shape[1] == 1 else a.strides[1] // 8


def lstm_forward(gates_arr, double[:, ::1] w_h, double[:, ::1] h0, double[:, ::1] c0,
                 bint reverse=False):
    """Run the recurrence in place.

    ``gates_arr`` (T, B, 4H) holds the input projections on entry and the
    activated gates on exit. Returns new contiguous ``(c, h)`` arrays of
    shape (T, B, H).
    """
    cdef int T = gates_arr.shape[0]
    cdef int B = gates_arr.shape[1]
    cdef int G = gates_arr.shape[2]
    cdef int H = G // 4
    _check_rows(gates_arr, "gates", T, B, G)
    if not gates_arr.flags.writeable:
        raise ValueError("gates must be writeable")
    if w_h.shape[0] != H or w_h.shape[1] != G or h0.shape[0] != B or h0.shape[1] != H \
            or c0.shape[0] != B or c0.shape[1] != H:
        raise ValueError("w_h must be (H, 4H) and h0, c0 must be (B, H)")
    c_arr = np.empty((T, B, H), dtype=np.float64)
    h_arr = np.empty((T, B, H), dtype=np.float64)
    if T == 0 or B == 0 or H == 0:
        return c_arr, h_arr
    cdef double* gates = <double*>cnp.PyArray_DATA(gates_arr)
    cdef Py_ssize_t st = gates_arr.strides[0] // 8
    cdef int ldz = <int>_row_stride(gates_arr)
    cdef double* c = <double*>cnp.PyArray_DATA(c_arr)
    cdef double* h = <double*>cnp.PyArray_DATA(h_arr)
    cdef int s, t, tp, b
    cdef double one = 1.0
    cdef const double* hprev
    cdef const double* cprev
    cdef double* gt
    cdef int ldh = H
    with nogil:
        for s in range(T):
            t = T - 1 - s if reverse else s
            tp = t + 1 if reverse else t - 1
            hprev = &h0[0, 0] if s == 0 else h + <Py_ssize_t>tp * B * H
            gt = gates + t * st
            # gates[t] += hprev @ w_h   (row-major; the column-major view is transposed)
            dgemm(b"N", b"N", &G, &B, &H, &one, &w_h[0, 0], &G, <double*>hprev, &ldh,
                  &one, gt, &ldz)
            for b in range(B):
                cprev = &c0[b, 0] if s == 0 else c + (<Py_ssize_t>tp * B + b) * H
                _cell_forward(gt + <Py_ssize_t>b * ldz, cprev, c + (<Py_ssize_t>t * B + b) * H,
                              h + (<Py_ssize_t>t * B + b) * H, H)
    return c_arr, h_arr


def lstm_backward(dh_up_arr, gates_arr, double[:, :, ::1] c, double[:, ::1] c0,
                  double[:, ::1] w_h, dz_arr, bint reverse=False):
    """Backpropagate through time from zero final-state gradients.

    ``dh_up_arr`` (T, B, H) is the loss gradient w.r.t. every h_t; the
    gradient w.r.t. the gate pre-activations is written into ``dz_arr``
    (T, B, 4H). Returns ``(dh0, dc0)``.
    """
    cdef int T = gates_arr.shape[0]
    cdef int B = gates_arr.shape[1]
    cdef int G = gates_arr.shape[2]
    cdef int H = G // 4
    _check_rows(gates_arr, "gates", T, B, G)
    _check_rows(dz_arr, "dz", T, B, G)
    _check_rows(dh_up_arr, "dh_up", T, B, H)
    if not dz_arr.flags.writeable:
        raise ValueError("dz must be writeable")
    if c.shape[0] != T or c.shape[1] != B or c.shape[2] != H or w_h.shape[0] != H or w_h.shape[1] != G \
            or c0.shape[0] != B or c0.shape[1] != H:
        raise ValueError("c must be (T, B, H), c0 (B, H) and w_h (H, 4H)")
    dh_arr = np.zeros((B, H), dtype=np.float64)
    dc_arr = np.zeros((B, H), dtype=np.float64)
    if T == 0 or B == 0 or H == 0:
        return dh_arr, dc_arr
    dhn_arr = np.empty((B, H), dtype=np.float64)
    tc_arr = np.empty(H, dtype=np.float64)
    cdef const double* gates = <double*>cnp.PyArray_DATA(gates_arr)
    cdef Py_ssize_t sg = gates_arr.strides[0] // 8
    cdef Py_ssize_t lg = _row_stride(gates_arr)
    cdef double* dz = <double*>cnp.PyArray_DATA(dz_arr)
    cdef Py_ssize_t sz = dz_arr.strides[0] // 8
    cdef int ldz = <int>_row_stride(dz_arr)
    cdef const double* dh_up = <double*>cnp.PyArray_DATA(dh_up_arr)
    cdef Py_ssize_t su = dh_up_arr.strides[0] // 8
    cdef Py_ssize_t lu = _row_stride(dh_up_arr)
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dc = dc_arr
    cdef double[:, ::1] dhn = dhn_arr
    cdef double[::1] tc = tc_arr
    cdef int s, t, tp, b
    cdef const double* cprev
    cdef double* zt
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef int ldh = H
    with nogil:
        for s in range(T - 1, -1, -1):
            t = T - 1 - s if reverse else s
            tp = t + 1 if reverse else t - 1
            zt = dz + t * sz
            for b in range(B):
                cprev = &c0[b, 0] if s == 0 else &c[tp, b, 0]
                _cell_backward(gates + t * sg + b * lg, cprev, &c[t, b, 0], dh_up + t * su + b * lu,
                               &dh[b, 0], &dc[b, 0], zt + <Py_ssize_t>b * ldz, &tc[0], H)
            # dh_prev = dz[t] @ w_h.T
            dgemm(b"T", b"N", &H, &B, &G, &one, &w_h[0, 0], &G, zt, &ldz,
                  &zero, &dhn[0, 0], &ldh)
            memcpy(&dh[0, 0], &dhn[0, 0], B * H * sizeof(double))
    return dh_arr, dc_arr
