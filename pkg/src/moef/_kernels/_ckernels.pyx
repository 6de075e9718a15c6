# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: radix-2 FFT magnitudes, fused Adagrad, AUC pair counts."""
import numpy as np

from libc.math cimport cos, sin, sqrt, hypot, M_PI


def fft_modulus_rows(x, Py_ssize_t n_fft):
    """Magnitudes of the ``n_fft``-point DFT of each row, zero-padded on the right."""
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = xv.shape[0], n = xv.shape[1]
    out = np.empty((rows, n_fft), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[::1] re = np.empty(n_fft), im = np.empty(n_fft)
    cdef double[::1] wr = np.empty(n_fft // 2), wi = np.empty(n_fft // 2)
    cdef Py_ssize_t[::1] rev = np.empty(n_fft, dtype=np.intp)
    cdef Py_ssize_t r, i, j, k, b, bits = 0, size, half, step, start, a, c
    cdef double tr, ti, ang

    while (1 << bits) < n_fft:
        bits += 1
    for i in range(n_fft):
        j = 0
        for b in range(bits):
            j |= ((i >> b) & 1) << (bits - 1 - b)
        rev[i] = j
    for k in range(n_fft // 2):
        ang = 2.0 * M_PI * k / n_fft
        wr[k] = cos(ang)
        wi[k] = -sin(ang)

    for r in range(rows):
        for i in range(n_fft):
            j = rev[i]
            re[i] = xv[r, j] if j < n else 0.0
            im[i] = 0.0
        size = 2
        while size <= n_fft:
            half = size >> 1
            step = n_fft // size
            for start in range(0, n_fft, size):
                for k in range(half):
                    a = start + k
                    c = a + half
                    tr = wr[k * step] * re[c] - wi[k * step] * im[c]
                    ti = wr[k * step] * im[c] + wi[k * step] * re[c]
                    re[c] = re[a] - tr
                    im[c] = im[a] - ti
                    re[a] = re[a] + tr
                    im[a] = im[a] + ti
            size <<= 1
        for i in range(n_fft):
            ov[r, i] = hypot(re[i], im[i])
    return out


def adagrad_update(double[::1] param, const double[::1] grad, double[::1] accum, double lr, double eps):
    """In place: ``accum += grad**2``; ``param -= lr * grad / (sqrt(accum) + eps)``."""
    cdef Py_ssize_t i, n = param.shape[0]
    if grad.shape[0] != n or accum.shape[0] != n:
        raise ValueError("adagrad_update: length mismatch")
    for i in range(n):
        accum[i] = accum[i] + grad[i] * grad[i]
        param[i] = param[i] - lr * grad[i] / (sqrt(accum[i]) + eps)


def auc_pair_counts(labels, scores):
    """Return ``(wins, ties, n_pos, n_neg)`` over all positive/negative pairs."""
    s = np.ascontiguousarray(scores, dtype=np.float64)
    order = np.argsort(s)  # ties are grouped below, so stability is not needed
    cdef const double[::1] sv = s
    cdef const long long[::1] lv = np.ascontiguousarray(labels, dtype=np.int64)
    cdef const Py_ssize_t[::1] ov = order.astype(np.intp)
    cdef Py_ssize_t n = sv.shape[0], i = 0, j
    cdef long long pos_g, neg_g, neg_below = 0, wins = 0, ties = 0, n_pos = 0
    while i < n:
        pos_g = 0
        neg_g = 0
        j = i
        while j < n and sv[ov[j]] == sv[ov[i]]:
            if lv[ov[j]] == 1:
                pos_g += 1
            elif lv[ov[j]] == 0:
                neg_g += 1
            j += 1
        wins += pos_g * neg_below
        ties += pos_g * neg_g
        neg_below += neg_g
        n_pos += pos_g
        i = j
    return int(wins), int(ties), int(n_pos), int(neg_below)
