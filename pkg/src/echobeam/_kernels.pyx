# cython: language_level=3
"""Compiled hot loops: pulse-echo accumulation and dynamic focusing.

Signatures mirror ``echobeam._fallback``; outputs are accumulated in place
into caller-provided float64 arrays, in a fixed loop order so repeated calls
are bitwise reproducible.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, exp, floor, sin, sqrt

cnp.import_array()


def simulate_accumulate(
    double[:, :, ::1] out_i,
    double[:, :, ::1] out_q,
    const double[::1] line_angles,
    const double[::1] r,
    const double[::1] theta,
    const double[::1] amp,
    const double[::1] elem_x,
    double c,
    double omega0,
    double fs,
    double env_sigma,
    double tx_sigma,
    double half_window,
):
    cdef Py_ssize_t n_lines = out_i.shape[0]
    cdef Py_ssize_t n_elem = out_i.shape[1]
    cdef Py_ssize_t n_t = out_i.shape[2]
    cdef Py_ssize_t n_s = r.shape[0]
    cdef Py_ssize_t span = <Py_ssize_t>floor(2.0 * half_window) + 2
    cdef Py_ssize_t i, s, m, n, n_lo, n_hi, cnt
    cdef double xs, zs, dx, tau, ph, cph, sph, centre, dt, a, wi
    cdef double inv_tx = 1.0 / (2.0 * tx_sigma * tx_sigma)
    cdef double inv_env = 1.0 / (2.0 * env_sigma * env_sigma)
    cdef double[::1] w = np.empty(n_lines)
    cdef double[::1] gc = np.empty(span)
    cdef double[::1] gs = np.empty(span)
    # Delay, phase and pulse samples do not depend on the transmit line, so
    # they are evaluated once per (scatterer, element). Each transmit still
    # accumulates scatterers in ascending order.
    with nogil:
        for s in range(n_s):
            for i in range(n_lines):
                a = line_angles[i] - theta[s]
                w[i] = amp[s] * exp(-a * a * inv_tx)
            xs = r[s] * sin(theta[s])
            zs = r[s] * cos(theta[s])
            for m in range(n_elem):
                dx = xs - elem_x[m]
                tau = (r[s] + sqrt(dx * dx + zs * zs)) / c
                ph = -omega0 * tau
                cph = cos(ph)
                sph = sin(ph)
                centre = tau * fs
                n_lo = <Py_ssize_t>ceil(centre - half_window)
                n_hi = <Py_ssize_t>floor(centre + half_window)
                if n_lo < 0:
                    n_lo = 0
                if n_hi > n_t - 1:
                    n_hi = n_t - 1
                cnt = n_hi - n_lo + 1
                if cnt <= 0:
                    continue
                for n in range(cnt):
                    dt = (n + n_lo) / fs - tau
                    a = exp(-dt * dt * inv_env)
                    gc[n] = a * cph
                    gs[n] = a * sph
                for i in range(n_lines):
                    wi = w[i]
                    for n in range(cnt):
                        out_i[i, m, n_lo + n] += wi * gc[n]
                        out_q[i, m, n_lo + n] += wi * gs[n]


cdef inline double _delay(double t, double sin_a, double dm, double c) nogil:
    cdef double u = dm / c
    cdef double disc = t * t * 0.25 - t * sin_a * u + u * u
    if disc < 0.0:
        disc = 0.0
    return 0.5 * t + sqrt(disc)


def focus_forward(
    const double[:, :, ::1] data_i,
    const double[:, :, ::1] data_q,
    const cnp.int64_t[::1] assign,
    const double[::1] line_angles,
    const double[::1] elem_x,
    const double[::1] apod,
    double c,
    double omega0,
    double fs,
    double[:, ::1] out_i,
    double[:, ::1] out_q,
):
    cdef Py_ssize_t n_lines = out_i.shape[0]
    cdef Py_ssize_t n_elem = data_i.shape[1]
    cdef Py_ssize_t n_t = data_i.shape[2]
    cdef Py_ssize_t k, m, n, j, i0
    cdef double sin_a, t, th, pos, f, w0, w1, ph, cs, sn, vi, vq
    with nogil:
        for k in range(n_lines):
            j = assign[k]
            sin_a = sin(line_angles[k])
            for m in range(n_elem):
                if apod[m] == 0.0:
                    continue
                for n in range(n_t):
                    t = n / fs
                    th = _delay(t, sin_a, elem_x[m], c)
                    pos = th * fs
                    i0 = <Py_ssize_t>floor(pos)
                    f = pos - i0
                    w0 = 0.0
                    w1 = 0.0
                    vi = 0.0
                    vq = 0.0
                    if 0 <= i0 < n_t:
                        w0 = (1.0 - f) * apod[m]
                        vi = w0 * data_i[j, m, i0]
                        vq = w0 * data_q[j, m, i0]
                    if 0 <= i0 + 1 < n_t:
                        w1 = f * apod[m]
                        vi = vi + w1 * data_i[j, m, i0 + 1]
                        vq = vq + w1 * data_q[j, m, i0 + 1]
                    ph = omega0 * (th - t)
                    cs = cos(ph)
                    sn = sin(ph)
                    out_i[k, n] += cs * vi - sn * vq
                    out_q[k, n] += sn * vi + cs * vq


def focus_adjoint(
    const double[:, ::1] grad_i,
    const double[:, ::1] grad_q,
    const cnp.int64_t[::1] assign,
    const double[::1] line_angles,
    const double[::1] elem_x,
    const double[::1] apod,
    double c,
    double omega0,
    double fs,
    double[:, :, ::1] out_i,
    double[:, :, ::1] out_q,
):
    cdef Py_ssize_t n_lines = grad_i.shape[0]
    cdef Py_ssize_t n_elem = out_i.shape[1]
    cdef Py_ssize_t n_t = out_i.shape[2]
    cdef Py_ssize_t k, m, n, j, i0
    cdef double sin_a, t, th, pos, f, w, ph, cs, sn, gi, gq, ri, rq
    with nogil:
        for k in range(n_lines):
            j = assign[k]
            sin_a = sin(line_angles[k])
            for m in range(n_elem):
                if apod[m] == 0.0:
                    continue
                for n in range(n_t):
                    t = n / fs
                    th = _delay(t, sin_a, elem_x[m], c)
                    pos = th * fs
                    i0 = <Py_ssize_t>floor(pos)
                    f = pos - i0
                    ph = omega0 * (th - t)
                    cs = cos(ph)
                    sn = sin(ph)
                    gi = grad_i[k, n]
                    gq = grad_q[k, n]
                    # transpose of the rotation
                    ri = cs * gi + sn * gq
                    rq = -sn * gi + cs * gq
                    if 0 <= i0 < n_t:
                        w = (1.0 - f) * apod[m]
                        out_i[j, m, i0] += w * ri
                        out_q[j, m, i0] += w * rq
                    if 0 <= i0 + 1 < n_t:
                        w = f * apod[m]
                        out_i[j, m, i0 + 1] += w * ri
                        out_q[j, m, i0 + 1] += w * rq


ctypedef fused real:
    float
    double


def im2col(const real[:, :, ::1] x, Py_ssize_t k, real[:, ::1] cols):
    """Zero-padded 'same' patches of ``x [H, W, C]`` into ``cols [H*W, k*k*C]``."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t i, j, a, b, ch, si, sj, row, col
    with nogil:
        for i in range(h):
            for j in range(w):
                row = i * w + j
                col = 0
                for a in range(k):
                    si = i + a - p
                    for b in range(k):
                        sj = j + b - p
                        if si < 0 or si >= h or sj < 0 or sj >= w:
                            for ch in range(c):
                                cols[row, col + ch] = 0
                        else:
                            for ch in range(c):
                                cols[row, col + ch] = x[si, sj, ch]
                        col += c
