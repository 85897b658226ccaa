"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and in-place accumulation semantics. Summation order differs
from the compiled loops, so results agree to rounding, not bitwise.
"""
import numpy as np

_CHUNK = 512


def simulate_accumulate(out_i, out_q, line_angles, r, theta, amp, elem_x,
                        c, omega0, fs, env_sigma, tx_sigma, half_window):
    n_lines, n_elem, n_t = out_i.shape
    if r.size == 0:
        return
    inv_tx = 1.0 / (2.0 * tx_sigma * tx_sigma)
    inv_env = 1.0 / (2.0 * env_sigma * env_sigma)
    span = int(np.floor(2.0 * half_window)) + 2
    offsets = np.arange(span)
    xs = r * np.sin(theta)
    zs = r * np.cos(theta)
    elem_base = (np.arange(n_elem) * n_t)[None, :, None]
    for start in range(0, r.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        dx = xs[sl, None] - elem_x[None, :]
        tau = (r[sl, None] + np.sqrt(dx * dx + zs[sl, None] ** 2)) / c   # [S, E]
        ph = -omega0 * tau
        cph, sph = np.cos(ph), np.sin(ph)
        centre = tau * fs
        n_lo = np.ceil(centre - half_window)
        n_hi = np.floor(centre + half_window)
        n = n_lo[..., None] + offsets                                     # [S, E, W]
        valid = (n <= n_hi[..., None]) & (n >= 0) & (n <= n_t - 1)
        dt = n / fs - tau[..., None]
        g = np.exp(-dt * dt * inv_env)
        flat = (elem_base + np.where(valid, n, 0).astype(np.int64))[valid]
        gi = (g * cph[..., None])
        gq = (g * sph[..., None])
        for i in range(n_lines):
            a = line_angles[i] - theta[sl]
            w = amp[sl] * np.exp(-a * a * inv_tx)
            wi = (gi * w[:, None, None])[valid]
            wq = (gq * w[:, None, None])[valid]
            out_i[i] += np.bincount(flat, wi, minlength=n_elem * n_t).reshape(n_elem, n_t)
            out_q[i] += np.bincount(flat, wq, minlength=n_elem * n_t).reshape(n_elem, n_t)


def _line_tables(sin_a, elem_x, c, omega0, fs, n_t):
    t = np.arange(n_t) / fs
    u = (elem_x / c)[:, None]
    disc = np.maximum(t * t * 0.25 - t * sin_a * u + u * u, 0.0)
    th = 0.5 * t + np.sqrt(disc)                                          # [E, T]
    pos = th * fs
    i0 = np.floor(pos)
    f = pos - i0
    i0 = i0.astype(np.int64)
    ok0 = (i0 >= 0) & (i0 < n_t)
    ok1 = (i0 + 1 >= 0) & (i0 + 1 < n_t)
    w0 = np.where(ok0, 1.0 - f, 0.0)
    w1 = np.where(ok1, f, 0.0)
    ph = omega0 * (th - t)
    return np.clip(i0, 0, n_t - 1), np.clip(i0 + 1, 0, n_t - 1), w0, w1, np.cos(ph), np.sin(ph)


def focus_forward(data_i, data_q, assign, line_angles, elem_x, apod,
                  c, omega0, fs, out_i, out_q):
    n_elem, n_t = data_i.shape[1:]
    rows = np.arange(n_elem)[:, None]
    for k in range(out_i.shape[0]):
        j = assign[k]
        i0, i1, w0, w1, cs, sn = _line_tables(np.sin(line_angles[k]), elem_x, c, omega0, fs, n_t)
        w0 = w0 * apod[:, None]
        w1 = w1 * apod[:, None]
        di, dq = data_i[j], data_q[j]
        vi = w0 * di[rows, i0] + w1 * di[rows, i1]
        vq = w0 * dq[rows, i0] + w1 * dq[rows, i1]
        out_i[k] += (cs * vi - sn * vq).sum(axis=0)
        out_q[k] += (sn * vi + cs * vq).sum(axis=0)


def focus_adjoint(grad_i, grad_q, assign, line_angles, elem_x, apod,
                  c, omega0, fs, out_i, out_q):
    n_elem, n_t = out_i.shape[1:]
    base = (np.arange(n_elem) * n_t)[:, None]
    size = n_elem * n_t
    for k in range(grad_i.shape[0]):
        j = assign[k]
        i0, i1, w0, w1, cs, sn = _line_tables(np.sin(line_angles[k]), elem_x, c, omega0, fs, n_t)
        ri = cs * grad_i[k] + sn * grad_q[k]
        rq = -sn * grad_i[k] + cs * grad_q[k]
        w0 = w0 * apod[:, None]
        w1 = w1 * apod[:, None]
        idx = np.concatenate([(base + i0).ravel(), (base + i1).ravel()])
        out_i[j] += np.bincount(idx, np.concatenate([(w0 * ri).ravel(), (w1 * ri).ravel()]),
                                minlength=size).reshape(n_elem, n_t)
        out_q[j] += np.bincount(idx, np.concatenate([(w0 * rq).ravel(), (w1 * rq).ravel()]),
                                minlength=size).reshape(n_elem, n_t)


def im2col(x, k, cols):
    h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (h, w, k, k, c), (s0, s1, s0, s1, s2),
                                          writeable=False)
    cols[...] = win.reshape(h * w, k * k * c)
