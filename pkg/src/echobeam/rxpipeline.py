"""Receive beamforming: dynamic focusing, envelope, log compression, scan conversion.

Dynamic focusing resamples each element trace at the per-sample receive
delay, rotates the phase by the delay offset, weights by the apodization
window and sums over elements. The operation is linear in the channel data;
:func:`focus_adjoint` is its exact transpose and serves as the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from echobeam import kernels
from echobeam.errors import ConfigurationError, NumericalError, ShapeError
from echobeam.phantom import ArrayGeometry, ChannelData, ScanGrid
from echobeam.txmodel import TxScheme

ENV_EPS = 1e-12
SLA = "SLA"


@dataclass
class ApodizationWindow:
    weights: np.ndarray
    kind: str = "HANN"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ConfigurationError("apodization weights must lie in [0, 1]")
        if not np.allclose(self.weights, self.weights[::-1], rtol=0, atol=1e-15):
            raise ConfigurationError("apodization weights must be symmetric")

    @classmethod
    def make(cls, kind: str, element_count: int) -> "ApodizationWindow":
        kind = kind.upper()
        if kind == "RECT":
            return cls(np.ones(element_count), "RECT")
        if kind == "HANN":
            # endpoints excluded so no element is switched off entirely
            m = np.arange(1, element_count + 1)
            w = 0.5 * (1.0 - np.cos(2.0 * np.pi * m / (element_count + 1)))
            return cls(0.5 * (w + w[::-1]), "HANN")
        raise ConfigurationError(f"unknown apodization kind {kind!r}")


@dataclass
class FocusedIQ:
    i: np.ndarray
    q: np.ndarray
    grid: ScanGrid
    source_scheme: object = SLA

    def __post_init__(self):
        if self.i.shape != self.q.shape:
            raise ShapeError(f"I {self.i.shape} and Q {self.q.shape} differ")


@dataclass
class EnvelopeImage:
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise NumericalError("envelope values must be non-negative")


# Point operations -----------------------------------------------------------

def compute_delay(t, alpha, dm, c):
    """Receive time ``t_hat`` at element offset ``dm`` for an echo from range ``c*t/2``.

    Works elementwise on arrays.
    """
    u = np.divide(dm, c)
    disc = np.multiply(t, t) * 0.25 - np.multiply(t, np.sin(alpha)) * u + u * u
    if np.any(disc < 0):
        raise NumericalError("negative discriminant in delay computation")
    return 0.5 * np.asarray(t) + np.sqrt(disc)


def phase_rotate(i, q, dt, omega0):
    ph = np.multiply(omega0, dt)
    cs, sn = np.cos(ph), np.sin(ph)
    return cs * i - sn * q, sn * i + cs * q


def sample_delayed(signal, t_hat, fs):
    """Linear interpolation of ``signal`` at time ``t_hat``; zero outside the record."""
    signal = np.asarray(signal)
    n_t = signal.shape[-1]
    pos = np.asarray(t_hat, dtype=np.float64) * fs
    i0 = np.floor(pos).astype(np.int64)
    f = pos - i0
    ok0 = (i0 >= 0) & (i0 < n_t)
    ok1 = (i0 + 1 >= 0) & (i0 + 1 < n_t)
    v0 = np.where(ok0, signal[..., np.clip(i0, 0, n_t - 1)], 0.0)
    v1 = np.where(ok1, signal[..., np.clip(i0 + 1, 0, n_t - 1)], 0.0)
    return (1.0 - f) * v0 + f * v1


# Dynamic focusing -----------------------------------------------------------

def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _assignment_for(scheme, n_lines: int) -> np.ndarray:
    if scheme is None or (isinstance(scheme, str) and scheme == SLA):
        return np.arange(n_lines, dtype=np.int64)
    a = np.ascontiguousarray(scheme.assignment, dtype=np.int64)
    if a.shape != (n_lines,):
        raise ShapeError(f"assignment covers {a.size} lines, grid has {n_lines}")
    return a


def focus_arrays(data_i, data_q, assignment, geom: ArrayGeometry, grid: ScanGrid,
                 apod) -> tuple:
    """Array-level dynamic focusing: ``[M, E, T]`` in, ``[L, T]`` out (float64)."""
    n_acq, n_elem, n_t = data_i.shape
    if n_elem != geom.element_count or n_t != geom.sample_count:
        raise ShapeError(f"data {data_i.shape} does not match geometry "
                         f"(E={geom.element_count}, T={geom.sample_count})")
    assignment = np.ascontiguousarray(assignment, dtype=np.int64)
    if assignment.size and assignment.max() >= n_acq:
        raise ShapeError(f"assignment refers to acquisition {assignment.max()}, data has {n_acq}")
    out_i = np.zeros((grid.line_count, n_t))
    out_q = np.zeros((grid.line_count, n_t))
    kernels.focus_forward(_f64(data_i), _f64(data_q), assignment, _f64(grid.line_angles),
                          geom.elements, _f64(apod), float(geom.speed_of_sound),
                          float(geom.omega0), float(geom.sample_rate), out_i, out_q)
    return out_i, out_q


def focus_adjoint(grad_i, grad_q, assignment, n_acq: int, geom: ArrayGeometry,
                  grid: ScanGrid, apod) -> tuple:
    """Transpose of :func:`focus_arrays`: ``[L, T]`` gradients to ``[M, E, T]``."""
    shape = (n_acq, geom.element_count, geom.sample_count)
    out_i = np.zeros(shape)
    out_q = np.zeros(shape)
    kernels.focus_adjoint(_f64(grad_i), _f64(grad_q), np.ascontiguousarray(assignment, np.int64),
                          _f64(grid.line_angles), geom.elements, _f64(apod),
                          float(geom.speed_of_sound), float(geom.omega0),
                          float(geom.sample_rate), out_i, out_q)
    return out_i, out_q


def dynamic_focus(data: ChannelData, scheme: TxScheme | str | None, geom: ArrayGeometry,
                  grid: ScanGrid, window: ApodizationWindow) -> FocusedIQ:
    """Focus every grid line from the acquisition it is assigned to."""
    assignment = _assignment_for(scheme, grid.line_count)
    if window.weights.size != geom.element_count:
        raise ShapeError(f"window has {window.weights.size} weights for "
                         f"{geom.element_count} elements")
    fi, fq = focus_arrays(data.i, data.q, assignment, geom, grid, window.weights)
    dtype = np.result_type(data.i.dtype, np.float32)
    return FocusedIQ(fi.astype(dtype, copy=False), fq.astype(dtype, copy=False), grid,
                     SLA if scheme is None else scheme)


# Image formation ------------------------------------------------------------

def envelope(i, q) -> EnvelopeImage:
    i = np.asarray(i)
    q = np.asarray(q)
    if i.shape != q.shape:
        raise ShapeError(f"I {i.shape} and Q {q.shape} differ")
    return EnvelopeImage(np.sqrt(i * i + q * q + ENV_EPS * ENV_EPS))


def envelope_grad(i, q, upstream):
    """Gradients of ``sum(upstream * env)`` with respect to I and Q."""
    env = np.sqrt(i * i + q * q + ENV_EPS * ENV_EPS)
    return upstream * i / env, upstream * q / env


def log_compress(env, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Display image in [0, 255]: dB relative to the frame maximum, clamped."""
    v = np.asarray(env.values if isinstance(env, EnvelopeImage) else env, dtype=np.float64)
    if np.any(v < 0):
        raise NumericalError("log compression needs a non-negative envelope")
    peak = v.max() if v.size else 0.0
    if peak <= ENV_EPS:
        return np.zeros_like(v)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(v / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    return 255.0 * (db + dynamic_range_db) / dynamic_range_db


def scan_convert(image, grid: ScanGrid, geom: ArrayGeometry, raster) -> np.ndarray:
    """Bilinear polar-to-Cartesian resampling onto a ``(width, height)`` raster.

    The raster spans the sector's lateral extent at full depth and depths from
    0 to the last sample's range. Pixels outside the sector are 0.
    """
    width, height = raster
    if width < 2 or height < 2:
        raise ConfigurationError(f"raster {raster!r} too small")
    img = np.asarray(image, dtype=np.float64)
    n_lines, n_t = img.shape
    if n_lines != grid.line_count:
        raise ShapeError(f"image has {n_lines} lines, grid has {grid.line_count}")
    r_max = geom.speed_of_sound * (n_t - 1) / (2.0 * geom.sample_rate)
    angles = grid.line_angles
    half = max(abs(angles[0]), abs(angles[-1]))
    x = np.linspace(-r_max * np.sin(half), r_max * np.sin(half), width)
    z = np.linspace(0.0, r_max, height)
    xx, zz = np.meshgrid(x, z)
    r = np.hypot(xx, zz)
    alpha = np.arctan2(xx, zz)
    li = (alpha - angles[0]) / grid.sector_step
    ti = r * 2.0 / geom.speed_of_sound * geom.sample_rate
    inside = (li >= 0) & (li <= n_lines - 1) & (ti >= 0) & (ti <= n_t - 1)
    l0 = np.clip(np.floor(li), 0, max(n_lines - 2, 0)).astype(np.int64)
    t0 = np.clip(np.floor(ti), 0, max(n_t - 2, 0)).astype(np.int64)
    fl = np.clip(li - l0, 0.0, 1.0)
    ft = np.clip(ti - t0, 0.0, 1.0)
    l1 = np.minimum(l0 + 1, n_lines - 1)
    t1 = np.minimum(t0 + 1, n_t - 1)
    out = ((1 - fl) * (1 - ft) * img[l0, t0] + fl * (1 - ft) * img[l1, t0]
           + (1 - fl) * ft * img[l0, t1] + fl * ft * img[l1, t1])
    return np.where(inside, out, 0.0)


def das_reconstruct(data: ChannelData, scheme, geom: ArrayGeometry, grid: ScanGrid,
                    window: ApodizationWindow) -> EnvelopeImage:
    """Delay-and-sum baseline: focusing followed by envelope, no network."""
    f = dynamic_focus(data, scheme, geom, grid, window)
    return envelope(f.i, f.q)
