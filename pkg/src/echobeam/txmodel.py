"""Transmit patterns as a linear combination matrix over single-line transmits.

Row ``j`` of ``psi`` holds the weights with which the ``L`` single-line
acquisitions are combined into emulated acquisition ``j``. ``assignment[k]``
names the acquisition that output line ``k`` is focused from.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from echobeam.errors import ConfigurationError, FormatError, ShapeError
from echobeam.phantom import ChannelData, PulseSpec, ScanGrid

INIT_KINDS = ("SLA", "MLA", "MLT", "RANDOM")


@dataclass
class TxScheme:
    psi: np.ndarray
    decimation: int
    assignment: np.ndarray
    init_kind: str = "MLA"
    trainable: bool = False

    def __post_init__(self):
        self.psi = np.asarray(self.psi)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.psi.ndim != 2:
            raise ShapeError(f"psi must be a matrix, got shape {self.psi.shape}")
        if self.assignment.shape != (self.psi.shape[1],):
            raise ShapeError(f"assignment has {self.assignment.size} entries, "
                             f"psi has {self.psi.shape[1]} columns")
        if self.assignment.size and (self.assignment.min() < 0
                                     or self.assignment.max() >= self.psi.shape[0]):
            raise ConfigurationError("assignment refers to a non-existent acquisition")
        if not np.all(np.isfinite(self.psi)):
            raise ConfigurationError("psi contains non-finite entries")
        if self.init_kind not in INIT_KINDS:
            raise ConfigurationError(f"init_kind must be one of {INIT_KINDS}")

    @property
    def acquisitions(self) -> int:
        return self.psi.shape[0]

    @property
    def lines(self) -> int:
        return self.psi.shape[1]

    def copy(self, psi=None) -> "TxScheme":
        return TxScheme(np.array(self.psi if psi is None else psi), self.decimation,
                        self.assignment.copy(), self.init_kind, self.trainable)

    def to_dict(self) -> dict:
        return {
            "init_kind": self.init_kind,
            "L": self.lines,
            "M": self.acquisitions,
            "D": self.decimation,
            "assignment": self.assignment.tolist(),
            "psi": np.asarray(self.psi, dtype=np.float64).ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TxScheme":
        try:
            n_lines, n_acq = int(d["L"]), int(d["M"])
            psi = np.asarray(d["psi"], dtype=np.float64)
            if psi.size != n_lines * n_acq:
                raise FormatError(f"psi: {psi.size} values for an {n_acq}x{n_lines} matrix")
            return cls(psi.reshape(n_acq, n_lines), int(d["D"]), d["assignment"], d["init_kind"])
        except KeyError as exc:
            raise FormatError(f"tx scheme JSON lacks field {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TxScheme":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_decimation(n_lines: int, decimation: int) -> None:
    if n_lines <= 0:
        raise ConfigurationError("L must be positive")
    if not 1 <= decimation <= n_lines:
        raise ConfigurationError(f"decimation {decimation} outside [1, {n_lines}]")


def init_sla(n_lines: int) -> TxScheme:
    return TxScheme(np.eye(n_lines), 1, np.arange(n_lines), "SLA")


def init_mla(n_lines: int, decimation: int) -> TxScheme:
    """Acquisition ``j`` averages ``decimation`` consecutive single-line transmits.

    A shorter final block is averaged over its actual width.
    """
    _check_decimation(n_lines, decimation)
    n_acq = math.ceil(n_lines / decimation)
    psi = np.zeros((n_acq, n_lines))
    for j in range(n_acq):
        lo, hi = j * decimation, min((j + 1) * decimation, n_lines)
        psi[j, lo:hi] = 1.0 / (hi - lo)
    return TxScheme(psi, decimation, np.arange(n_lines) // decimation, "MLA")


def init_mlt(n_lines: int, decimation: int) -> TxScheme:
    """Acquisition ``j`` sums the comb of transmits ``j, j+M, j+2M, ...``."""
    _check_decimation(n_lines, decimation)
    n_acq = math.ceil(n_lines / decimation)
    psi = np.zeros((n_acq, n_lines))
    for j in range(n_acq):
        psi[j, j::n_acq] = 1.0
    return TxScheme(psi, decimation, np.arange(n_lines) % n_acq, "MLT")


def init_random(n_lines: int, n_acq: int, seed: int = 0) -> TxScheme:
    if n_lines <= 0 or not 1 <= n_acq <= n_lines:
        raise ConfigurationError(f"M={n_acq} outside [1, {n_lines}]")
    rng = np.random.default_rng(seed)
    psi = rng.uniform(0.0, 1.0, (n_acq, n_lines))
    psi /= psi.sum(axis=1, keepdims=True)
    assignment = (np.arange(n_lines) * n_acq) // n_lines
    return TxScheme(psi, math.ceil(n_lines / n_acq), assignment, "RANDOM")


def make_scheme(kind: str, n_lines: int, decimation: int, seed: int = 0) -> TxScheme:
    kind = kind.upper()
    if kind == "MLA":
        return init_mla(n_lines, decimation)
    if kind == "MLT":
        return init_mlt(n_lines, decimation)
    if kind == "RANDOM":
        return init_random(n_lines, math.ceil(n_lines / decimation), seed)
    if kind == "SLA":
        return init_sla(n_lines)
    raise ConfigurationError(f"unknown init kind {kind!r}")


# Emulation and its adjoint -------------------------------------------------

def combine(psi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``out[j] = sum_i psi[j, i] * x[i]`` over the leading axis of ``x``."""
    if psi.shape[1] != x.shape[0]:
        raise ShapeError(f"psi has {psi.shape[1]} columns, data has {x.shape[0]} transmits")
    return (psi @ x.reshape(x.shape[0], -1)).reshape((psi.shape[0],) + x.shape[1:])


def combine_adjoint(psi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Transpose of :func:`combine` with respect to the data argument."""
    if psi.shape[0] != u.shape[0]:
        raise ShapeError(f"psi has {psi.shape[0]} rows, gradient has {u.shape[0]} acquisitions")
    return (psi.T @ u.reshape(u.shape[0], -1)).reshape((psi.shape[1],) + u.shape[1:])


def emulate_acquisitions(scheme: TxScheme, sla: ChannelData) -> ChannelData:
    """Apply the transmit matrix to SLA channel data, identically to I and Q."""
    if sla.transmit_count != scheme.lines:
        raise ShapeError(f"scheme expects L={scheme.lines} transmits, data has "
                         f"{sla.transmit_count}")
    psi = scheme.psi.astype(sla.i.dtype, copy=False)
    return ChannelData(combine(psi, sla.i), combine(psi, sla.q), sla.geometry, sla.grid,
                       f"emulated-{scheme.init_kind.lower()}")


def grad_psi(scheme: TxScheme, sla: ChannelData, upstream_i: np.ndarray,
             upstream_q: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss with respect to ``psi``.

    ``upstream_*`` are the loss gradients with respect to the emulated
    acquisitions, shaped ``[M, E, T]``.
    """
    want = (scheme.acquisitions,) + sla.shape[1:]
    if upstream_i.shape != want or upstream_q.shape != want:
        raise ShapeError(f"upstream gradient shape {upstream_i.shape}, expected {want}")
    if sla.transmit_count != scheme.lines:
        raise ShapeError("data and scheme disagree on L")
    n_acq, n_lines = scheme.psi.shape
    gi = upstream_i.reshape(n_acq, -1) @ sla.i.reshape(n_lines, -1).T
    gq = upstream_q.reshape(n_acq, -1) @ sla.q.reshape(n_lines, -1).T
    return gi + gq


# Beam profiles -------------------------------------------------------------

def effective_beam_profile(scheme: TxScheme, pulse: PulseSpec, grid: ScanGrid,
                           theta_samples) -> np.ndarray:
    """Angular transmit field synthesised by each acquisition, ``[M, n_theta]``."""
    theta = np.asarray(theta_samples, dtype=np.float64)
    if np.ndim(theta) != 1:
        raise ShapeError("theta_samples must be one-dimensional")
    if grid.line_count != scheme.lines:
        raise ShapeError(f"grid has {grid.line_count} lines, scheme has {scheme.lines}")
    w = pulse.tx_weight(grid.line_angles[:, None], theta[None, :])   # [L, n_theta]
    return np.asarray(scheme.psi, dtype=np.float64) @ w


def write_beam_profiles(path, theta, profiles: dict) -> None:
    """CSV with a ``theta`` column and one column per (label, acquisition)."""
    cols, names = [np.asarray(theta)], ["theta"]
    for label, prof in profiles.items():
        for j, row in enumerate(np.atleast_2d(prof)):
            cols.append(row)
            names.append(f"{label}_{j}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for vals in zip(*cols):
            w.writerow([repr(float(v)) for v in vals])
