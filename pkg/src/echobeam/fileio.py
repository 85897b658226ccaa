"""Binary file formats: the USIQ channel-data container and 8-bit PGM images.

USIQ layout (little-endian)::

    magic   b"USIQ"
    version u32 = 1
    dims    u32 x 3        transmits (L or M), elements E, samples T
    params  f64 x 6        c, f0, fs, pitch, sector_step, first_angle
    payload f32[L*E*T] I, then f32[L*E*T] Q, order [transmit][element][time]
    trailer optional b"USIQ-ROLE:" + ascii role tag

Beamformed lines and envelopes reuse the container with ``E = 1`` and a
role tag ("focused", "envelope"); envelopes carry an all-zero Q plane.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from echobeam.errors import FormatError
from echobeam.phantom import ArrayGeometry, ChannelData, ScanGrid

MAGIC = b"USIQ"
VERSION = 1
_HEADER = struct.Struct("<4sI3I6d")
_TRAILER = b"USIQ-ROLE:"
HEADER_SIZE = _HEADER.size


def payload_size(dims) -> int:
    n_tx, n_el, n_t = dims
    return 2 * 4 * n_tx * n_el * n_t


def write_dataset(data: ChannelData, path) -> None:
    """Write ``data`` as USIQ; samples are stored as float32."""
    geom, grid = data.geometry, data.grid
    head = _HEADER.pack(MAGIC, VERSION, *data.shape, geom.speed_of_sound,
                        geom.carrier_frequency, geom.sample_rate, geom.pitch,
                        grid.sector_step, grid.first_angle)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(data.i, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(data.q, dtype="<f4").tobytes())
        if data.role and data.role not in ("channel", "sla"):
            fh.write(_TRAILER + data.role.encode("ascii"))


def read_dataset(path) -> ChannelData:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: header: file has {len(raw)} bytes, header needs {HEADER_SIZE}")
    magic, version, n_tx, n_el, n_t, c, f0, fs, pitch, step, first = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: magic: expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: version: expected {VERSION}, found {version}")
    if min(n_tx, n_el, n_t) == 0:
        raise FormatError(f"{path}: dims: zero-sized dimension in {(n_tx, n_el, n_t)}")
    need = payload_size((n_tx, n_el, n_t))
    body = raw[HEADER_SIZE:]
    if len(body) < need:
        raise FormatError(f"{path}: dims: payload has {len(body)} bytes, dims "
                          f"{(n_tx, n_el, n_t)} require {need}")
    rest = body[need:]
    role = "channel"
    if rest:
        if not rest.startswith(_TRAILER):
            raise FormatError(f"{path}: dims: {len(rest)} unexpected bytes after payload")
        role = rest[len(_TRAILER):].decode("ascii")
    n = n_tx * n_el * n_t
    i = np.frombuffer(body, dtype="<f4", count=n).reshape(n_tx, n_el, n_t).astype(np.float32)
    q = np.frombuffer(body, dtype="<f4", count=n, offset=4 * n).reshape(n_tx, n_el, n_t)
    q = q.astype(np.float32)
    try:
        geom = ArrayGeometry.uniform(n_el, pitch, speed_of_sound=c, carrier_frequency=f0,
                                     sample_rate=fs, sample_count=n_t)
        grid = ScanGrid(n_tx, step, first)
    except ValueError as exc:
        raise FormatError(f"{path}: params: {exc}") from exc
    return ChannelData(i, q, geom, grid, role)


def write_lines(i_lines: np.ndarray, q_lines: np.ndarray | None, geom: ArrayGeometry,
                grid: ScanGrid, path, role: str) -> None:
    """Store ``[line, time]`` data (focused I/Q or an envelope) with a role tag."""
    i3 = np.asarray(i_lines, dtype=np.float32)[:, None, :]
    q3 = np.zeros_like(i3) if q_lines is None else np.asarray(q_lines, dtype=np.float32)[:, None, :]
    g1 = ArrayGeometry.uniform(1, 0.0, speed_of_sound=geom.speed_of_sound,
                               carrier_frequency=geom.carrier_frequency,
                               sample_rate=geom.sample_rate, sample_count=i3.shape[2])
    write_dataset(ChannelData(i3, q3, g1, grid, role), path)


def write_pgm(image: np.ndarray, path) -> None:
    """Binary 8-bit PGM; values are rounded and clipped to [0, 255]."""
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(\S+)").match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: header: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"{path}: magic: not a binary PGM")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: maxval: only 8-bit PGM supported, found {maxval}")
    pix = raw[pos + 1:]
    if len(pix) != w * h:
        raise FormatError(f"{path}: dims: expected {w * h} pixels, found {len(pix)}")
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w).copy()
