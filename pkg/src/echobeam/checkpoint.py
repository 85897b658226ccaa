"""Training-state checkpoints: versioned binary container plus a JSON sidecar.

Layout of the binary file (little-endian)::

    b"EBCK" | u32 version | u32 header length | header JSON | tensor bytes | u32 crc32

The header records the network architecture, optimizer hyperparameters and a
directory of ``(name, dtype code, shape)`` entries in payload order. Tensors
are stored at their training precision so a reload is bit-exact. The CRC
covers everything before it. The sidecar ``<file>.json`` holds the iteration
count and the configuration hash used to refuse mismatched resumes.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from echobeam.autodiff import tensor as T
from echobeam.autodiff.net import Architecture, ReconNetwork
from echobeam.autodiff.optim import OptimizerState
from echobeam.errors import ConfigurationError, FormatError
from echobeam.txmodel import TxScheme

MAGIC = b"EBCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_CRC = struct.Struct("<I")
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class TrainState:
    net: ReconNetwork
    scheme: TxScheme
    opt_net: OptimizerState
    opt_tx: OptimizerState | None = None
    iteration: int = 0
    stage: str = "RX_ONLY"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _opt_meta(opt: OptimizerState | None):
    if opt is None:
        return None
    return {"kind": opt.kind, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "momentum": opt.momentum, "n_half": opt.n_half,
            "step": opt.step, "slots": len(opt.slots)}


def _tensors(state: TrainState):
    out = [(name, p.data) for name, p in state.net.named_parameters()]
    out.append(("psi", state.scheme.psi))
    out.append(("assignment", state.scheme.assignment))
    for tag, opt in (("opt_net", state.opt_net), ("opt_tx", state.opt_tx)):
        if opt is not None:
            out += [(f"{tag}.{k}", s) for k, s in enumerate(opt.slots)]
    return out


def encode(state: TrainState) -> bytes:
    tensors = _tensors(state)
    directory = []
    for name, arr in tensors:
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _CODES:
            raise ConfigurationError(f"cannot store {name} of dtype {arr.dtype}")
        directory.append({"name": name, "dtype": _CODES[dt], "shape": list(arr.shape)})
    a = state.net.arch
    header = {
        "architecture": {"depth": a.depth, "base_channels": a.base_channels,
                         "kernel_size": a.kernel_size, "slope": a.slope},
        "scheme": {"decimation": state.scheme.decimation, "init_kind": state.scheme.init_kind,
                   "trainable": state.scheme.trainable},
        "opt_net": _opt_meta(state.opt_net),
        "opt_tx": _opt_meta(state.opt_tx),
        "iteration": state.iteration,
        "stage": state.stage,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes]
    for (_, arr), entry in zip(tensors, directory):
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[entry["dtype"]]).tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def _opt_from(meta, slots):
    if meta is None:
        return None
    return OptimizerState(meta["kind"], meta["lr"], meta["beta1"], meta["beta2"], meta["eps"],
                          meta["momentum"], meta["n_half"], meta["step"], slots)


def decode(blob: bytes, source="<bytes>") -> TrainState:
    if len(blob) < _PREFIX.size + _CRC.size:
        raise FormatError(f"{source}: truncated checkpoint ({len(blob)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: checkpoint version {version}, this build reads {VERSION}")
    (crc,) = _CRC.unpack_from(blob, len(blob) - _CRC.size)
    if zlib.crc32(blob[:-_CRC.size]) != crc:
        raise FormatError(f"{source}: checksum mismatch, file is corrupted")
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen])
    except ValueError as exc:
        raise FormatError(f"{source}: unreadable header ({exc})") from None
    pos = _PREFIX.size + hlen
    arrays = {}
    for entry in header["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        n = int(np.prod(entry["shape"], dtype=np.int64))
        end = pos + n * dt.itemsize
        if end > len(blob) - _CRC.size:
            raise FormatError(f"{source}: payload too short for tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob[pos:end], dtype=dt).reshape(
            entry["shape"]).astype(dt.newbyteorder("="))
        pos = end
    if pos != len(blob) - _CRC.size:
        raise FormatError(f"{source}: {len(blob) - _CRC.size - pos} unexpected trailing bytes")

    arch = Architecture(**header["architecture"])
    net = ReconNetwork(arch)
    for name, _ in arch.layer_shapes():
        for suffix in ("", "_b"):
            net.theta_i[name + suffix] = T.param(arrays[f"I.{name}{suffix}"], name + suffix)
            net.theta_q[name + suffix] = T.param(arrays[f"Q.{name}{suffix}"], name + suffix)
    sm = header["scheme"]
    scheme = TxScheme(arrays["psi"], sm["decimation"], arrays["assignment"], sm["init_kind"],
                      sm["trainable"])

    def slots(tag):
        meta = header[tag]
        return [arrays[f"{tag}.{k}"] for k in range(meta["slots"])] if meta else None

    return TrainState(net, scheme, _opt_from(header["opt_net"], slots("opt_net")),
                      _opt_from(header["opt_tx"], slots("opt_tx")),
                      header["iteration"], header["stage"])


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_checkpoint(path, state: TrainState, cfg_hash: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(state))
    side = {"iteration": state.iteration, "stage": state.stage, "config_hash": cfg_hash,
            "version": VERSION}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path, expect_hash: str | None = None) -> TrainState:
    """Load a checkpoint; with ``expect_hash`` refuse one written under another config."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    state = decode(blob, str(path))
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except ValueError:
            raise FormatError(f"{side}: sidecar is not valid JSON") from None
        if meta.get("iteration") != state.iteration:
            raise FormatError(f"{side}: sidecar iteration {meta.get('iteration')} disagrees "
                              f"with checkpoint iteration {state.iteration}")
        if expect_hash is not None and meta.get("config_hash") != expect_hash:
            raise ConfigurationError(
                f"{path}: written under config {meta.get('config_hash')!r}, current config "
                f"is {expect_hash!r}; refusing to resume")
    elif expect_hash is not None:
        raise FormatError(f"{side}: sidecar missing, cannot verify config hash")
    return state
