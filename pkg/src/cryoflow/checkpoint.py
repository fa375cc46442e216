"""Versioned binary checkpoints for training states.

Layout: magic, little-endian uint32 header length, a canonical JSON header
(sorted keys, compact separators), then the raw float64 bytes of every array
in header order. The encoding has no timestamps or environment data, so
save(load(f)) reproduces ``f`` byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import UnsupportedFormatError
from .generative import FlowParams, ParamSet, TrainState, VaeParams

_MAGIC = b"CFCKPT1\n"
_FORMAT_VERSION = 1


def _params_class(kind: str):
    if kind == "vae":
        return VaeParams
    if kind == "flow":
        return FlowParams
    raise UnsupportedFormatError(f"unknown checkpoint kind {kind!r}")


def dump_state(state: TrainState) -> bytes:
    names = list(state.params.tensors.keys())
    header = {
        "format_version": _FORMAT_VERSION,
        "kind": state.kind,
        "arch": state.params.arch,
        "step": int(state.step),
        "seed": int(state.seed),
        "loss_history": state.loss_history,
        "hyper": state.hyper,
        "param_names": names,
        "shapes": {n: list(state.params[n].data.shape) for n in names},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<I", len(blob)), blob]
    for n in names:
        chunks.append(state.params[n].data.astype("<f8").tobytes())
    for n in names:
        chunks.append(state.opt_m[n].astype("<f8").tobytes())
    for n in names:
        chunks.append(state.opt_v[n].astype("<f8").tobytes())
    return b"".join(chunks)


def parse_state(data: bytes) -> TrainState:
    if not data.startswith(_MAGIC):
        raise UnsupportedFormatError("not a cryoflow checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, len(_MAGIC))
    start = len(_MAGIC) + 4
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    if header.get("format_version") != _FORMAT_VERSION:
        raise UnsupportedFormatError(
            f"unsupported checkpoint version {header.get('format_version')}"
        )
    names = header["param_names"]
    shapes = {n: tuple(header["shapes"][n]) for n in names}
    offset = start + hlen

    def take(n):
        nonlocal offset
        count = int(np.prod(shapes[n])) if shapes[n] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shapes[n])
        offset += count * 8
        return arr.astype(np.float64)

    tensors = {n: nm.Tensor(take(n), requires_grad=True) for n in names}
    opt_m = {n: take(n) for n in names}
    opt_v = {n: take(n) for n in names}
    params = _params_class(header["kind"])(tensors, header["arch"])
    return TrainState(
        params,
        opt_m,
        opt_v,
        int(header["step"]),
        int(header["seed"]),
        header["loss_history"],
        header.get("hyper", {}),
    )


def save_state(state: TrainState, path) -> None:
    Path(path).write_bytes(dump_state(state))


def load_state(path) -> TrainState:
    return parse_state(Path(path).read_bytes())
