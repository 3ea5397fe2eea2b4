"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic      14 bytes  b"MOEMAMBA-CKPT\\n"
    version    uint32
    hdr_len    uint64
    header     hdr_len bytes of UTF-8 JSON
    payload    raw tensor bytes, concatenated in header order

The header echoes the model config, names the RNG convention, and lists
every tensor as {name, shape, dtype, offset, nbytes}; dtypes are
little-endian numpy codes ("<f4", "<f8").  Tensor arrays are NCHW /
(out, in, k, k) as held in memory.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, MoEMambaNet, build

MAGIC = b"MOEMAMBA-CKPT\n"
FORMAT_VERSION = 1
RNG_CONVENTION = "numpy.PCG64/default_rng(seed)"


def save_arrays(path, arrays: list[tuple[str, np.ndarray]], header: dict) -> None:
    table, offset, les = [], 0, []
    for name, arr in arrays:
        le = np.ascontiguousarray(arr, dtype=np.asarray(arr).dtype.newbyteorder("<"))
        table.append({"name": name, "shape": list(le.shape), "dtype": le.dtype.str,
                      "offset": offset, "nbytes": le.nbytes})
        les.append(le)
        offset += le.nbytes
    hdr = dict(header, format_version=FORMAT_VERSION, byte_order="little",
               rng_convention=RNG_CONVENTION, tensors=table)
    hdr_bytes = json.dumps(hdr, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hdr_bytes)))
        fh.write(hdr_bytes)
        for le in les:
            fh.write(memoryview(le.reshape(-1)).cast("B"))
    os.replace(tmp, path)


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        version, hdr_len = struct.unpack_from("<IQ", data, pos)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos:pos + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    base = pos + hdr_len
    arrays = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header, arrays


def save_model(path, net: MoEMambaNet, extra_arrays=(), extra: dict | None = None) -> None:
    arrays = [(f"param/{n}", p.data) for n, p in net.named_parameters()]
    arrays += [(n, a) for n, a in extra_arrays]
    save_arrays(path, arrays, {"model_config": net.config.to_dict(), "extra": extra or {}})


def load_into(net: MoEMambaNet, arrays: dict[str, np.ndarray]) -> None:
    for name, p in net.named_parameters():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        src = arrays[key]
        if src.shape != p.shape or src.dtype != p.dtype:
            raise CheckpointError(f"parameter {name}: checkpoint {src.shape}/{src.dtype} "
                                  f"vs model {p.shape}/{p.dtype}")
        p.data[...] = src


def load_model(path, expect: ModelConfig | None = None) -> tuple[MoEMambaNet, dict, dict]:
    """Rebuild the network recorded in `path`; returns (net, header, arrays)."""
    header, arrays = load_arrays(path)
    cfg = ModelConfig.from_dict(header["model_config"])
    if expect is not None and cfg != expect:
        raise CheckpointError(f"checkpoint config {cfg} does not match expected {expect}")
    first = next(e for e in header["tensors"] if e["name"].startswith("param/"))
    net = build(cfg, seed=0, dtype=np.dtype(first["dtype"]).newbyteorder("="))
    load_into(net, arrays)
    return net, header, arrays
