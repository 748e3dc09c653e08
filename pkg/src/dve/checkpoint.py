"""Binary weight checkpoints.

Layout (all integers little-endian):

    8 bytes   magic  b"DVECKPT1"
    u32       header length H
    H bytes   UTF-8 JSON header: variant, N, F, d1, d, n_layers, fusion, seed,
              extra metadata, and ``params`` = [[name, rows, cols], ...]
    ...       each parameter as rows*cols float64 (<f8), row-major, in the
              order listed in ``params`` (the ``EncoderSpec.param_shapes`` order)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .encoders import EncoderSpec

MAGIC = b"DVECKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: EncoderSpec, weights: dict[str, np.ndarray], seed: int, extra: dict | None = None) -> None:
    shapes = spec.param_shapes()
    header = {
        "variant": spec.variant, "N": spec.n_nodes, "F": spec.n_features, "d1": spec.d1, "d": spec.d,
        "n_layers": spec.n_layers, "fusion": spec.fusion, "seed": int(seed),
        "params": [[name, r, c] for name, (r, c) in shapes.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = Path(os.fspath(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, shape in shapes.items():
            w = np.asarray(weights[name], dtype="<f8")
            if w.shape != shape:
                raise CheckpointError(f"{name}: shape {w.shape} != {shape}")
            fh.write(np.ascontiguousarray(w).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[EncoderSpec, dict[str, np.ndarray], dict]:
    """Return (spec, weights, header)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    spec = EncoderSpec(variant=header["variant"], n_nodes=header["N"], n_features=header["F"], d1=header["d1"],
                       d=header["d"], n_layers=header["n_layers"], fusion=header["fusion"])
    offset = 12 + hlen
    weights = {}
    for name, r, c in header["params"]:
        size = r * c * 8
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated at parameter {name}")
        weights[name] = np.frombuffer(data, dtype="<f8", count=r * c, offset=offset).reshape(r, c).astype(np.float64)
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return spec, weights, header
