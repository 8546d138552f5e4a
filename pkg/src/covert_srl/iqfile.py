"""Baseband IQ capture files with a JSON sidecar.

Binary layout, little-endian::

    b"CSRL" | version u16 | sample_rate f64 | count u64 | count x (I f32, Q f32)

The sidecar ``<file>.json`` carries the seed, the secret key, the symbols and
the configuration needed to decode or analyse the capture.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

MAGIC = b"CSRL"
VERSION = 1
_HEADER = struct.Struct("<4sHdQ")


def write_iq(path, samples: np.ndarray, sample_rate: float) -> None:
    x = np.asarray(samples, dtype=np.complex64)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(sample_rate), x.size))
        fh.write(x.astype("<c8").tobytes())


def read_iq(path) -> tuple[np.ndarray, float]:
    """Return (complex128 samples, sample_rate)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise InvalidInputError(f"{path}: truncated header")
        magic, version, rate, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise InvalidInputError(f"{path}: unsupported version {version}")
        body = np.frombuffer(fh.read(), dtype="<c8")
    if body.size != count:
        raise InvalidInputError(f"{path}: header says {count} samples, found {body.size}")
    return body.astype(np.complex128), rate


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_sidecar(path, meta: dict) -> Path:
    out = sidecar_path(path)
    with open(out, "w") as fh:
        json.dump(meta, fh, indent=2)
    return out


def read_sidecar(path) -> dict:
    with open(sidecar_path(path)) as fh:
        return json.load(fh)
