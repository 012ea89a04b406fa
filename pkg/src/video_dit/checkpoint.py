"""Portable checkpoint container.

Little-endian byte layout, documented so other implementations can
exchange weights:

    offset  size  field
    0       4     magic "VDCK"
    4       1     version, currently 1
    5       4     u32 length of the UTF-8 model-config JSON
    9       -     config JSON bytes
    -       4     u32 parameter count
    then per parameter, in the stored order:
    -       2     u16 name length, then UTF-8 name
    -       1     u8 ndim, then ndim * u32 dims
    -       -     float32 little-endian values, C order

Weights are stored as float32 regardless of working precision; loading
restores the requested dtype.  Parameters are written sorted by name so
identical parameter sets serialize identically.
"""

import json
import struct

import numpy as np

from .config import ModelConfig
from .params import ParamStore, infer_group

_MAGIC = b"VDCK"
_VERSION = 1


def save_checkpoint(path, params: ParamStore, cfg: ModelConfig):
    cfg_blob = json.dumps(cfg.to_json(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        names = sorted(params.names())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, dtype=np.float64):
    """Returns (params, cfg); raises ValueError on malformed containers."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    if blob[4] != _VERSION:
        raise ValueError(f"{path}: unsupported version {blob[4]}")
    off = 5
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    cfg = ModelConfig.from_json(json.loads(blob[off:off + cfg_len].decode()))
    off += cfg_len
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    values, groups = {}, {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode()
        off += name_len
        ndim = blob[off]
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += 4 * count
        values[name] = arr.reshape(shape).astype(dtype)
        groups[name] = infer_group(name)
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return ParamStore(values, groups), cfg
