"""Checkpoint format: one JSON header line, then raw little-endian floats.

Layout of the payload follows the header's store/entry order exactly; each
entry contributes three arrays (value, Adam first moment, Adam second
moment).  Round-trips are bitwise for a fixed dtype.
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import DataError
from .optim import ParamStore

_MAGIC = "latentflow-ckpt-v1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, stores: dict[str, ParamStore], meta: dict | None = None,
                    dtype: str = "float32"):
    if dtype not in _DTYPES:
        raise DataError(f"unsupported checkpoint dtype {dtype!r}")
    np_dtype = np.dtype(_DTYPES[dtype])
    header = {
        "format": _MAGIC,
        "dtype": dtype,
        "meta": meta or {},
        "stores": {
            name: {
                "step_count": st.step_count,
                "entries": [{"name": k, "shape": list(v.shape)} for k, v in st.values.items()],
            }
            for name, st in stores.items()
        },
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for st in stores.values():
            for k in st.values:
                for arr in (st.values[k], st.m[k], st.v[k]):
                    fh.write(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())


def load_checkpoint(path):
    """Returns (stores, meta)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    with fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt checkpoint header in {path}: {exc}") from exc
        if header.get("format") != _MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        np_dtype = np.dtype(_DTYPES[header["dtype"]])
        payload = fh.read()
    stores: dict[str, ParamStore] = {}
    offset = 0
    for name, meta_st in header["stores"].items():
        st = ParamStore()
        st.step_count = int(meta_st["step_count"])
        for entry in meta_st["entries"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            arrays = []
            for _ in range(3):
                end = offset + n * np_dtype.itemsize
                if end > len(payload):
                    raise DataError(f"checkpoint {path} payload truncated")
                arrays.append(np.frombuffer(payload[offset:end], dtype=np_dtype).reshape(shape).copy())
                offset = end
            st.values[entry["name"]] = arrays[0]
            st.m[entry["name"]] = arrays[1]
            st.v[entry["name"]] = arrays[2]
        stores[name] = st
    if offset != len(payload):
        raise DataError(f"checkpoint {path} has {len(payload) - offset} trailing bytes")
    return stores, header.get("meta", {})
