"""Single-file binary checkpoints.

Layout: 8-byte magic, little-endian uint32 header length, a JSON header
holding {format version, config hash, step, epoch} plus a structure tree,
then the raw array blobs in index order. Arrays round-trip bit-exactly, so a
reloaded bundle reproduces forward passes bit-identically in inference mode.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .exceptions import ValidationError

MAGIC = b"KFCKPT01"
FORMAT_VERSION = 1

_RESERVED = ("__blob__", "__kdict__", "__tuple__", "__bytes__")


def _encode(obj, blobs: list[np.ndarray]):
    if isinstance(obj, torch.Tensor):
        obj = obj.detach().cpu().numpy()
    if isinstance(obj, np.ndarray):
        idx = len(blobs)
        blobs.append(np.ascontiguousarray(obj))
        return {"__blob__": idx, "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, (bytes, bytearray)):
        idx = len(blobs)
        blobs.append(np.frombuffer(bytes(obj), dtype=np.uint8))
        return {"__blob__": idx, "dtype": "uint8", "shape": [len(obj)], "__bytes__": True}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj) and not any(k in _RESERVED for k in obj):
            return {k: _encode(v, blobs) for k, v in obj.items()}
        entries = []
        for k, v in obj.items():
            if isinstance(k, str):
                entries.append(["s", k, _encode(v, blobs)])
            elif isinstance(k, int):
                entries.append(["i", k, _encode(v, blobs)])
            else:
                raise ValidationError(f"unsupported checkpoint dict key type: {type(k).__name__}")
        return {"__kdict__": entries}
    if isinstance(obj, tuple):
        return {"__tuple__": [_encode(v, blobs) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v, blobs) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise ValidationError(f"unsupported checkpoint value type: {type(obj).__name__}")


def _decode(node, blobs: list[bytes]):
    if isinstance(node, dict):
        if "__blob__" in node:
            raw = blobs[node["__blob__"]]
            if node.get("__bytes__"):
                return bytes(raw)
            arr = np.frombuffer(raw, dtype=np.dtype(node["dtype"])).reshape(node["shape"])
            return arr.copy()
        if "__kdict__" in node:
            out = {}
            for kind, key, value in node["__kdict__"]:
                out[int(key) if kind == "i" else key] = _decode(value, blobs)
            return out
        if "__tuple__" in node:
            return tuple(_decode(v, blobs) for v in node["__tuple__"])
        return {k: _decode(v, blobs) for k, v in node.items()}
    if isinstance(node, list):
        return [_decode(v, blobs) for v in node]
    return node


@dataclass
class Checkpoint:
    step: int
    epoch: int
    config_hash: str
    state: dict

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        blobs: list[np.ndarray] = []
        tree = _encode(self.state, blobs)
        header = json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "config_hash": self.config_hash,
                "step": self.step,
                "epoch": self.epoch,
                "tree": tree,
            },
            sort_keys=True,
        ).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob.tobytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"checkpoint file not found: {path}")
        raw = path.read_bytes()
        if raw[: len(MAGIC)] != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
        start = len(MAGIC) + 4
        header = json.loads(raw[start : start + header_len].decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint format version: {header.get('format_version')}")
        # slice blobs in index order
        blob_specs: list[tuple[int, int]] = []

        def _collect(node):
            if isinstance(node, dict):
                if "__blob__" in node:
                    nbytes = int(np.dtype(node["dtype"]).itemsize * int(np.prod(node["shape"], dtype=np.int64)))
                    blob_specs.append((node["__blob__"], nbytes))
                elif "__kdict__" in node:
                    for _, _, value in node["__kdict__"]:
                        _collect(value)
                elif "__tuple__" in node:
                    _collect(node["__tuple__"])
                else:
                    for v in node.values():
                        _collect(v)
            elif isinstance(node, list):
                for v in node:
                    _collect(v)

        _collect(header["tree"])
        blob_specs.sort()
        blobs: list[bytes] = []
        offset = start + header_len
        for _, nbytes in blob_specs:
            blobs.append(raw[offset : offset + nbytes])
            offset += nbytes
        state = _decode(header["tree"], blobs)
        return cls(
            step=header["step"],
            epoch=header["epoch"],
            config_hash=header["config_hash"],
            state=state,
        )
