"""Model checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"SVHCKPT\\x00"
    offset 8   u32       format version (currently 1)
    offset 12  u32       header length L in bytes
    offset 16  L bytes   UTF-8 JSON header, keys sorted, no whitespace
    16 + L     ...       tensor payload: float32 values, row-major, tensors
                         concatenated in header order

Header fields: ``kind`` (model family), ``tag`` (e.g. ``unet-hand``),
``arch`` (layer-graph description used to rebuild the network), ``seed``,
``extra`` (free-form, e.g. detector anchor priors) and ``tensors`` -- a list
of ``{"name", "shape", "frozen"}`` entries. Writing the same parameters twice
yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np
import torch
from torch import nn

MAGIC = b"SVHCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _payload(net: nn.Module):
    entries, blobs = [], []
    for name, p in net.named_parameters():
        arr = p.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "frozen": not p.requires_grad})
        blobs.append(arr.tobytes())
    return entries, blobs


def checkpoint_bytes(net: nn.Module, kind: str, tag: str, arch: dict,
                     seed: int, extra: dict | None = None) -> bytes:
    entries, blobs = _payload(net)
    header = {"arch": arch, "extra": extra or {}, "kind": kind, "seed": int(seed),
              "tag": tag, "tensors": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(path, net, kind, tag, arch, seed, extra=None) -> str:
    data = checkpoint_bytes(net, kind, tag, arch, seed, extra)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"missing checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(data[16:16 + hlen])
    tensors, off = {}, 16 + hlen
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        tensors[e["name"]] = np.frombuffer(data, "<f4", n, off).reshape(e["shape"])
        off += 4 * n
    if off != len(data):
        raise CheckpointError(f"{path}: payload size mismatch")
    return header, tensors


def load_into(net: nn.Module, header: dict, tensors: dict[str, np.ndarray]) -> nn.Module:
    frozen = {e["name"]: e["frozen"] for e in header["tensors"]}
    names = dict(net.named_parameters())
    if set(names) != set(tensors):
        raise CheckpointError("parameter names do not match the architecture")
    with torch.no_grad():
        for name, p in names.items():
            src = torch.from_numpy(tensors[name].copy())
            if src.shape != p.shape:
                raise CheckpointError(f"shape mismatch for {name}")
            p.copy_(src)
            p.requires_grad_(not frozen[name])
    return net


def param_digest(net: nn.Module) -> str:
    """Identity of a parameter set: SHA-256 over names and float32 values."""
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()
