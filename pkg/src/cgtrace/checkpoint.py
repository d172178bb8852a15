"""Versioned binary checkpoints.

Layout (little-endian)::

    b"CGT1" | u32 version | u64 header length | JSON header | tensor blob | sha256

Tensors are stored as raw little-endian float32 or float64 values (float64 is
kept for buffers such as running statistics); the header indexes them by name
with dtype, shape and byte offset. The trailing SHA-256 covers everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.nn import Module
from .core.optim import Adam

MAGIC = b"CGT1"
VERSION = 1
_DIGEST = 32


class IntegrityError(ValueError):
    """Checkpoint bytes are truncated or corrupted."""


@dataclass
class ModelCheckpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    config: str = ""
    seed: int = 0
    metrics: dict = field(default_factory=dict)
    version: int = VERSION

    def module_state(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def add_module(self, prefix: str, module: Module) -> None:
        for k, v in module.state_dict().items():
            v = np.asarray(v)
            self.tensors[f"{prefix}.{k}"] = v.astype(np.float64 if v.dtype == np.float64 else np.float32)

    def add_optimizer(self, prefix: str, module: Module, opt: Adam) -> None:
        """Store Adam scalars and moments keyed by the module's parameter names."""
        names = list(module.named_parameters())
        st = opt.state
        self.optimizer[prefix] = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2,
                                  "eps": st.eps, "step_count": st.step_count}
        for name, m, v in zip(names, st.first_moment, st.second_moment):
            self.tensors[f"optim.{prefix}.m.{name}"] = np.asarray(m, dtype=np.float32).copy()
            self.tensors[f"optim.{prefix}.v.{name}"] = np.asarray(v, dtype=np.float32).copy()

    def restore_optimizer(self, prefix: str, module: Module, opt: Adam) -> None:
        meta = self.optimizer[prefix]
        st = opt.state
        st.lr, st.beta1, st.beta2, st.eps = meta["lr"], meta["beta1"], meta["beta2"], meta["eps"]
        st.step_count = meta["step_count"]
        names = list(module.named_parameters())
        if st.step_count:
            dtype = opt.params[0].data.dtype
            st.first_moment = [self.tensors[f"optim.{prefix}.m.{n}"].astype(dtype) for n in names]
            st.second_moment = [self.tensors[f"optim.{prefix}.v.{n}"].astype(dtype) for n in names]


def save_checkpoint(ckpt: ModelCheckpoint, path) -> Path:
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        dt = "<f8" if np.asarray(arr).dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        index.append({"name": name, "dtype": dt, "shape": list(np.shape(arr)), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({
        "tensors": index,
        "optimizer": ckpt.optimizer,
        "config": ckpt.config,
        "seed": ckpt.seed,
        "metrics": ckpt.metrics,
    }, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", ckpt.version, len(header)) + header + b"".join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 + _DIGEST or data[:4] != MAGIC:
        if data[:4] != MAGIC and len(data) >= 4:
            raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
        raise IntegrityError(f"{path}: truncated checkpoint")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, hlen = struct.unpack("<IQ", body[4:16])
    if version != VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {VERSION}")
    header = json.loads(body[16:16 + hlen].decode("utf-8"))
    blob = body[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        dt = entry.get("dtype", "<f4")
        if dt not in ("<f4", "<f8"):
            raise IntegrityError(f"{path}: unknown tensor dtype {dt!r}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dt).astype(np.dtype(dt).newbyteorder("=")).reshape(entry["shape"])
    return ModelCheckpoint(tensors, header["optimizer"], header["config"], header["seed"],
                           header["metrics"], version)
