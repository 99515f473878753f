"""Parameter storage, initialization, Adam, and the checkpoint container."""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"DRPNCKPT\x01\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Slot:
    value: Tensor
    trainable: bool = True

    @property
    def gradient(self) -> np.ndarray:
        if self.value.grad is None:
            self.value.grad = np.zeros_like(self.value.data)
        return self.value.grad


class ParamStore:
    """Named parameter slots, each a leaf :class:`Tensor` plus its gradient."""

    def __init__(self):
        self._slots: dict[str, Slot] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._slots:
            raise KeyError(f"duplicate parameter slot {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self._slots[name] = Slot(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._slots[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __iter__(self) -> Iterator[str]:
        return iter(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._slots if n.startswith(prefix)]

    def slot(self, name: str) -> Slot:
        return self._slots[name]

    def grad(self, name: str) -> np.ndarray:
        return self._slots[name].gradient

    def zero_grads(self) -> None:
        for s in self._slots.values():
            s.value.grad = None

    def num_params(self) -> int:
        return int(sum(s.value.data.size for s in self._slots.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, s in self._slots.items():
            out.add(name, s.value.data.copy(), s.trainable)
        return out

    def load_values(self, other: "ParamStore") -> None:
        for name, s in self._slots.items():
            s.value.data[...] = other[name].data

    def equals(self, other: "ParamStore") -> bool:
        if list(self) != list(other):
            return False
        return all(np.array_equal(self[n].data, other[n].data) for n in self)


# ---------------------------------------------------------------- init


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    kind: str = "matrix"  # matrix | bias | gamma | gain
    trainable: bool = True


def glorot_bound(shape: tuple[int, ...]) -> float:
    fan_in, fan_out = shape[0], shape[-1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(specs: Iterable[ParamSpec], seed: int) -> ParamStore:
    """Glorot-uniform matrices, zero biases, unit gains and gamma.

    Each slot draws from a generator keyed by (seed, slot name), so a slot's
    initial value does not depend on which other slots exist.
    """
    store = ParamStore()
    for spec in specs:
        shape = tuple(spec.shape)
        if spec.kind == "matrix":
            rng = np.random.default_rng([seed, zlib.crc32(spec.name.encode())])
            b = glorot_bound(shape)
            value = rng.uniform(-b, b, size=shape)
        elif spec.kind == "bias":
            value = np.zeros(shape)
        elif spec.kind in ("gamma", "gain"):
            value = np.ones(shape)
        else:
            raise ValueError(f"unknown parameter kind {spec.kind!r}")
        store.add(spec.name, value, spec.trainable)
    return store


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adam with bias correction; moment buffers live per slot name."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in store:
            s = store.slot(name)
            if not s.trainable:
                continue
            g = s.value.grad
            if g is None:
                g = np.zeros_like(s.value.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            s.value.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(store: ParamStore, state: Adam, lr: float | None = None, beta1=None, beta2=None, eps=None) -> ParamStore:
    if lr is not None:
        state.lr = lr
    if beta1 is not None:
        state.beta1 = beta1
    if beta2 is not None:
        state.beta2 = beta2
    if eps is not None:
        state.eps = eps
    state.step(store)
    return store


# ---------------------------------------------------------------- checkpoint


def _pack(header: dict, arrays: list[np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + body


def save_checkpoint(path, store: ParamStore, meta: dict, optimizer: Adam | None = None) -> None:
    """Write slots as raw little-endian doubles behind a JSON header.

    ``meta`` carries seed, hyperparameters and anything else the caller
    wants to round-trip; it must be JSON serializable.
    """
    slots, arrays = [], []
    for name in store:
        s = store.slot(name)
        slots.append({"name": name, "shape": list(s.value.shape), "trainable": s.trainable})
        arrays.append(s.value.data)
    opt = None
    if optimizer is not None:
        opt = {"lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
               "eps": optimizer.eps, "t": optimizer.t, "slots": sorted(optimizer.m)}
        for name in opt["slots"]:
            arrays.append(optimizer.m[name])
            arrays.append(optimizer.v[name])
    header = {"format": 1, "meta": meta, "slots": slots, "optimizer": opt}
    # write then rename, so an interrupted run never leaves a truncated checkpoint
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_pack(header, arrays))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ParamStore, dict, Adam | None]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    pos += hlen

    def read(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated data")
        a = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += n
        return a

    store = ParamStore()
    for s in header["slots"]:
        store.add(s["name"], read(tuple(s["shape"])), s["trainable"])
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"])
        opt.t = o["t"]
        for name in o["slots"]:
            shape = store[name].shape
            opt.m[name] = read(shape)
            opt.v[name] = read(shape)
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return store, header["meta"], opt
