"""Named parameter store, deterministic init, Adam, and array file IO.

Checkpoints are a pair of files: a JSON manifest listing (name, shape,
byte offset, group) and a flat little-endian float32 payload. Round
trips are bit-exact.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

PAYLOAD_DTYPE = np.dtype("<f4")
MANIFEST_FORMAT = "duplexgen-arrays-v1"


class ParamStore:
    """Ordered mapping of parameter names to trainable tensors.

    A single seeded generator drives all initialisation, so identical
    (seed, creation order) gives bit-identical parameters.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, group: str = "backbone") -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        self._groups[name] = group
        return t

    def add_linear(self, name: str, fan_in: int, fan_out: int, group: str = "backbone",
                   bias: bool = True, zero: bool = False) -> tuple[Tensor, Tensor | None]:
        """Weight uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), bias zero."""
        if zero:
            w = np.zeros((fan_in, fan_out), dtype=np.float32)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            w = self.rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        wt = self.add(name + ".w", w, group)
        bt = self.add(name + ".b", np.zeros(fan_out, dtype=np.float32), group) if bias else None
        return wt, bt

    def add_queries(self, name: str, n: int, dim: int, group: str) -> Tensor:
        q = (self.rng.standard_normal((n, dim)) * 0.02).astype(np.float32)
        return self.add(name, q, group)

    def add_ones(self, name: str, dim: int, group: str = "backbone") -> Tensor:
        return self.add(name, np.ones(dim, dtype=np.float32), group)

    def add_zeros(self, name: str, shape, group: str = "backbone") -> Tensor:
        return self.add(name, np.zeros(shape, dtype=np.float32), group)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def items(self, groups: set[str] | None = None):
        for name, t in self._params.items():
            if groups is None or self._groups[name] in groups:
                yield name, t

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def groups(self) -> dict[str, str]:
        return dict(self._groups)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            src = arrays[name]
            if tuple(src.shape) != tuple(t.data.shape):
                raise ValueError(f"shape mismatch for {name}: checkpoint {src.shape} vs model {t.data.shape}")
            t.data = np.ascontiguousarray(src, dtype=np.float32)

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store with parameters cast to `dtype` (used by gradcheck)."""
        clone = ParamStore(self.seed)
        for name, t in self._params.items():
            clone.add(name, t.data, self._groups[name])
            clone._params[name].data = t.data.astype(dtype)
        return clone


@dataclass
class Adam:
    """Adam with per-group learning rates and float32 state."""

    store: ParamStore
    lr_map: dict[str, float]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    trainable_groups: set[str] | None = None
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict)
    _v: dict[str, np.ndarray] = field(default_factory=dict)

    def _lr(self, name: str) -> float:
        group = self.store.group_of(name)
        if group not in self.lr_map:
            raise KeyError(f"no learning rate configured for group {group!r}")
        return self.lr_map[group]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = np.float32(1.0 - b1 ** self.step_count)
        c2 = np.float32(1.0 - b2 ** self.step_count)
        for name, t in self.store.items(self.trainable_groups):
            if t.grad is None:
                continue
            g = t.grad.astype(np.float32, copy=False)
            if name not in self._m:
                self._m[name] = np.zeros_like(t.data)
                self._v[name] = np.zeros_like(t.data)
            m = self._m[name]
            v = self._v[name]
            m *= np.float32(b1)
            m += np.float32(1.0 - b1) * g
            v *= np.float32(b2)
            v += np.float32(1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            t.data = t.data - np.float32(self._lr(name)) * mhat / (np.sqrt(vhat) + np.float32(self.eps))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, m in self._m.items():
            out["m." + name] = m
            out["v." + name] = self._v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self._m.clear()
        self._v.clear()
        for key, arr in arrays.items():
            kind, name = key.split(".", 1)
            target = self._m if kind == "m" else self._v
            target[name] = np.ascontiguousarray(arr, dtype=np.float32)
        self.step_count = step_count


# ---------------------------------------------------------------------------
# manifest + payload files


def save_arrays(path_prefix: str, arrays: dict[str, np.ndarray],
                groups: dict[str, str] | None = None, meta: dict | None = None) -> tuple[str, str]:
    """Write `<prefix>.json` + `<prefix>.bin`. Returns the two paths."""
    manifest_path = path_prefix + ".json"
    payload_path = path_prefix + ".bin"
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype=PAYLOAD_DTYPE)
        raw = flat.tobytes()
        entry = {"name": name, "shape": list(arr.shape), "offset": offset}
        if groups and name in groups:
            entry["group"] = groups[name]
        entries.append(entry)
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": MANIFEST_FORMAT, "dtype": str(PAYLOAD_DTYPE), "entries": entries}
    if meta:
        manifest["meta"] = meta
    with open(payload_path, "wb") as f:
        f.write(b"".join(chunks))
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest_path, payload_path


def load_arrays(path_prefix: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a manifest+payload pair written by `save_arrays`."""
    with open(path_prefix + ".json") as f:
        manifest = json.load(f)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"unrecognised manifest format in {path_prefix}.json")
    with open(path_prefix + ".bin", "rb") as f:
        payload = f.read()
    arrays = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays, manifest


def checkpoint_groups(manifest: dict) -> dict[str, str]:
    return {e["name"]: e.get("group", "backbone") for e in manifest["entries"]}


def file_digest(path: str) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()
