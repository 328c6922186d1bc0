"""Parameters, reverse-mode gradients over compiled graphs, and the ADAM update.

Tensors are plain ``float64`` numpy arrays: scalars, d-vectors and d×d
matrices. Gradients are computed per node kind by the kernels in
:mod:`lrnn.kernels` rather than by a generic operation tape.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import LrnnError, ShapeError
from .graph import ComputationGraph, FlatGraph, bias_ref, flatten, stacked_params, weight_ref
from .parser import Template


class MissingTapeError(LrnnError):
    pass


def tensor(value, name: str = "tensor") -> np.ndarray:
    """Validated float64 tensor of rank <= 2 with finite entries."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"{name}: rank {arr.ndim} tensors are not supported")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: NaN or Inf entry")
    return arr


class ParameterStore:
    """Named tensors shared by all graphs; shapes are fixed once set."""

    def __init__(self, d: int = 3) -> None:
        self.d = d
        self._values: Dict[str, np.ndarray] = {}
        self._learnable: Dict[str, bool] = {}

    def add(self, name: str, value, learnable: bool = True) -> None:
        self._values[name] = tensor(value, name)
        self._learnable[name] = learnable

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        arr = tensor(value, name)
        if arr.shape != self._values[name].shape:
            raise ShapeError(f"{name}: shape is fixed at {self._values[name].shape}, got {arr.shape}")
        self._values[name][...] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> List[str]:
        return list(self._values)

    def learnable(self, name: str) -> bool:
        return self._learnable[name]

    def items(self):
        return self._values.items()

    def copy(self) -> "ParameterStore":
        out = ParameterStore(self.d)
        for name, v in self._values.items():
            out.add(name, v.copy(), self._learnable[name])
        return out

    def equals(self, other: "ParameterStore") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[n], other[n]) for n in self))


def init_params(template: Template, d: int = 3, seed: int = 42, bias: bool = False,
                readout_row: bool = False) -> ParameterStore:
    """Uniform[-1, 1] d×d matrices for every learnable weight, in sorted-name order."""
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    store = ParameterStore(d)
    for name in sorted(template.parameters):
        store.add(name, rng.uniform(-1.0, 1.0, size=(d, d)))
    if readout_row:
        store.add("readout", rng.uniform(-1.0, 1.0, size=d))
    for rule in template.rules:
        for w in rule.weights():
            if w.kind == "fixed":
                ref = weight_ref(w)
                if ref not in store:
                    store.add(ref, _lift_weight(w.init, d, ref), learnable=False)
    if bias:
        for ri, rule in enumerate(template.rules):
            if not rule.crisp:
                store.add(bias_ref(ri), np.zeros(d))
    return store


def _lift_weight(value: np.ndarray, d: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0 or v.size == 1:
        return float(v.ravel()[0]) * np.eye(d)
    if v.ndim == 1 and v.size == d:
        return np.diag(v)
    if v.shape == (d, d):
        return v.copy()
    raise ShapeError(f"fixed weight {name}: shape {v.shape} is incompatible with d={d}")


@dataclass
class GradientTape:
    """Forward values per graph and gradient accumulators per parameter."""

    values: Dict[int, np.ndarray] = field(default_factory=dict)
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, graph: ComputationGraph, values: np.ndarray) -> None:
        self.values[id(graph)] = values

    def accumulate(self, name: str, g: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = np.array(g, dtype=np.float64)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def clear(self) -> None:
        self.values.clear()
        self.grads.clear()


def _accumulate_flat(flat: FlatGraph, gW: np.ndarray, gB: np.ndarray, tape: GradientTape) -> None:
    for i, name in enumerate(flat.matrix_names):
        tape.accumulate(name, gW[i])
    for i, name in enumerate(flat.bias_names):
        tape.accumulate(name, gB[i])


def backward(graph: ComputationGraph, params: ParameterStore, tape: GradientTape,
             output_grad) -> None:
    """Accumulate ``d(output)/dW · output_grad`` for every parameter of ``graph``."""
    values = tape.values.get(id(graph))
    if values is None:
        raise MissingTapeError(f"graph {graph.example_id}: run forward() with this tape first")
    flat = graph.flat()
    W, B = stacked_params(flat, params)
    grad = np.zeros_like(values)
    grad[graph.output] = np.broadcast_to(np.asarray(output_grad, dtype=np.float64), (graph.d,))
    gW, gB = kernels.backward(flat, values, W, B, grad)
    _accumulate_flat(flat, gW, gB, tape)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, tape: GradientTape, state: AdamState) -> None:
    """One bias-corrected ADAM update; zeroes the tape's gradients afterwards."""
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in params.names():
        if not params.learnable(name):
            continue
        g = tape.grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    tape.zero_grad()


# ---------------------------------------------------------------------------
# batched evaluation


class Batch:
    """Many graphs evaluated together, optionally split across worker threads.

    Chunks are fixed by ``jobs`` and their gradients are summed in chunk
    order, so results do not depend on thread scheduling.
    """

    def __init__(self, graphs: Sequence[ComputationGraph], jobs: int = 1) -> None:
        if not graphs:
            raise ValueError("empty batch")
        self.graphs = list(graphs)
        self.jobs = max(1, int(jobs))
        k = min(self.jobs, len(self.graphs))
        bounds = np.linspace(0, len(self.graphs), k + 1).round().astype(int)
        self.chunks: List[Tuple[int, int, FlatGraph]] = [
            (int(lo), int(hi), flatten(self.graphs[lo:hi])) for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        self._values: Optional[List[np.ndarray]] = None
        self._pool = ThreadPoolExecutor(self.jobs) if self.jobs > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def forward(self, params: ParameterStore) -> np.ndarray:
        """Output vectors, shape (len(graphs), d)."""
        def run(chunk):
            _, _, flat = chunk
            W, B = stacked_params(flat, params)
            return kernels.forward(flat, W, B)

        self._values = self._map(run, self.chunks)
        return np.concatenate([vals[flat.outputs] for (_, _, flat), vals in zip(self.chunks, self._values)])

    def backward(self, params: ParameterStore, output_grads: np.ndarray, tape: GradientTape) -> None:
        if self._values is None:
            raise MissingTapeError("Batch.backward called before forward")

        def run(item):
            (lo, hi, flat), vals = item
            W, B = stacked_params(flat, params)
            grad = np.zeros_like(vals)
            grad[flat.outputs] = output_grads[lo:hi]
            return kernels.backward(flat, vals, W, B, grad)

        results = self._map(run, list(zip(self.chunks, self._values)))
        for (_, _, flat), (gW, gB) in zip(self.chunks, results):
            _accumulate_flat(flat, gW, gB, tape)


# ---------------------------------------------------------------------------
# checkpoint file

CHECKPOINT_MAGIC = b"LRNNCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ParameterStore, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def checkpoint_bytes(params: ParameterStore) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, params.d, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", int(params.learnable(name)), value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(out)


def load_checkpoint(path: str) -> ParameterStore:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise LrnnError(f"{path}: not a checkpoint file")
    version, d, count = struct.unpack_from("<III", data, 8)
    if version != CHECKPOINT_VERSION:
        raise LrnnError(f"{path}: unsupported checkpoint version {version}")
    pos = 20
    store = ParameterStore(d)
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        learnable, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        value = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        store.add(name, value.astype(np.float64), bool(learnable))
    return store
