"""Pure numpy forward/backward kernels, vectorised per dependency level.

Nodes on the same level never feed each other, so a whole level is one
gather / batched mat-vec / scatter. This is the fallback used when the
compiled extension is unavailable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np


@dataclass
class _Level:
    nodes: np.ndarray     # global node ids
    tanh: np.ndarray      # bool per node
    e_src: np.ndarray
    e_dst: np.ndarray     # local index into ``nodes``
    e_param: np.ndarray   # index into extended W (identity = last)
    e_scale: np.ndarray
    b_local: np.ndarray   # local nodes carrying a bias
    b_idx: np.ndarray


def _levels(flat) -> List[_Level]:
    n = flat.n_nodes
    ptr, src = flat.in_ptr, flat.in_src
    level = np.zeros(n, dtype=np.int64)
    kind = flat.kind
    for i in range(n):  # nodes are topologically ordered
        if kind[i] == 0:
            continue
        lo, hi = ptr[i], ptr[i + 1]
        level[i] = 1 + (level[src[lo:hi]].max() if hi > lo else 0)
    n_mat = int(flat.in_param.max(initial=-1)) + 1
    counts = np.diff(ptr)
    dst_all = np.repeat(np.arange(n), counts)
    out: List[_Level] = []
    for lv in range(1, int(level.max(initial=0)) + 1):
        nodes = np.nonzero(level == lv)[0]
        local = np.full(n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        emask = local[dst_all] >= 0
        e_dst = local[dst_all[emask]]
        e_param = flat.in_param[emask].copy()
        e_param[e_param < 0] = n_mat
        is_mean = kind[nodes] == 2
        scale = np.ones(len(e_dst))
        with np.errstate(divide="ignore"):
            inv = 1.0 / counts[nodes]
        mean_edges = is_mean[e_dst]
        scale[mean_edges] = inv[e_dst[mean_edges]]
        bmask = flat.bias_idx[nodes] >= 0
        out.append(_Level(
            nodes=nodes, tanh=~is_mean, e_src=src[emask], e_dst=e_dst,
            e_param=e_param, e_scale=scale,
            b_local=np.nonzero(bmask)[0], b_idx=flat.bias_idx[nodes][bmask],
        ))
    return out


def _plan(flat) -> List[_Level]:
    plan = flat.plan
    if not (isinstance(plan, tuple) and plan[0] == "numpy"):
        plan = ("numpy", _levels(flat))
        flat.plan = plan
    return plan[1]


def _extended(W: np.ndarray, d: int) -> np.ndarray:
    return np.concatenate([W.reshape(-1, d, d), np.eye(d)[None]], axis=0)


def _scatter(index: np.ndarray, rows: np.ndarray, size: int) -> np.ndarray:
    out = np.empty((size, rows.shape[1]))
    for k in range(rows.shape[1]):
        out[:, k] = np.bincount(index, weights=rows[:, k], minlength=size)
    return out


def forward(flat, W: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = flat.d
    values = flat.fact_values.copy()
    Wx = _extended(W, d)
    for lv in _plan(flat):
        x = values[lv.e_src]
        contrib = np.matmul(Wx[lv.e_param], x[:, :, None])[:, :, 0] * lv.e_scale[:, None]
        z = _scatter(lv.e_dst, contrib, len(lv.nodes))
        if len(lv.b_local):
            z[lv.b_local] += B[lv.b_idx]
        z[lv.tanh] = np.tanh(z[lv.tanh])
        values[lv.nodes] = z
    return values


def backward(flat, values: np.ndarray, W: np.ndarray, B: np.ndarray,
             grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Propagate ``grad`` (N, d; seeded at outputs, modified in place)."""
    d = flat.d
    n_mat = W.shape[0]
    Wx = _extended(W, d)
    gW = np.zeros((n_mat + 1) * d * d)
    gB = np.zeros((B.shape[0], d))
    n = flat.n_nodes
    dd = np.arange(d * d)
    for lv in reversed(_plan(flat)):
        g = grad[lv.nodes]
        y = values[lv.nodes]
        gz = np.where(lv.tanh[:, None], g * (1.0 - y * y), g)
        if len(lv.b_local):
            np.add.at(gB, lv.b_idx, gz[lv.b_local])
        if not len(lv.e_src):
            continue
        ge = gz[lv.e_dst] * lv.e_scale[:, None]
        wsel = Wx[lv.e_param]
        back = np.matmul(ge[:, None, :], wsel)[:, 0, :]
        grad += _scatter(lv.e_src, back, n)
        outer = ge[:, :, None] * values[lv.e_src][:, None, :]
        flat_idx = (lv.e_param[:, None] * (d * d) + dd[None, :]).ravel()
        gW += np.bincount(flat_idx, weights=outer.reshape(-1), minlength=gW.size)
    return gW.reshape(n_mat + 1, d, d)[:n_mat].copy(), gB
