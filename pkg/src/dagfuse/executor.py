"""Deterministic CPU reference executor.

Ground truth for fusion equivalence: two runs on identical inputs are
bitwise identical, and any valid topological order produces the same
result because every reduction uses a fixed left fold over ascending
indices (no BLAS, no tree reductions, no implicit broadcasting).
Performance is explicitly not a goal here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingWeight, ShapeMismatch
from .graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore, topo_order

F32 = np.float32


@dataclass(frozen=True)
class Tensor:
    """A value: spec plus flat row-major float32 array."""

    spec: TensorSpec
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=F32).reshape(-1)
        if arr.size != self.spec.element_count:
            raise ValueError(f"{arr.size} values for shape {self.spec.dims}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @staticmethod
    def from_array(arr) -> "Tensor":
        arr = np.asarray(arr, dtype=F32)
        return Tensor(TensorSpec(arr.shape), arr.reshape(-1))

    @staticmethod
    def zeros(spec: TensorSpec) -> "Tensor":
        return Tensor(spec, np.zeros(spec.element_count, dtype=F32))

    def array(self) -> np.ndarray:
        return self.values.reshape(self.spec.dims)


def _weight(w: WeightStore, node: OpNode, role: str) -> np.ndarray:
    ref = node.weight_refs.get(role)
    if ref is None or ref not in w:
        raise MissingWeight(node.node_id, ref if ref is not None else role)
    return w.array(ref)


def _eval_dense(node: OpNode, x: np.ndarray, w: WeightStore) -> np.ndarray:
    if x.ndim != 1 or x.shape[0] != int(node.attrs["fan_in"]):
        raise ShapeMismatch(node.node_id, f"dense fan_in {node.attrs['fan_in']} vs input {x.shape}")
    wt = _weight(w, node, "weight")  # (units, fan_in)
    acc = np.zeros(wt.shape[0], dtype=F32)
    for j in range(wt.shape[1]):  # left fold over ascending input index
        acc += wt[:, j] * x[j]
    if "bias" in node.weight_refs:
        acc = acc + _weight(w, node, "bias")
    return acc


def _eval_conv2d(node: OpNode, x: np.ndarray, w: WeightStore) -> np.ndarray:
    wt = _weight(w, node, "weight")  # (out_c, in_c, k, k)
    out_c, in_c, k, _ = wt.shape
    if x.ndim != 3 or x.shape[0] != in_c:
        raise ShapeMismatch(node.node_id, f"conv2d expects ({in_c},H,W), got {x.shape}")
    s = int(node.attrs.get("stride", 1))
    p = int(node.attrs.get("padding", 0))
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)), mode="constant").astype(F32)
    oh = (x.shape[1] - k) // s + 1
    ow = (x.shape[2] - k) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(node.node_id, f"kernel {k} too large for input {x.shape}")
    acc = np.zeros((out_c, oh, ow), dtype=F32)
    # Cross-correlation: fixed fold order over (channel, ki, kj) ascending,
    # vectorised across output positions so each step is order-free.
    for c in range(in_c):
        plane = x[c]
        for ki in range(k):
            for kj in range(k):
                window = plane[ki : ki + oh * s : s, kj : kj + ow * s : s]
                acc += wt[:, c, ki, kj][:, None, None] * window[None, :, :]
    if "bias" in node.weight_refs:
        acc = acc + _weight(w, node, "bias")[:, None, None]
    return acc


def _eval_maxpool2d(node: OpNode, x: np.ndarray) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeMismatch(node.node_id, f"maxpool2d expects (C,H,W), got {x.shape}")
    k = int(node.attrs["kernel"])
    s = int(node.attrs.get("stride", k))
    oh = (x.shape[1] - k) // s + 1
    ow = (x.shape[2] - k) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(node.node_id, f"window {k} too large for input {x.shape}")
    acc = None
    for ki in range(k):
        for kj in range(k):
            window = x[:, ki : ki + oh * s : s, kj : kj + ow * s : s]
            acc = window.copy() if acc is None else np.maximum(acc, window)
    return acc


def _eval_batchnorm(node: OpNode, x: np.ndarray, w: WeightStore) -> np.ndarray:
    gamma = _weight(w, node, "gamma")
    beta = _weight(w, node, "beta")
    mean = _weight(w, node, "mean")
    var = _weight(w, node, "var")
    c = x.shape[0]
    if gamma.shape != (c,):
        raise ShapeMismatch(node.node_id, f"batchnorm over {gamma.shape[0]} channels, input has {c}")
    eps = F32(node.attrs.get("epsilon", 1e-5))
    shape = (c,) + (1,) * (x.ndim - 1)
    inv = (F32(1.0) / np.sqrt(var + eps)).astype(F32).reshape(shape)
    return (gamma.reshape(shape) * (x - mean.reshape(shape)) * inv + beta.reshape(shape)).astype(F32)


def _eval_global_avg_pool(node: OpNode, x: np.ndarray) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeMismatch(node.node_id, f"global_avg_pool expects (C,H,W), got {x.shape}")
    flat = x.reshape(x.shape[0], -1)
    acc = np.zeros(x.shape[0], dtype=F32)
    for i in range(flat.shape[1]):  # left fold over ascending spatial index
        acc += flat[:, i]
    return acc * F32(1.0 / flat.shape[1])


def eval_node(node: OpNode, inputs: list[np.ndarray], w: WeightStore) -> np.ndarray:
    kind = node.kind
    if kind == "dense":
        return _eval_dense(node, inputs[0], w)
    if kind == "conv2d":
        return _eval_conv2d(node, inputs[0], w)
    if kind == "relu":
        return np.maximum(inputs[0], F32(0.0))
    if kind == "maxpool2d":
        return _eval_maxpool2d(node, inputs[0])
    if kind == "batchnorm_inference":
        return _eval_batchnorm(node, inputs[0], w)
    if kind == "residual_add":
        first = inputs[0].shape
        for arr in inputs[1:]:
            if arr.shape != first:
                raise ShapeMismatch(node.node_id, f"addend shapes differ: {first} vs {arr.shape}")
        acc = inputs[0]
        for arr in inputs[1:]:  # left fold in declared input order
            acc = acc + arr
        return acc
    if kind == "global_avg_pool":
        return _eval_global_avg_pool(node, inputs[0])
    if kind == "flatten":
        return inputs[0].reshape(-1)
    if kind == "concat":
        first = inputs[0].shape
        for arr in inputs[1:]:
            if arr.shape[1:] != first[1:]:
                raise ShapeMismatch(node.node_id, f"concat shapes incompatible: {first} vs {arr.shape}")
        return np.concatenate(inputs, axis=0)
    raise ShapeMismatch(node.node_id, f"unknown kind {kind!r}")


def eval_graph(
    nodes: dict[str, OpNode],
    order: list[str],
    entry: str,
    exit: str,
    weights: WeightStore,
    x: np.ndarray,
) -> np.ndarray:
    """Shared evaluation kernel for solo and fused execution paths."""
    values: dict[str, np.ndarray] = {}
    for nid in order:
        node = nodes[nid]
        ins = [x] if nid == entry else [values[src] for src in node.inputs]
        values[nid] = eval_node(node, ins, weights)
    return values[exit]


def run(g: ModelGraph, w: WeightStore, x: Tensor) -> Tensor:
    """Evaluate one model on one input.

    Nodes run in canonical topological order; every per-node reduction
    is a fixed left fold, so the result is bitwise reproducible.
    """
    if x.spec.dims != g.input_spec.dims:
        raise ShapeMismatch(g.entry, f"input {x.spec.dims} vs declared {g.input_spec.dims}")
    out = eval_graph(g.nodes, topo_order(g), g.entry, g.exit, w, x.array())
    return Tensor.from_array(out)


def run_batch(g: ModelGraph, w: WeightStore, xs: list[Tensor]) -> list[Tensor]:
    """Elementwise `run` over a list; output order matches input order."""
    return [run(g, w, x) for x in xs]
