"""Neural-graph intermediate representation.

A model is a DAG of typed operator nodes. Nodes carry kind-specific
attributes and named references into a weight store. Everything here is
immutable after construction so graphs can be shared freely across
threads; shape inference and validation are pure functions over the IR.

Supported node kinds and their attributes:

    dense                units, fan_in          weights: weight[, bias]
    conv2d               out_channels, kernel, stride, padding
                                                weights: weight[, bias]
    relu                 -
    maxpool2d            kernel, stride
    batchnorm_inference  epsilon (default 1e-5) weights: gamma, beta, mean, var
    residual_add         -                      (>= 2 inputs, equal shapes)
    global_avg_pool      -                      (C,H,W) -> (C,)
    flatten              -
    concat               -                      (>= 2 inputs, axis-0 concat)

All tensors are 32-bit reals; single-sample shapes, no batch axis.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import CycleDetected, ShapeMismatch

KINDS = (
    "dense",
    "conv2d",
    "relu",
    "maxpool2d",
    "batchnorm_inference",
    "residual_add",
    "global_avg_pool",
    "flatten",
    "concat",
)

# Kinds taking exactly one predecessor; residual_add/concat take >= 2.
SINGLE_INPUT_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "maxpool2d",
    "batchnorm_inference",
    "global_avg_pool",
    "flatten",
)

DEFAULT_BN_EPSILON = 1e-5
MIB = 1024 * 1024


@dataclass(frozen=True)
class TensorSpec:
    """Shape descriptor: positive dims, 32-bit real elements."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"dims must be non-empty positive integers, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def element_count(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def byte_size(self) -> int:
        return 4 * self.element_count


@dataclass(frozen=True)
class OpNode:
    """One operator. ``inputs`` are predecessor node ids in order."""

    node_id: str
    kind: str
    attrs: Mapping[str, float] = field(default_factory=dict)
    weight_refs: Mapping[str, str] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attrs", dict(self.attrs))
        object.__setattr__(self, "weight_refs", dict(self.weight_refs))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind not in KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")


class WeightStore:
    """Named weight tensors, each a flat row-major float32 array."""

    def __init__(self, tensors: Mapping[str, tuple[TensorSpec, np.ndarray]] | None = None):
        self._tensors: dict[str, tuple[TensorSpec, np.ndarray]] = {}
        if tensors:
            for name, (spec, values) in tensors.items():
                self.put(name, spec, values)

    def put(self, name: str, spec: TensorSpec, values) -> None:
        arr = np.asarray(values, dtype=np.float32).reshape(-1)
        if arr.size != spec.element_count:
            raise ValueError(
                f"weight {name!r}: {arr.size} values for shape {spec.dims} "
                f"({spec.element_count} expected)"
            )
        arr.setflags(write=False)
        self._tensors[name] = (spec, arr)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def spec(self, name: str) -> TensorSpec:
        return self._tensors[name][0]

    def values(self, name: str) -> np.ndarray:
        return self._tensors[name][1]

    def array(self, name: str) -> np.ndarray:
        """Weight values reshaped to their declared dims (read-only view)."""
        spec, flat = self._tensors[name]
        return flat.reshape(spec.dims)

    def items(self):
        return self._tensors.items()

    @property
    def byte_size(self) -> int:
        return sum(spec.byte_size for spec, _ in self._tensors.values())


class ModelGraph:
    """One DNN as an immutable DAG of operator nodes.

    ``entry`` receives the external input; ``exit`` produces the
    prediction. The edge set is derived from node input lists.
    """

    def __init__(
        self,
        model_id: str,
        nodes: Iterable[OpNode],
        entry: str,
        exit: str,
        input_spec: TensorSpec,
        output_spec: TensorSpec,
    ):
        node_map: dict[str, OpNode] = {}
        for node in nodes:
            if node.node_id in node_map:
                raise ValueError(f"duplicate node id {node.node_id!r}")
            node_map[node.node_id] = node
        self.model_id = model_id
        self.nodes: dict[str, OpNode] = node_map
        self.entry = entry
        self.exit = exit
        self.input_spec = input_spec
        self.output_spec = output_spec

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (src, node.node_id) for node in self.nodes.values() for src in node.inputs
        )

    def node_count(self) -> int:
        return len(self.nodes)

    def __repr__(self):
        return f"ModelGraph({self.model_id!r}, {len(self.nodes)} nodes)"


@dataclass(frozen=True)
class Problem:
    """One validation finding. Problems are data, not exceptions."""

    code: str
    node_id: str
    message: str

    def __str__(self):
        where = f" [{self.node_id}]" if self.node_id else ""
        return f"{self.code}{where}: {self.message}"


@dataclass
class ValidationReport:
    model_id: str
    problems: list[Problem]

    @property
    def ok(self) -> bool:
        return not self.problems


def topo_order(g: ModelGraph) -> list[str]:
    """Deterministic topological order, ties broken by ascending node_id."""
    indegree = {nid: len(node.inputs) for nid, node in g.nodes.items()}
    successors: dict[str, list[str]] = {nid: [] for nid in g.nodes}
    for nid, node in g.nodes.items():
        for src in node.inputs:
            if src in successors:
                successors[src].append(nid)
    ready = [nid for nid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for succ in successors[nid]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, succ)
    if len(order) != len(g.nodes):
        raise CycleDetected(g.model_id)
    return order


def _conv_out(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


def node_output_dims(node: OpNode, input_dims: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Output dims of one node given its input dims (in node.inputs order)."""
    kind = node.kind
    if kind in SINGLE_INPUT_KINDS and len(input_dims) != 1:
        raise ShapeMismatch(node.node_id, f"{kind} takes exactly one input, got {len(input_dims)}")
    if kind in ("residual_add", "concat") and len(input_dims) < 2:
        raise ShapeMismatch(node.node_id, f"{kind} takes at least two inputs")

    if kind == "dense":
        (dims,) = input_dims
        if len(dims) != 1:
            raise ShapeMismatch(node.node_id, f"dense expects a rank-1 input, got {dims}")
        fan_in = int(node.attrs["fan_in"])
        if dims[0] != fan_in:
            raise ShapeMismatch(node.node_id, f"fan_in {fan_in} but input has {dims[0]} features")
        return (int(node.attrs["units"]),)

    if kind == "conv2d":
        (dims,) = input_dims
        if len(dims) != 3:
            raise ShapeMismatch(node.node_id, f"conv2d expects (C,H,W), got {dims}")
        k = int(node.attrs["kernel"])
        s = int(node.attrs.get("stride", 1))
        p = int(node.attrs.get("padding", 0))
        oh = _conv_out(dims[1], k, s, p)
        ow = _conv_out(dims[2], k, s, p)
        if oh < 1 or ow < 1:
            raise ShapeMismatch(node.node_id, f"kernel {k} too large for input {dims}")
        return (int(node.attrs["out_channels"]), oh, ow)

    if kind in ("relu", "batchnorm_inference"):
        return input_dims[0]

    if kind == "maxpool2d":
        (dims,) = input_dims
        if len(dims) != 3:
            raise ShapeMismatch(node.node_id, f"maxpool2d expects (C,H,W), got {dims}")
        k = int(node.attrs["kernel"])
        s = int(node.attrs.get("stride", k))
        oh = (dims[1] - k) // s + 1
        ow = (dims[2] - k) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(node.node_id, f"window {k} too large for input {dims}")
        return (dims[0], oh, ow)

    if kind == "residual_add":
        first = input_dims[0]
        for dims in input_dims[1:]:
            if dims != first:
                raise ShapeMismatch(node.node_id, f"addend shapes differ: {first} vs {dims}")
        return first

    if kind == "global_avg_pool":
        (dims,) = input_dims
        if len(dims) != 3:
            raise ShapeMismatch(node.node_id, f"global_avg_pool expects (C,H,W), got {dims}")
        return (dims[0],)

    if kind == "flatten":
        (dims,) = input_dims
        return (int(np.prod(dims, dtype=np.int64)),)

    if kind == "concat":
        first = input_dims[0]
        total = 0
        for dims in input_dims:
            if len(dims) != len(first) or dims[1:] != first[1:]:
                raise ShapeMismatch(node.node_id, f"concat shapes incompatible: {first} vs {dims}")
            total += dims[0]
        return (total,) + first[1:]

    raise ShapeMismatch(node.node_id, f"unknown kind {kind!r}")


def infer_shapes(g: ModelGraph) -> dict[str, TensorSpec]:
    """Output spec per node, walked in topological order.

    Deterministic and independent of node insertion order. Raises
    ShapeMismatch when a node's inputs are incompatible and
    CycleDetected when the graph is not a DAG.
    """
    shapes: dict[str, TensorSpec] = {}
    for nid in topo_order(g):
        node = g.nodes[nid]
        if nid == g.entry:
            if node.inputs:
                raise ShapeMismatch(nid, "entry node must not have predecessors")
            input_dims = [g.input_spec.dims]
        else:
            missing = [src for src in node.inputs if src not in g.nodes]
            if missing:
                raise ShapeMismatch(nid, f"unknown predecessor(s) {missing}")
            if not node.inputs:
                raise ShapeMismatch(nid, "only the entry node may have no predecessors")
            input_dims = [shapes[src].dims for src in node.inputs]
        shapes[nid] = TensorSpec(node_output_dims(node, input_dims))
    return shapes


def expected_weight_shapes(
    node: OpNode, input_dims: list[tuple[int, ...]]
) -> dict[str, tuple[tuple[int, ...], bool]]:
    """Map weight role -> (expected dims, required) for one node."""
    kind = node.kind
    if kind == "dense":
        units = int(node.attrs["units"])
        fan_in = int(node.attrs["fan_in"])
        return {"weight": ((units, fan_in), True), "bias": ((units,), False)}
    if kind == "conv2d":
        out_c = int(node.attrs["out_channels"])
        k = int(node.attrs["kernel"])
        in_c = input_dims[0][0]
        return {"weight": ((out_c, in_c, k, k), True), "bias": ((out_c,), False)}
    if kind == "batchnorm_inference":
        c = input_dims[0][0]
        per_channel = ((c,), True)
        return {"gamma": per_channel, "beta": per_channel, "mean": per_channel, "var": per_channel}
    return {}


def validate_graph(g: ModelGraph, w: WeightStore) -> ValidationReport:
    """Check every ModelGraph invariant and weight-reference consistency.

    An empty problem list guarantees the executor cannot raise a shape
    error on any input matching ``g.input_spec``.
    """
    problems: list[Problem] = []

    def add(code: str, node_id: str, message: str):
        problems.append(Problem(code, node_id, message))

    if g.entry not in g.nodes:
        add("missing-entry", g.entry, "entry node not present")
    if g.exit not in g.nodes:
        add("missing-exit", g.exit, "exit node not present")
    if problems:
        return ValidationReport(g.model_id, problems)

    dangling = False
    for nid, node in sorted(g.nodes.items()):
        for src in node.inputs:
            if src not in g.nodes:
                add("dangling-edge", nid, f"input {src!r} is not a node")
                dangling = True

    order = None
    if not dangling:
        try:
            order = topo_order(g)
        except CycleDetected:
            add("cycle", "", "cycle detected")

    # Arity per kind.
    for nid, node in sorted(g.nodes.items()):
        n_in = len(node.inputs)
        if nid == g.entry:
            if n_in != 0:
                add("entry-arity", nid, "entry node must have no predecessors")
            if node.kind not in SINGLE_INPUT_KINDS:
                add("arity", nid, f"entry consumes one external input; {node.kind} cannot")
        elif node.kind in SINGLE_INPUT_KINDS and n_in != 1:
            add("arity", nid, f"{node.kind} takes exactly 1 input, has {n_in}")
        elif node.kind in ("residual_add", "concat") and n_in < 2:
            add("arity", nid, f"{node.kind} takes >= 2 inputs, has {n_in}")
        elif nid != g.entry and n_in == 0:
            add("arity", nid, "non-entry node has no predecessors")
    if problems:
        return ValidationReport(g.model_id, problems)

    # Reachability: every node reachable from entry.
    reachable = {g.entry}
    successors: dict[str, list[str]] = {nid: [] for nid in g.nodes}
    for nid, node in g.nodes.items():
        for src in node.inputs:
            successors[src].append(nid)
    for nid in order:
        if nid in reachable:
            for succ in successors[nid]:
                reachable.add(succ)
    for nid in sorted(set(g.nodes) - reachable):
        add("unreachable", nid, "not reachable from entry")

    try:
        shapes = infer_shapes(g)
    except ShapeMismatch as exc:
        add("shape", exc.node_id, str(exc))
        return ValidationReport(g.model_id, problems)

    if shapes[g.exit].dims != g.output_spec.dims:
        add(
            "output-spec",
            g.exit,
            f"exit produces {shapes[g.exit].dims}, declared {g.output_spec.dims}",
        )

    # Weight references resolve with consistent shapes.
    for nid in order:
        node = g.nodes[nid]
        input_dims = (
            [g.input_spec.dims] if nid == g.entry else [shapes[src].dims for src in node.inputs]
        )
        expect = expected_weight_shapes(node, input_dims)
        for role, ref in sorted(node.weight_refs.items()):
            if role not in expect:
                add("weight-role", nid, f"{node.kind} takes no {role!r} weight")
                continue
            if ref not in w:
                add("weight-missing", nid, f"weight {ref!r} not in store")
                continue
            if w.spec(ref).dims != expect[role][0]:
                add(
                    "weight-shape-mismatch",
                    nid,
                    f"{role}={ref!r} has shape {w.spec(ref).dims}, expected {expect[role][0]}",
                )
        for role, (dims, required) in sorted(expect.items()):
            if required and role not in node.weight_refs:
                add("weight-ref-missing", nid, f"{node.kind} requires a {role!r} weight ref")

    return ValidationReport(g.model_id, problems)


def node_flops(node: OpNode, input_dims: list[tuple[int, ...]], output_dims: tuple[int, ...]) -> int:
    """Rough multiply-add count used by the analytic latency model."""
    out_elems = int(np.prod(output_dims, dtype=np.int64))
    if node.kind == "dense":
        return 2 * int(node.attrs["fan_in"]) * int(node.attrs["units"])
    if node.kind == "conv2d":
        k = int(node.attrs["kernel"])
        in_c = input_dims[0][0]
        return 2 * in_c * k * k * out_elems
    if node.kind in ("residual_add", "concat"):
        return out_elems * max(len(input_dims) - 1, 1)
    if node.kind == "batchnorm_inference":
        return 4 * out_elems
    if node.kind == "maxpool2d":
        k = int(node.attrs["kernel"])
        return k * k * out_elems
    if node.kind == "global_avg_pool":
        return int(np.prod(input_dims[0], dtype=np.int64))
    return out_elems


def peak_activation_bytes(g: ModelGraph, shapes: dict[str, TensorSpec] | None = None) -> int:
    """Peak live-tensor bytes under producer-to-last-consumer liveness.

    The external input counts as live from the start until its last
    consumer (the entry node). Deterministic upper bound.
    """
    if shapes is None:
        shapes = infer_shapes(g)
    order = topo_order(g)
    position = {nid: i for i, nid in enumerate(order)}
    last_use: dict[str, int] = {nid: position[nid] for nid in order}
    for nid, node in g.nodes.items():
        for src in node.inputs:
            last_use[src] = max(last_use[src], position[nid])
    # Exit output stays live to the end.
    last_use[g.exit] = len(order)

    live = g.input_spec.byte_size  # external input, consumed by entry
    peak = live
    expire: dict[int, int] = {}
    expire[position[g.entry]] = g.input_spec.byte_size
    for i, nid in enumerate(order):
        live += shapes[nid].byte_size
        peak = max(peak, live)
        expire[last_use[nid]] = expire.get(last_use[nid], 0) + shapes[nid].byte_size
        live -= expire.pop(i, 0)
    return peak


def mib_ceil(byte_count: int) -> int:
    return int(math.ceil(byte_count / MIB))
