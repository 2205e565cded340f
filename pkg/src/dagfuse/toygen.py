"""Deterministic toy model generators for fixtures and property tests.

Small single-input CNN/MLP graphs in a handful of family styles, plus a
randomized generator that exercises every operator kind. All weights
come from a seeded RNG, so identical parameters produce identical
models (and identical weight files).
"""

from __future__ import annotations

import numpy as np

from .graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore, infer_shapes

F32 = np.float32


class GraphBuilder:
    """Incremental single-path builder with explicit branch support."""

    def __init__(self, model_id: str, input_dims: tuple[int, ...], rng: np.random.Generator):
        self.model_id = model_id
        self.input_dims = tuple(input_dims)
        self.rng = rng
        self.nodes: list[OpNode] = []
        self.weights = WeightStore()
        self._counter = 0
        self.entry: str | None = None
        self.tip: str | None = None  # current chain head
        self.tip_dims: tuple[int, ...] = self.input_dims

    def _next_id(self, kind: str) -> str:
        self._counter += 1
        return f"n{self._counter:02d}_{kind}"

    def _add(self, kind: str, attrs=None, weight_refs=None, inputs=()) -> str:
        nid = self._next_id(kind)
        self.nodes.append(
            OpNode(nid, kind, attrs or {}, weight_refs or {}, tuple(inputs))
        )
        if self.entry is None:
            self.entry = nid
        return nid

    def _weight(self, nid: str, role: str, dims: tuple[int, ...], values) -> str:
        name = f"{nid}.{role}"
        self.weights.put(name, TensorSpec(dims), np.asarray(values, dtype=F32))
        return name

    # -- chain ops -------------------------------------------------------

    def conv(self, out_channels: int, kernel: int = 3, stride: int = 1, padding: int = 1,
             bias: bool = True, source: str | None = None, source_dims=None) -> str:
        src = source if source is not None else self.tip
        dims = tuple(source_dims) if source_dims is not None else self.tip_dims
        in_c, h, w = dims
        nid = self._next_id("conv2d")
        scale = 0.5 / np.sqrt(in_c * kernel * kernel)
        wname = f"{nid}.weight"
        self.weights.put(
            wname,
            TensorSpec((out_channels, in_c, kernel, kernel)),
            self.rng.standard_normal(out_channels * in_c * kernel * kernel) * scale,
        )
        refs = {"weight": wname}
        if bias:
            bname = f"{nid}.bias"
            self.weights.put(bname, TensorSpec((out_channels,)),
                             self.rng.standard_normal(out_channels) * 0.1)
            refs["bias"] = bname
        self.nodes.append(
            OpNode(
                nid,
                "conv2d",
                {"out_channels": out_channels, "kernel": kernel, "stride": stride,
                 "padding": padding},
                refs,
                () if src is None else (src,),
            )
        )
        if self.entry is None:
            self.entry = nid
        oh = (h + 2 * padding - kernel) // stride + 1
        ow = (w + 2 * padding - kernel) // stride + 1
        out_dims = (out_channels, oh, ow)
        if source is None:
            self.tip, self.tip_dims = nid, out_dims
        return nid

    def relu(self, source: str | None = None) -> str:
        src = source if source is not None else self.tip
        nid = self._add("relu", inputs=() if src is None else (src,))
        if source is None:
            self.tip = nid
        return nid

    def batchnorm(self, source: str | None = None, channels: int | None = None) -> str:
        src = source if source is not None else self.tip
        c = channels if channels is not None else self.tip_dims[0]
        nid = self._next_id("batchnorm_inference")
        refs = {
            "gamma": self._weight(nid, "gamma", (c,), self.rng.uniform(0.5, 1.5, c)),
            "beta": self._weight(nid, "beta", (c,), self.rng.standard_normal(c) * 0.1),
            "mean": self._weight(nid, "mean", (c,), self.rng.standard_normal(c) * 0.1),
            "var": self._weight(nid, "var", (c,), self.rng.uniform(0.5, 1.5, c)),
        }
        self.nodes.append(
            OpNode(nid, "batchnorm_inference", {"epsilon": 1e-5}, refs,
                   () if src is None else (src,))
        )
        if self.entry is None:
            self.entry = nid
        if source is None:
            self.tip = nid
        return nid

    def maxpool(self, kernel: int = 2, stride: int | None = None) -> str:
        stride = stride if stride is not None else kernel
        nid = self._add("maxpool2d", {"kernel": kernel, "stride": stride}, inputs=(self.tip,))
        c, h, w = self.tip_dims
        self.tip = nid
        self.tip_dims = (c, (h - kernel) // stride + 1, (w - kernel) // stride + 1)
        return nid

    def residual_block(self) -> str:
        """Two shape-preserving branches joined by residual_add."""
        left = self.relu(source=self.tip)
        right = self.batchnorm(source=self.tip)
        nid = self._add("residual_add", inputs=(left, right))
        self.tip = nid
        return nid

    def concat_block(self, channels_each: int) -> str:
        """Two convolution branches concatenated along channels."""
        left = self.conv(channels_each, kernel=1, padding=0, source=self.tip,
                         source_dims=self.tip_dims)
        right = self.conv(channels_each, kernel=3, padding=1, source=self.tip,
                          source_dims=self.tip_dims)
        nid = self._add("concat", inputs=(left, right))
        c, h, w = self.tip_dims
        self.tip = nid
        self.tip_dims = (2 * channels_each, h, w)
        return nid

    def global_avg_pool(self) -> str:
        nid = self._add("global_avg_pool", inputs=(self.tip,))
        self.tip = nid
        self.tip_dims = (self.tip_dims[0],)
        return nid

    def flatten(self) -> str:
        nid = self._add("flatten", inputs=(self.tip,))
        self.tip = nid
        self.tip_dims = (int(np.prod(self.tip_dims)),)
        return nid

    def dense(self, units: int, bias: bool = True) -> str:
        fan_in = int(self.tip_dims[0])
        nid = self._next_id("dense")
        wname = f"{nid}.weight"
        self.weights.put(
            wname,
            TensorSpec((units, fan_in)),
            self.rng.standard_normal(units * fan_in) * (0.5 / np.sqrt(fan_in)),
        )
        refs = {"weight": wname}
        if bias:
            refs["bias"] = self._weight(nid, "bias", (units,),
                                        self.rng.standard_normal(units) * 0.1)
        self.nodes.append(
            OpNode(nid, "dense", {"units": units, "fan_in": fan_in}, refs,
                   () if self.tip is None else (self.tip,))
        )
        if self.entry is None:
            self.entry = nid
        self.tip = nid
        self.tip_dims = (units,)
        return nid

    def build(self) -> tuple[ModelGraph, WeightStore]:
        graph = ModelGraph(
            model_id=self.model_id,
            nodes=self.nodes,
            entry=self.entry,
            exit=self.tip,
            input_spec=TensorSpec(self.input_dims),
            output_spec=TensorSpec(self.tip_dims),
        )
        infer_shapes(graph)  # fail fast on generator bugs
        return graph, self.weights


def conv_stack(model_id: str, seed: int, *, channels=(4, 6), classes: int = 4,
               with_bn: bool = False, input_dims=(3, 8, 8)) -> tuple[ModelGraph, WeightStore]:
    """Plain convolutional stack (VGG-flavoured): conv/relu/pool blocks."""
    b = GraphBuilder(model_id, input_dims, np.random.default_rng(seed))
    for i, c in enumerate(channels):
        b.conv(c)
        if with_bn:
            b.batchnorm()
        b.relu()
        if i == 0:
            b.maxpool()
    b.flatten()
    b.dense(classes)
    return b.build()


def residual_net(model_id: str, seed: int, *, channels: int = 4, blocks: int = 2,
                 classes: int = 4, input_dims=(3, 8, 8)) -> tuple[ModelGraph, WeightStore]:
    """Residual-style: conv stem, shape-preserving add blocks, pooled head."""
    b = GraphBuilder(model_id, input_dims, np.random.default_rng(seed))
    b.conv(channels)
    b.batchnorm()
    b.relu()
    for _ in range(blocks):
        b.residual_block()
    b.global_avg_pool()
    b.dense(classes)
    return b.build()


def concat_net(model_id: str, seed: int, *, growth: int = 3, blocks: int = 2,
               classes: int = 4, input_dims=(3, 8, 8)) -> tuple[ModelGraph, WeightStore]:
    """Concatenation-style (DenseNet/SqueezeNet-flavoured) topology."""
    b = GraphBuilder(model_id, input_dims, np.random.default_rng(seed))
    b.conv(growth, kernel=1, padding=0)
    b.relu()
    for _ in range(blocks):
        b.concat_block(growth)
    b.maxpool()
    b.global_avg_pool()
    b.dense(classes)
    return b.build()


def slim_net(model_id: str, seed: int, *, channels: int = 4, classes: int = 4,
             input_dims=(3, 8, 8)) -> tuple[ModelGraph, WeightStore]:
    """Lightweight mobile-flavoured stack with a pooled head."""
    b = GraphBuilder(model_id, input_dims, np.random.default_rng(seed))
    b.conv(channels, kernel=3, stride=2, padding=1)
    b.batchnorm()
    b.relu()
    b.conv(channels + 2, kernel=1, padding=0)
    b.relu()
    b.global_avg_pool()
    b.dense(classes)
    return b.build()


def mlp(model_id: str, seed: int, *, in_dim: int = 12, hidden: int = 8,
        classes: int = 4) -> tuple[ModelGraph, WeightStore]:
    b = GraphBuilder(model_id, (in_dim,), np.random.default_rng(seed))
    b.dense(hidden)
    b.relu()
    b.dense(classes)
    return b.build()


FAMILIES = {
    "conv_stack": conv_stack,
    "residual_net": residual_net,
    "concat_net": concat_net,
    "slim_net": slim_net,
    "mlp": mlp,
}


def random_model(model_id: str, seed: int, *, max_nodes: int = 30) -> tuple[ModelGraph, WeightStore]:
    """Random valid tiny model mixing all operator kinds.

    Node count stays at or under ``max_nodes``; the closing head always
    reduces to a rank-1 prediction via pooling/flatten plus dense.
    """
    rng = np.random.default_rng(seed)
    in_c = int(rng.integers(1, 4))
    side = int(rng.choice([6, 8]))
    b = GraphBuilder(model_id, (in_c, side, side), rng)
    b.conv(int(rng.integers(2, 5)))
    budget = max_nodes - 5  # reserve head room: pool/flatten + dense (+relu)
    while budget > 4:
        choice = rng.random()
        c, h, w = b.tip_dims
        if choice < 0.25 and h >= 4:
            b.maxpool()
            budget -= 1
        elif choice < 0.45:
            b.residual_block()  # 3 nodes
            budget -= 3
        elif choice < 0.6:
            b.concat_block(int(rng.integers(2, 4)))  # 3 nodes
            budget -= 3
        elif choice < 0.75:
            b.batchnorm()
            budget -= 1
        elif choice < 0.9:
            b.conv(int(rng.integers(2, 5)))
            budget -= 1
        else:
            b.relu()
            budget -= 1
        if rng.random() < 0.3:
            break
    if len(b.tip_dims) == 3:
        if rng.random() < 0.5:
            b.global_avg_pool()
        else:
            b.flatten()
    b.relu()
    b.dense(int(rng.integers(2, 6)))
    graph, weights = b.build()
    assert graph.node_count() <= max_nodes
    return graph, weights
