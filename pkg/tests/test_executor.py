"""Reference executor semantics and determinism."""

import numpy as np
import pytest

from dagfuse import toygen
from dagfuse.errors import MissingWeight, ShapeMismatch
from dagfuse.executor import Tensor, eval_graph, run, run_batch
from dagfuse.graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore, topo_order

from conftest import make_dense_model, random_tensor

F32 = np.float32


def test_dense_identity():
    g, w = make_dense_model(fan_in=4, units=4, weight=np.eye(4), bias=np.zeros(4))
    x = random_tensor(g.input_spec, 1)
    out = run(g, w, x)
    assert np.array_equal(out.values, x.values)


def test_relu_clamps():
    node = OpNode("r", "relu", {}, {}, ())
    g = ModelGraph("m", [node], "r", "r", TensorSpec((3,)), TensorSpec((3,)))
    out = run(g, WeightStore(), Tensor(TensorSpec((3,)), np.array([-1.0, 0.0, 2.0])))
    assert out.values.tolist() == [0.0, 0.0, 2.0]


def test_conv2d_hand_computed():
    # 2x2 input [[1,2],[3,4]], kernel [[1,0],[0,1]]: single output 1+4=5.
    store = WeightStore()
    store.put("k", TensorSpec((1, 1, 2, 2)), np.array([1.0, 0.0, 0.0, 1.0]))
    node = OpNode(
        "c", "conv2d", {"out_channels": 1, "kernel": 2, "stride": 1, "padding": 0},
        {"weight": "k"}, (),
    )
    g = ModelGraph("m", [node], "c", "c", TensorSpec((1, 2, 2)), TensorSpec((1, 1, 1)))
    out = run(g, store, Tensor(TensorSpec((1, 2, 2)), np.array([1.0, 2.0, 3.0, 4.0])))
    assert out.values.tolist() == [5.0]


def _conv_naive(x, wt, bias, stride, pad):
    """Six-loop scalar oracle with the same (c, ki, kj) fold order."""
    out_c, in_c, k, _ = wt.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad))).astype(F32)
    oh = (x.shape[1] - k) // stride + 1
    ow = (x.shape[2] - k) // stride + 1
    out = np.zeros((out_c, oh, ow), dtype=F32)
    for o in range(out_c):
        for i in range(oh):
            for j in range(ow):
                acc = F32(0.0)
                for c in range(in_c):
                    for ki in range(k):
                        for kj in range(k):
                            acc += wt[o, c, ki, kj] * x[c, i * stride + ki, j * stride + kj]
                out[o, i, j] = acc
    if bias is not None:
        out = out + bias[:, None, None]
    return out


@pytest.mark.parametrize("seed", range(6))
def test_conv2d_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    in_c = int(rng.integers(1, 5))
    side = int(rng.integers(4, 9))
    out_c = int(rng.integers(1, 4))
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.choice([0, 1]))
    wt = rng.standard_normal((out_c, in_c, k, k)).astype(F32)
    bias = rng.standard_normal(out_c).astype(F32)
    x = rng.standard_normal((in_c, side, side)).astype(F32)

    store = WeightStore()
    store.put("w", TensorSpec(wt.shape), wt)
    store.put("b", TensorSpec((out_c,)), bias)
    node = OpNode(
        "c", "conv2d",
        {"out_channels": out_c, "kernel": k, "stride": stride, "padding": pad},
        {"weight": "w", "bias": "b"}, (),
    )
    oh = (side + 2 * pad - k) // stride + 1
    g = ModelGraph("m", [node], "c", "c", TensorSpec((in_c, side, side)),
                   TensorSpec((out_c, oh, oh)))
    got = run(g, store, Tensor(TensorSpec((in_c, side, side)), x.reshape(-1)))
    expected = _conv_naive(x, wt, bias, stride, pad)
    assert np.array_equal(got.array(), expected)


def test_batchnorm_formula():
    store = WeightStore()
    c = 3
    gamma = np.array([1.0, 2.0, 0.5], dtype=F32)
    beta = np.array([0.1, -0.2, 0.0], dtype=F32)
    mean = np.array([0.5, -1.0, 2.0], dtype=F32)
    var = np.array([1.0, 4.0, 0.25], dtype=F32)
    for name, vals in (("g", gamma), ("b", beta), ("m", mean), ("v", var)):
        store.put(name, TensorSpec((c,)), vals)
    node = OpNode("bn", "batchnorm_inference", {"epsilon": 1e-5},
                  {"gamma": "g", "beta": "b", "mean": "m", "var": "v"}, ())
    g = ModelGraph("m", [node], "bn", "bn", TensorSpec((3, 2, 2)), TensorSpec((3, 2, 2)))
    x = random_tensor(TensorSpec((3, 2, 2)), 3)
    out = run(g, store, x)
    xa = x.array()
    shape = (3, 1, 1)
    expected = (
        gamma.reshape(shape)
        * (xa - mean.reshape(shape))
        * (F32(1.0) / np.sqrt(var + F32(1e-5))).astype(F32).reshape(shape)
        + beta.reshape(shape)
    ).astype(F32)
    assert np.allclose(out.array(), expected, rtol=1e-6)


def test_residual_identity_and_concat_split():
    g, w = toygen.concat_net("cn", 5)
    x = random_tensor(g.input_spec, 4)
    assert np.array_equal(run(g, w, x).values, run(g, w, x).values)

    # residual_add(x, zeros) == x
    nodes = [
        OpNode("a", "relu", {}, {}, ()),
        OpNode("z", "conv2d", {"out_channels": 2, "kernel": 1, "stride": 1, "padding": 0},
               {"weight": "zw"}, ("a",)),
        OpNode("s", "residual_add", {}, {}, ("a", "z")),
    ]
    store = WeightStore()
    store.put("zw", TensorSpec((2, 2, 1, 1)), np.zeros(4, dtype=F32))
    g2 = ModelGraph("rid", nodes, "a", "s", TensorSpec((2, 3, 3)), TensorSpec((2, 3, 3)))
    x2 = Tensor(TensorSpec((2, 3, 3)), np.abs(np.random.default_rng(5).standard_normal(18)))
    out = run(g2, store, x2)
    assert np.array_equal(out.values, x2.values)

    # concat then channel-split recovers both inputs
    a = np.random.default_rng(6).standard_normal((2, 3, 3)).astype(F32)
    b = np.random.default_rng(7).standard_normal((3, 3, 3)).astype(F32)
    merged = np.concatenate([a, b], axis=0)
    assert np.array_equal(merged[:2], a)
    assert np.array_equal(merged[2:], b)


def test_run_batch_semantics():
    g, w = make_dense_model(seed=2)
    assert run_batch(g, w, []) == []
    x = random_tensor(g.input_spec, 8)
    outs = run_batch(g, w, [x] * 100)
    assert len(outs) == 100
    first = outs[0].values
    assert all(np.array_equal(o.values, first) for o in outs)

    xs = [random_tensor(g.input_spec, 100 + i) for i in range(20)]
    outs = run_batch(g, w, xs)
    for x, out in zip(xs, outs):
        assert np.array_equal(out.values, run(g, w, x).values)


def test_determinism_bitwise():
    for seed in range(8):
        g, w = toygen.random_model(f"m{seed}", seed)
        x = random_tensor(g.input_spec, seed + 50)
        a = run(g, w, x)
        b = run(g, w, x)
        assert np.array_equal(a.values, b.values)


def test_topological_order_independence():
    # Any valid topological order gives bitwise-identical outputs.
    rng = np.random.default_rng(9)
    for seed in range(6):
        g, w = toygen.random_model(f"m{seed}", seed + 20)
        x = random_tensor(g.input_spec, seed + 80)
        canonical = eval_graph(g.nodes, topo_order(g), g.entry, g.exit, w, x.array())
        for _ in range(4):
            order = _random_topo(g, rng)
            alt = eval_graph(g.nodes, order, g.entry, g.exit, w, x.array())
            assert np.array_equal(canonical, alt)


def _random_topo(g, rng):
    indeg = {nid: len(n.inputs) for nid, n in g.nodes.items()}
    succs = {nid: [] for nid in g.nodes}
    for nid, node in g.nodes.items():
        for src in node.inputs:
            succs[src].append(nid)
    ready = [nid for nid, d in indeg.items() if d == 0]
    order = []
    while ready:
        nid = ready.pop(int(rng.integers(len(ready))))
        order.append(nid)
        for s in succs[nid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    return order


def test_shape_mismatch_and_missing_weight():
    g, w = make_dense_model(fan_in=4, units=2)
    with pytest.raises(ShapeMismatch):
        run(g, w, Tensor(TensorSpec((5,)), np.zeros(5)))
    with pytest.raises(MissingWeight):
        run(g, WeightStore(), Tensor(TensorSpec((4,)), np.zeros(4)))


def test_outputs_all_float32_and_finite():
    for seed in range(5):
        g, w = toygen.random_model(f"m{seed}", seed + 40)
        out = run(g, w, random_tensor(g.input_spec, seed))
        assert out.values.dtype == np.float32
        assert np.all(np.isfinite(out.values))
