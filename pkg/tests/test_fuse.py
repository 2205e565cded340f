"""Fusion compiler: structure preservation, equivalence, swaps."""

import time

import numpy as np
import pytest

from dagfuse import costmodel, executor, toygen
from dagfuse.errors import (
    DuplicateModelId,
    MissingInput,
    UnknownSubgraph,
    ValidationFailed,
)
from dagfuse.executor import Tensor, run
from dagfuse.fuse import (
    build_preamble,
    execute_fused,
    fuse_models,
    swap_subgraph,
)
from dagfuse.graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore

from conftest import make_dense_model, random_tensor


def _zoo(n, seed0=0):
    return [toygen.random_model(f"m{i}", seed0 + i) for i in range(n)]


def test_singleton_fusion_preserves_structure():
    g, w = toygen.residual_net("solo", 11)
    dag = fuse_models([(g, w)])
    assert len(dag.subgraphs) == 1
    sg = dag.subgraphs[0]
    assert sg.node_count() == g.node_count()
    # Node-for-node, edge-for-edge identical up to the namespace prefix.
    strip = len("solo/")
    assert {nid[strip:] for nid in sg.nodes} == set(g.nodes)
    assert {(a[strip:], b[strip:]) for a, b in sg.edges} == set(g.edges)
    assert sg.weight_binding is w


def test_preamble_multiplicities():
    models = _zoo(7)
    dag = fuse_models(models)
    assert all(call.multiplicity == 1 for call in dag.preamble.calls)
    assert {c.function_name for c in dag.preamble.calls} == set(costmodel.INIT_FUNCTIONS)
    baseline = build_preamble(7, fused=False)
    assert all(call.multiplicity == 7 for call in baseline.calls)


def test_fused_outputs_bitwise_equal_solo():
    models = _zoo(2, seed0=30)
    dag = fuse_models(models)
    for trial in range(5):
        inputs = {
            g.model_id: random_tensor(g.input_spec, 100 * trial + i)
            for i, (g, _) in enumerate(models)
        }
        outs = execute_fused(dag, inputs)
        for g, w in models:
            solo = run(g, w, inputs[g.model_id])
            assert np.array_equal(outs[g.model_id].values, solo.values)


def test_five_models_twenty_inputs_bitwise():
    models = _zoo(5, seed0=60)
    dag = fuse_models(models)
    for trial in range(20):
        inputs = {
            g.model_id: random_tensor(g.input_spec, 1000 + 31 * trial + i)
            for i, (g, _) in enumerate(models)
        }
        outs = execute_fused(dag, inputs)
        for g, w in models:
            assert np.array_equal(
                outs[g.model_id].values, run(g, w, inputs[g.model_id]).values
            )


def test_structure_invariants():
    models = _zoo(4, seed0=90)
    dag = fuse_models(models)
    assert dag.cross_edge_count() == 0
    assert dag.node_count() == sum(g.node_count() for g, _ in models)
    assert dag.model_ids() == [g.model_id for g, _ in models]


def test_duplicate_and_invalid_models_rejected():
    g, w = make_dense_model("dup")
    with pytest.raises(DuplicateModelId):
        fuse_models([(g, w), (g, w)])
    bad_g, _ = make_dense_model("bad", fan_in=4, units=2)
    with pytest.raises(ValidationFailed):
        fuse_models([(bad_g, WeightStore())])


def test_zero_input_dense_yields_bias():
    bias = np.array([0.5, -1.5, 3.0], dtype=np.float32)
    g, w = make_dense_model("b", fan_in=4, units=3, bias=bias)
    dag = fuse_models([(g, w)])
    outs = execute_fused(dag, {"b": Tensor.zeros(g.input_spec)})
    assert outs["b"].values.tolist() == bias.tolist()


def test_input_map_is_keyed_not_positional():
    models = _zoo(3, seed0=120)
    dag = fuse_models(models)
    inputs = {
        g.model_id: random_tensor(g.input_spec, 7 + i) for i, (g, _) in enumerate(models)
    }
    permuted = {mid: inputs[mid] for mid in reversed(list(inputs))}
    a = execute_fused(dag, inputs)
    b = execute_fused(dag, permuted)
    for mid in inputs:
        assert np.array_equal(a[mid].values, b[mid].values)


def test_execute_fused_input_errors():
    models = _zoo(2, seed0=150)
    dag = fuse_models(models)
    with pytest.raises(MissingInput):
        execute_fused(dag, {models[0][0].model_id: Tensor.zeros(models[0][0].input_spec)})
    full = {g.model_id: Tensor.zeros(g.input_spec) for g, _ in models}
    with pytest.raises(UnknownSubgraph):
        execute_fused(dag, {**full, "stranger": Tensor.zeros(models[0][0].input_spec)})


def test_swap_subgraph_identity_preservation():
    models = _zoo(5, seed0=200)
    dag = fuse_models(models)
    incoming = toygen.random_model("fresh", 999)
    swapped = swap_subgraph(dag, "m2", incoming)

    assert swapped.compile_generation == dag.compile_generation + 1
    assert swapped.preamble is dag.preamble
    assert swapped.model_ids() == ["m0", "m1", "fresh", "m3", "m4"]
    before = {sg.model_id: id(sg) for sg in dag.subgraphs}
    for sg in swapped.subgraphs:
        if sg.model_id == "fresh":
            continue
        assert id(sg) == before[sg.model_id]  # untouched object identity


def test_swap_only_subgraph_equals_fresh_fuse():
    g, w = toygen.slim_net("one", 5)
    dag = fuse_models([(g, w)])
    incoming = toygen.conv_stack("two", 6)
    swapped = swap_subgraph(dag, "one", incoming)
    fresh = fuse_models([incoming])
    assert swapped.model_ids() == fresh.model_ids()
    assert set(swapped.subgraphs[0].nodes) == set(fresh.subgraphs[0].nodes)
    assert swapped.subgraphs[0].edges == fresh.subgraphs[0].edges
    assert swapped.compile_generation == 2


def test_swap_unknown_and_duplicate():
    models = _zoo(3, seed0=240)
    dag = fuse_models(models)
    with pytest.raises(UnknownSubgraph):
        swap_subgraph(dag, "ghost", toygen.random_model("x", 1))
    with pytest.raises(DuplicateModelId):
        swap_subgraph(dag, "m0", toygen.random_model("m1", 2))


def test_swap_then_swap_back_restores_set():
    models = _zoo(4, seed0=280)
    dag = fuse_models(models)
    out_pair = models[1]
    incoming = toygen.random_model("temp", 55)
    fwd = swap_subgraph(dag, "m1", incoming)
    back = swap_subgraph(fwd, "temp", out_pair)
    assert back.model_ids() == dag.model_ids()
    for orig, restored in zip(dag.subgraphs, back.subgraphs):
        assert set(orig.nodes) == set(restored.nodes)
        assert restored.weight_binding is orig.weight_binding


def test_concurrent_executions_share_dag_safely():
    import threading

    models = _zoo(3, seed0=320)
    dag = fuse_models(models)
    inputs = {
        g.model_id: random_tensor(g.input_spec, 11 + i) for i, (g, _) in enumerate(models)
    }
    reference = execute_fused(dag, inputs)
    results, errors = [], []

    def worker():
        try:
            results.append(execute_fused(dag, inputs))
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    for outs in results:
        for mid in reference:
            assert np.array_equal(outs[mid].values, reference[mid].values)


def _chain_model(model_id, length, seed):
    rng = np.random.default_rng(seed)
    nodes = [OpNode("n0000", "relu", {}, {}, ())]
    for i in range(1, length):
        nodes.append(OpNode(f"n{i:04d}", "relu", {}, {}, (f"n{i-1:04d}",)))
    g = ModelGraph(model_id, nodes, "n0000", f"n{length-1:04d}",
                   TensorSpec((4,)), TensorSpec((4,)))
    return g, WeightStore()


def test_fuse_runtime_scales_linearly():
    # Doubling total node count should cost at most ~2.5x compile time.
    small = [_chain_model(f"s{i}", 400, i) for i in range(4)]
    large = [_chain_model(f"l{i}", 800, i) for i in range(4)]

    def compile_time(models):
        best = float("inf")
        for _ in range(3):
            start = time.perf_counter()
            fuse_models(models)
            best = min(best, time.perf_counter() - start)
        return best

    compile_time(small)  # warm-up
    t_small = compile_time(small)
    t_large = compile_time(large)
    assert t_large <= 2.5 * t_small + 0.02
