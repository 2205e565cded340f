"""Repository: registration, profiling, persistence round-trips."""

import threading

import numpy as np
import pytest

from dagfuse import toygen
from dagfuse.errors import DuplicateModelId, NotFound, ValidationFailed
from dagfuse.graph_ir import WeightStore, infer_shapes, topo_order
from dagfuse.repo import Repository, profile_model

from conftest import make_dense_model


@pytest.fixture()
def repo(tmp_path, default_ct):
    return Repository(tmp_path / "repo", default_ct)


def test_register_with_explicit_profile(repo):
    g, w = toygen.mlp("tiny_mlp", 1)
    manifest = repo.register_model(g, w, profile=(10, 1.0))
    assert manifest.mem_required_mib == 10
    assert manifest.iter_latency_ms == 1.0
    assert manifest.weight_bytes == w.byte_size


def test_register_duplicate_id(repo):
    g, w = toygen.mlp("dup", 2)
    repo.register_model(g, w, profile=(10, 1.0))
    with pytest.raises(DuplicateModelId):
        repo.register_model(g, w, profile=(10, 1.0))


def test_register_invalid_model(repo):
    g, _ = make_dense_model("broken")
    with pytest.raises(ValidationFailed):
        repo.register_model(g, WeightStore())


def _liveness_oracle(graph, shapes):
    """Independent peak-bytes oracle: interval overlap counting."""
    order = topo_order(graph)
    pos = {nid: i for i, nid in enumerate(order)}
    last = {nid: pos[nid] for nid in order}
    for nid, node in graph.nodes.items():
        for src in node.inputs:
            last[src] = max(last[src], pos[nid])
    last[graph.exit] = len(order)
    peak = 0
    for t in range(len(order)):
        live = graph.input_spec.byte_size if t <= pos[graph.entry] else 0
        for nid in order:
            if pos[nid] <= t <= last[nid]:
                live += shapes[nid].byte_size
        peak = max(peak, live)
    return peak


def test_register_analytic_profile_matches_hand_sum(repo, default_ct):
    g, w = toygen.residual_net("auto", 7)
    manifest = repo.register_model(g, w)

    shapes = infer_shapes(g)
    weight_bytes = sum(spec.byte_size for spec, _ in dict(w.items()).values())
    peak_act = _liveness_oracle(g, shapes)
    import math

    expected_mem = math.ceil((weight_bytes + peak_act) / 2**20) + 34
    assert manifest.mem_required_mib == expected_mem
    assert manifest.weight_bytes == weight_bytes


def test_lookup_and_get_many(repo):
    ids = []
    for i in range(7):
        g, w = toygen.mlp(f"m{i}", i)
        repo.register_model(g, w, profile=(10 + i, 1.0 + i))
        ids.append(f"m{i}")
    order = ["m3", "m0", "m6", "m1"]
    manifests = repo.get_many(order)
    assert [m.model_id for m in manifests] == order
    with pytest.raises(NotFound):
        repo.lookup("nope")


def test_round_trip_reload(tmp_path, default_ct):
    repo = Repository(tmp_path / "r", default_ct)
    g, w = toygen.conv_stack("persist", 9)
    manifest = repo.register_model(g, w)

    again = Repository.open(tmp_path / "r", default_ct)
    restored = again.lookup("persist")
    assert restored == manifest

    graph2, weights2 = again.load_pair("persist")
    from dagfuse.graph_ir import validate_graph

    assert validate_graph(graph2, weights2).ok
    assert profile_model(graph2, weights2, default_ct) == (
        manifest.mem_required_mib,
        manifest.iter_latency_ms,
    )
    for name in w.names():
        assert np.array_equal(weights2.values(name), w.values(name))


def test_concurrent_lookups_during_registration(repo):
    for i in range(4):
        g, w = toygen.mlp(f"base{i}", i)
        repo.register_model(g, w, profile=(10, 1.0))

    errors = []

    def reader():
        try:
            for _ in range(200):
                repo.lookup("base1")
                repo.get_many(["base0", "base2"])
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    def writer():
        try:
            for i in range(20):
                g, w = toygen.mlp(f"new{i}", 100 + i)
                repo.register_model(g, w, profile=(10, 1.0))
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=reader) for _ in range(3)] + [
        threading.Thread(target=writer)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(repo.model_ids()) == 24
