"""Model file and weights file round-trips."""

import numpy as np
import pytest

from dagfuse import toygen
from dagfuse.errors import ModelFormatError, WeightsFormatError
from dagfuse.model_io import (
    load_graph,
    load_weights,
    save_graph,
    save_weights,
)


def test_graph_round_trip(tmp_path):
    g, _ = toygen.random_model("rt", 3)
    path = tmp_path / "model.json"
    save_graph(g, path)
    loaded = load_graph(path)
    assert loaded.model_id == g.model_id
    assert loaded.entry == g.entry and loaded.exit == g.exit
    assert loaded.input_spec.dims == g.input_spec.dims
    assert set(loaded.nodes) == set(g.nodes)
    for nid, node in g.nodes.items():
        other = loaded.nodes[nid]
        assert other.kind == node.kind
        assert other.inputs == node.inputs
        assert dict(other.weight_refs) == dict(node.weight_refs)
    assert loaded.edges == g.edges


def test_weights_round_trip_bitwise(tmp_path):
    _, w = toygen.random_model("rt", 4)
    path = tmp_path / "weights.fiwt"
    save_weights(w, path)
    loaded = load_weights(path)
    assert sorted(loaded.names()) == sorted(w.names())
    for name in w.names():
        assert loaded.spec(name).dims == w.spec(name).dims
        assert np.array_equal(loaded.values(name), w.values(name))
    # Serialization is canonical: saving again produces identical bytes.
    path2 = tmp_path / "weights2.fiwt"
    save_weights(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_weights_bad_magic_names_file(tmp_path):
    _, w = toygen.random_model("rt", 5)
    path = tmp_path / "weights.fiwt"
    save_weights(w, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightsFormatError) as exc:
        load_weights(path)
    assert "weights.fiwt" in str(exc.value)
    assert "magic" in str(exc.value)


def test_weights_truncated(tmp_path):
    _, w = toygen.random_model("rt", 6)
    path = tmp_path / "weights.fiwt"
    save_weights(w, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 7])
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_graph_bad_json(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_graph(path)
    path.write_text('{"model_id": "m"}')
    with pytest.raises(ModelFormatError):
        load_graph(path)
