"""On-disk formats: model description (JSON) and weights (binary).

Model files are JSON with fields {model_id, input_spec, output_spec,
nodes, entry, exit}; each node carries {node_id, kind, attrs,
weight_refs, inputs}.

Weights files are little-endian binary: magic "FIWT", u32 tensor count,
then per tensor: u16 name length, name bytes, u8 rank, u32 dims[rank],
4-byte IEEE-754 values row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, WeightsFormatError
from .graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore

WEIGHTS_MAGIC = b"FIWT"


def graph_to_dict(g: ModelGraph) -> dict:
    return {
        "model_id": g.model_id,
        "input_spec": list(g.input_spec.dims),
        "output_spec": list(g.output_spec.dims),
        "entry": g.entry,
        "exit": g.exit,
        "nodes": [
            {
                "node_id": node.node_id,
                "kind": node.kind,
                "attrs": dict(node.attrs),
                "weight_refs": dict(node.weight_refs),
                "inputs": list(node.inputs),
            }
            for _, node in sorted(g.nodes.items())
        ],
    }


def graph_from_dict(data: dict, path: str = "<memory>") -> ModelGraph:
    try:
        nodes = [
            OpNode(
                node_id=nd["node_id"],
                kind=nd["kind"],
                attrs=nd.get("attrs", {}),
                weight_refs=nd.get("weight_refs", {}),
                inputs=tuple(nd.get("inputs", ())),
            )
            for nd in data["nodes"]
        ]
        return ModelGraph(
            model_id=data["model_id"],
            nodes=nodes,
            entry=data["entry"],
            exit=data["exit"],
            input_spec=TensorSpec(tuple(data["input_spec"])),
            output_spec=TensorSpec(tuple(data["output_spec"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(path, f"bad model description: {exc}") from exc


def save_graph(g: ModelGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), indent=1, sort_keys=True) + "\n")


def load_graph(path) -> ModelGraph:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(path, f"cannot parse: {exc}") from exc
    return graph_from_dict(data, str(path))


def save_weights(w: WeightStore, path) -> None:
    chunks = [WEIGHTS_MAGIC, struct.pack("<I", len(w))]
    for name, (spec, values) in sorted(w.items()):
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", spec.rank))
        chunks.append(struct.pack(f"<{spec.rank}I", *spec.dims))
        chunks.append(np.asarray(values, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> WeightStore:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise WeightsFormatError(path, str(exc)) from exc
    if blob[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(path, f"bad magic {blob[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    offset = 4
    try:
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        store = WeightStore()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            spec = TensorSpec(dims)
            raw = blob[offset : offset + spec.byte_size]
            if len(raw) != spec.byte_size:
                raise WeightsFormatError(path, f"truncated values for tensor {name!r}")
            offset += spec.byte_size
            store.put(name, spec, np.frombuffer(raw, dtype="<f4"))
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise WeightsFormatError(path, f"corrupt payload: {exc}") from exc
    if offset != len(blob):
        raise WeightsFormatError(path, f"{len(blob) - offset} trailing bytes")
    return store


def save_tensor_json(values: np.ndarray, dims, path) -> None:
    payload = {"dims": list(dims), "values": [float(v) for v in np.asarray(values).reshape(-1)]}
    Path(path).write_text(json.dumps(payload) + "\n")


def load_tensor_json(path) -> tuple[tuple[int, ...], np.ndarray]:
    data = json.loads(Path(path).read_text())
    dims = tuple(int(d) for d in data["dims"])
    return dims, np.asarray(data["values"], dtype=np.float32)
