"""Compile several model graphs into one DAG with a shared init preamble.

The fused DAG keeps every member's operator graph intact as a disjoint
sub-graph (node ids namespaced ``model_id/node_id``); no edge ever
crosses a sub-graph boundary and no operator is merged or shared, so
each member's output is bitwise identical to a solo run. Swapping one
sub-graph reuses every untouched SubGraph object (checkable by
identity), which is what makes recompilation cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import costmodel
from .errors import (
    DuplicateModelId,
    MissingInput,
    ShapeMismatch,
    UnknownSubgraph,
    ValidationFailed,
)
from .executor import Tensor, eval_graph
from .graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore, topo_order, validate_graph


@dataclass(frozen=True)
class InitCall:
    function_name: str
    multiplicity: int


@dataclass(frozen=True)
class InitPreamble:
    """Initialization ledger: one entry per device/driver/schema function.

    For a fused DAG every multiplicity is 1 regardless of member count;
    the unfused baseline books one call per member.
    """

    calls: tuple[InitCall, ...]

    def multiplicity(self, function_name: str) -> int:
        for call in self.calls:
            if call.function_name == function_name:
                return call.multiplicity
        raise KeyError(function_name)

    def total_calls(self) -> int:
        return sum(call.multiplicity for call in self.calls)


def build_preamble(n_models: int, fused: bool, function_names=None) -> InitPreamble:
    names = tuple(function_names) if function_names else costmodel.INIT_FUNCTIONS
    mult = 1 if fused else n_models
    return InitPreamble(tuple(InitCall(name, mult) for name in names))


def namespaced(model_id: str, node_id: str) -> str:
    return f"{model_id}/{node_id}"


@dataclass(frozen=True)
class SubGraph:
    """One member model inside a fused DAG, nodes namespaced by model id."""

    model_id: str
    nodes: dict[str, OpNode]
    entry: str
    exit: str
    input_spec: TensorSpec
    output_spec: TensorSpec
    weight_binding: WeightStore

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (src, node.node_id) for node in self.nodes.values() for src in node.inputs
        )

    def node_count(self) -> int:
        return len(self.nodes)


def _build_subgraph(graph: ModelGraph, weights: WeightStore) -> SubGraph:
    prefix = graph.model_id
    nodes: dict[str, OpNode] = {}
    for nid, node in graph.nodes.items():
        new_id = namespaced(prefix, nid)
        nodes[new_id] = OpNode(
            node_id=new_id,
            kind=node.kind,
            attrs=node.attrs,
            weight_refs=node.weight_refs,
            inputs=tuple(namespaced(prefix, src) for src in node.inputs),
        )
    return SubGraph(
        model_id=graph.model_id,
        nodes=nodes,
        entry=namespaced(prefix, graph.entry),
        exit=namespaced(prefix, graph.exit),
        input_spec=graph.input_spec,
        output_spec=graph.output_spec,
        weight_binding=weights,
    )


@dataclass(frozen=True)
class FusedDag:
    dag_id: str
    preamble: InitPreamble
    subgraphs: tuple[SubGraph, ...]
    total_mem_estimate_mib: float
    compile_generation: int

    def model_ids(self) -> list[str]:
        return [sg.model_id for sg in self.subgraphs]

    def subgraph(self, model_id: str) -> SubGraph:
        for sg in self.subgraphs:
            if sg.model_id == model_id:
                return sg
        raise UnknownSubgraph(model_id)

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        out: set[tuple[str, str]] = set()
        for sg in self.subgraphs:
            out |= sg.edges
        return frozenset(out)

    def node_count(self) -> int:
        return sum(sg.node_count() for sg in self.subgraphs)

    def cross_edge_count(self) -> int:
        """Edges connecting different sub-graphs; always 0 by construction."""
        count = 0
        for sg in self.subgraphs:
            prefix = sg.model_id + "/"
            for src, dst in sg.edges:
                if not (src.startswith(prefix) and dst.startswith(prefix)):
                    count += 1
        return count


def _mem_estimate(pairs, ct: costmodel.CostTable) -> float:
    profiles = [costmodel.profile_graph(g, w, ct) for g, w in pairs]
    est = costmodel.estimate_memory(
        [_ProfileAdapter(p) for p in profiles], costmodel.FUSED, ct
    )
    return est.peak_mib


class _ProfileAdapter:
    """Gives GraphProfile the manifest-duck shape estimate_memory expects."""

    def __init__(self, profile: costmodel.GraphProfile):
        self.mem_required_mib = profile.mem_required_mib
        self.weight_bytes = profile.weight_bytes
        self.iter_latency_ms = profile.iter_latency_ms


def fuse_models(
    models: list[tuple[ModelGraph, WeightStore]],
    *,
    cost_table: costmodel.CostTable | None = None,
    init_functions=None,
    dag_id: str | None = None,
    validate: bool = True,
) -> FusedDag:
    """Compile a member list into one FusedDag.

    Sub-graph order equals input order; the preamble carries every init
    function at multiplicity 1 regardless of member count. Deterministic
    for identical input.
    """
    if not models:
        raise ValueError("fuse_models requires at least one model")
    ct = cost_table or costmodel.DEFAULT_COST_TABLE
    seen: set[str] = set()
    for graph, weights in models:
        if graph.model_id in seen:
            raise DuplicateModelId(graph.model_id)
        seen.add(graph.model_id)
        if validate:
            report = validate_graph(graph, weights)
            if not report.ok:
                raise ValidationFailed(graph.model_id, report.problems)
    subgraphs = tuple(_build_subgraph(g, w) for g, w in models)
    if dag_id is None:
        dag_id = "dag[" + "+".join(sg.model_id for sg in subgraphs) + "]"
    return FusedDag(
        dag_id=dag_id,
        preamble=build_preamble(len(models), fused=True, function_names=init_functions),
        subgraphs=subgraphs,
        total_mem_estimate_mib=_mem_estimate(models, ct),
        compile_generation=1,
    )


def swap_subgraph(
    dag: FusedDag,
    out_id: str,
    incoming: tuple[ModelGraph, WeightStore],
    *,
    cost_table: costmodel.CostTable | None = None,
    validate: bool = True,
) -> FusedDag:
    """Recompile one sub-graph in place.

    Every other SubGraph object is reused unchanged (same identity, same
    weight binding); the preamble is untouched and the compile
    generation increments.
    """
    ct = cost_table or costmodel.DEFAULT_COST_TABLE
    graph, weights = incoming
    position = None
    for i, sg in enumerate(dag.subgraphs):
        if sg.model_id == out_id:
            position = i
            break
    if position is None:
        raise UnknownSubgraph(out_id)
    for sg in dag.subgraphs:
        if sg.model_id == graph.model_id and sg.model_id != out_id:
            raise DuplicateModelId(graph.model_id)
    if validate:
        report = validate_graph(graph, weights)
        if not report.ok:
            raise ValidationFailed(graph.model_id, report.problems)
    subgraphs = list(dag.subgraphs)
    subgraphs[position] = _build_subgraph(graph, weights)
    mem = _subgraph_mem_estimate(subgraphs, ct)
    return FusedDag(
        dag_id=dag.dag_id,
        preamble=dag.preamble,
        subgraphs=tuple(subgraphs),
        total_mem_estimate_mib=mem,
        compile_generation=dag.compile_generation + 1,
    )


def _subgraph_mem_estimate(subgraphs, ct: costmodel.CostTable) -> float:
    adapters = []
    for sg in subgraphs:
        profile = costmodel.profile_graph(_as_model_graph(sg), sg.weight_binding, ct)
        adapters.append(_ProfileAdapter(profile))
    return costmodel.estimate_memory(adapters, costmodel.FUSED, ct).peak_mib


def _as_model_graph(sg: SubGraph) -> ModelGraph:
    return ModelGraph(
        model_id=sg.model_id,
        nodes=sg.nodes.values(),
        entry=sg.entry,
        exit=sg.exit,
        input_spec=sg.input_spec,
        output_spec=sg.output_spec,
    )


def subgraph_topo_order(sg: SubGraph) -> list[str]:
    return topo_order(_as_model_graph(sg))


def execute_fused(dag: FusedDag, inputs: dict[str, Tensor]) -> dict[str, Tensor]:
    """Run every sub-graph on its own input; outputs keyed by model id.

    Execution order: preamble (pure bookkeeping), then sub-graphs in
    member order, each internally in topological order. No value crosses
    a sub-graph boundary, so each output is bitwise equal to the solo
    executor's result.
    """
    expected = {sg.model_id for sg in dag.subgraphs}
    for model_id in inputs:
        if model_id not in expected:
            raise UnknownSubgraph(model_id)
    outputs: dict[str, Tensor] = {}
    for sg in dag.subgraphs:
        if sg.model_id not in inputs:
            raise MissingInput(sg.model_id)
        x = inputs[sg.model_id]
        if x.spec.dims != sg.input_spec.dims:
            raise ShapeMismatch(sg.entry, f"input {x.spec.dims} vs declared {sg.input_spec.dims}")
        out = eval_graph(
            sg.nodes, subgraph_topo_order(sg), sg.entry, sg.exit, sg.weight_binding, x.array()
        )
        outputs[sg.model_id] = Tensor.from_array(out)
    return outputs


def dag_to_dict(dag: FusedDag) -> dict:
    return {
        "dag_id": dag.dag_id,
        "compile_generation": dag.compile_generation,
        "total_mem_estimate_mib": dag.total_mem_estimate_mib,
        "preamble": [
            {"function_name": c.function_name, "multiplicity": c.multiplicity}
            for c in dag.preamble.calls
        ],
        "subgraphs": [
            {
                "model_id": sg.model_id,
                "entry": sg.entry,
                "exit": sg.exit,
                "input_spec": list(sg.input_spec.dims),
                "output_spec": list(sg.output_spec.dims),
                "nodes": [
                    {
                        "node_id": node.node_id,
                        "kind": node.kind,
                        "attrs": dict(node.attrs),
                        "weight_refs": dict(node.weight_refs),
                        "inputs": list(node.inputs),
                    }
                    for _, node in sorted(sg.nodes.items())
                ],
            }
            for sg in dag.subgraphs
        ],
    }


def save_dag(dag: FusedDag, path) -> None:
    Path(path).write_text(json.dumps(dag_to_dict(dag), indent=1, sort_keys=True) + "\n")
