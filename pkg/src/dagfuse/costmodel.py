"""Calibrated analytic cost model of the edge-GPU loading pipeline.

All numbers are pure arithmetic over a CostTable, never wall-clock, so
results are machine independent. The table stores, per initialization
function, the measured totals for a calibration episode of
``calibration_models`` members in both execution modes:

  * unfused (independent graphs in one process): per-function cost
    scales linearly in member count through the origin;
  * fused (one compiled DAG): per-function cost follows the line fitted
    through "one member costs the same in both modes" and the
    calibration total, clamped at zero.

The data-transfer function (``cudaMemcpyAsync``) scales with total
weight bytes relative to ``calibration_weight_bytes`` instead of member
count, which realizes the mode-specific effective copy throughput.

Memory: peak = context + weights + activations + framework overhead;
fused DAGs deduplicate per-model overhead at
``dedup_saving_mib_per_extra_model`` per member beyond the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import CostTableError
from .graph_ir import (
    MIB,
    ModelGraph,
    WeightStore,
    infer_shapes,
    mib_ceil,
    node_flops,
    peak_activation_bytes,
    topo_order,
)

GIB = 1024 ** 3

UNFUSED = "unfused"
FUSED = "fused"
MODES = (UNFUSED, FUSED)

# Initialization functions the table prices. The first six are the
# device/driver queries, then allocation, transfer, and the per-model
# schema fetch; a fused DAG calls each once instead of once per member.
DEVICE_FUNCTIONS = (
    "cuDeviceGet",
    "cuDeviceGetCount",
    "cuDriverGetVersion",
    "cudaGetDevice",
    "cudaGetDeviceCount",
    "cudaSetDevice",
    "cudaStreamIsCapturing",
)
MALLOC_FUNCTION = "cudaMalloc"
MEMCPY_FUNCTION = "cudaMemcpyAsync"
SCHEMA_FUNCTION = "get_schema"
INIT_FUNCTIONS = DEVICE_FUNCTIONS + (MALLOC_FUNCTION, MEMCPY_FUNCTION, SCHEMA_FUNCTION)

# Default per-function totals (ms) for a 7-member calibration episode.
DEFAULT_INIT_COSTS_MS = {
    "cuDeviceGet": (0.00074, 0.0005),
    "cuDeviceGetCount": (0.000921, 0.000701),
    "cuDriverGetVersion": (0.000251, 0.0001),
    "cudaGetDevice": (4.12, 4.01),
    "cudaGetDeviceCount": (0.00044, 0.00039),
    "cudaMalloc": (443.8, 40.1),
    "cudaMemcpyAsync": (2964.0, 2759.0),
    "cudaSetDevice": (2.54, 2.50),
    "cudaStreamIsCapturing": (75.4, 72.36),
    "get_schema": (2295.0, 26.890661),
}

# Default calibration transfer volume: chosen so the effective fused
# throughput exceeds unfused by 1.44 GiB/s at the default memcpy totals.
DEFAULT_CALIBRATION_WEIGHT_BYTES = round(1.44 / (1 / 2.759 - 1 / 2.964) * (1024 ** 3))

DEFAULT_OP_LATENCY_MS_PER_MFLOP = {
    "dense": 0.05,
    "conv2d": 0.05,
    "relu": 0.01,
    "maxpool2d": 0.02,
    "batchnorm_inference": 0.02,
    "residual_add": 0.01,
    "global_avg_pool": 0.01,
    "flatten": 0.001,
    "concat": 0.005,
}


@dataclass(frozen=True)
class FunctionCost:
    """Calibration totals (ms) for one function, both modes."""

    unfused_total_ms: float
    fused_total_ms: float

    def decrease_pct(self) -> float:
        if self.unfused_total_ms == 0:
            return 0.0
        return (self.unfused_total_ms - self.fused_total_ms) / self.unfused_total_ms * 100.0


@dataclass(frozen=True)
class CostTable:
    init_call_costs: dict[str, FunctionCost] = field(
        default_factory=lambda: {
            name: FunctionCost(*DEFAULT_INIT_COSTS_MS[name]) for name in INIT_FUNCTIONS
        }
    )
    calibration_models: int = 7
    calibration_weight_bytes: int = DEFAULT_CALIBRATION_WEIGHT_BYTES
    context_base_mib: float = 500.0
    per_model_overhead_mib: float = 34.0
    dedup_saving_mib_per_extra_model: float = 34.0
    teardown_ms: float = 0.0
    op_latency_ms_per_mflop: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_OP_LATENCY_MS_PER_MFLOP)
    )

    def __post_init__(self):
        for name, cost in self.init_call_costs.items():
            if cost.unfused_total_ms < 0 or cost.fused_total_ms < 0:
                raise CostTableError(f"{name}: negative duration")
            if cost.fused_total_ms > cost.unfused_total_ms:
                raise CostTableError(f"{name}: fused total exceeds unfused total")
        if self.calibration_models < 2:
            raise CostTableError("calibration_models must be >= 2")
        if self.calibration_weight_bytes <= 0:
            raise CostTableError("calibration_weight_bytes must be positive")
        for value, label in (
            (self.context_base_mib, "context_base_mib"),
            (self.per_model_overhead_mib, "per_model_overhead_mib"),
            (self.dedup_saving_mib_per_extra_model, "dedup_saving_mib_per_extra_model"),
            (self.teardown_ms, "teardown_ms"),
        ):
            if value < 0:
                raise CostTableError(f"{label} must be >= 0")

    @property
    def function_names(self) -> tuple[str, ...]:
        return tuple(self.init_call_costs)

    def one_member_cost_ms(self, name: str) -> float:
        """Cost of one member in either mode (no dedup possible at n=1)."""
        return self.init_call_costs[name].unfused_total_ms / self.calibration_models

    def function_cost_ms(self, name: str, members: int, mode: str) -> float:
        """Per-function cost for a member-count-scaled episode."""
        cost = self.init_call_costs[name]
        cal = self.calibration_models
        if mode == UNFUSED:
            if members == cal:
                return cost.unfused_total_ms
            return cost.unfused_total_ms * members / cal
        if members == cal:
            return cost.fused_total_ms
        single = self.one_member_cost_ms(name)
        if members == 1:
            return single
        slope = (cost.fused_total_ms - single) / (cal - 1)
        return max(single + slope * (members - 1), 0.0)

    def marginal_fused_cost_ms(self, name: str) -> float:
        """Per-member slope of the fused cost line, clamped at zero."""
        cost = self.init_call_costs[name]
        slope = (cost.fused_total_ms - self.one_member_cost_ms(name)) / (self.calibration_models - 1)
        return max(slope, 0.0)

    def memcpy_ms(self, weight_bytes: int, mode: str) -> float:
        total = self.init_call_costs[MEMCPY_FUNCTION]
        base = total.unfused_total_ms if mode == UNFUSED else total.fused_total_ms
        return base * (weight_bytes / self.calibration_weight_bytes)

    @property
    def memcpy_throughput_gib_s(self) -> dict[str, float]:
        """Effective transfer throughput implied by the calibration."""
        vol_gib = self.calibration_weight_bytes / GIB
        cost = self.init_call_costs[MEMCPY_FUNCTION]
        return {
            UNFUSED: vol_gib / (cost.unfused_total_ms / 1000.0),
            FUSED: vol_gib / (cost.fused_total_ms / 1000.0),
        }

    def op_latency_ms(self, kind: str, flops: int) -> float:
        return self.op_latency_ms_per_mflop.get(kind, 0.01) * (flops / 1e6)


DEFAULT_COST_TABLE = CostTable()


@dataclass(frozen=True)
class Phase:
    name: str
    duration_ms: float


@dataclass(frozen=True)
class LoadTimeline:
    """Loading pipeline decomposition: init, malloc, memcpy, iterate, teardown."""

    phases: tuple[Phase, ...]
    function_times_ms: dict[str, float]
    call_counts: dict[str, int]

    @property
    def total_ms(self) -> float:
        return sum(p.duration_ms for p in self.phases)

    def phase_ms(self, name: str) -> float:
        return sum(p.duration_ms for p in self.phases if p.name == name)


@dataclass(frozen=True)
class MemoryEstimate:
    context_mib: float
    weights_mib: float
    activations_mib: float
    overhead_mib: float

    @property
    def peak_mib(self) -> float:
        return self.context_mib + self.weights_mib + self.activations_mib + self.overhead_mib


@dataclass(frozen=True)
class RunReport:
    timeline: LoadTimeline
    iterations: int
    iteration_ms: float
    memory: MemoryEstimate

    @property
    def total_ms(self) -> float:
        return self.timeline.total_ms + self.iteration_ms

    @property
    def peak_mib(self) -> float:
        return self.memory.peak_mib


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def estimate_memory(manifests: Sequence, mode: str, ct: CostTable) -> MemoryEstimate:
    """Peak device memory for a member set in one mode.

    Empty set -> all-zero estimate (no context allocated). Context is
    charged once in both modes (single process either way); fused mode
    deduplicates per-model framework overhead, floored at one model's
    overhead.
    """
    _check_mode(mode)
    n = len(manifests)
    if n == 0:
        return MemoryEstimate(0.0, 0.0, 0.0, 0.0)
    weights_mib = sum(m.weight_bytes for m in manifests) / MIB
    wa_total = sum(max(m.mem_required_mib - ct.per_model_overhead_mib, 0.0) for m in manifests)
    activations_mib = max(wa_total - weights_mib, 0.0)
    if mode == UNFUSED:
        overhead = n * ct.per_model_overhead_mib
    else:
        overhead = max(
            n * ct.per_model_overhead_mib - (n - 1) * ct.dedup_saving_mib_per_extra_model,
            ct.per_model_overhead_mib,
        )
    return MemoryEstimate(ct.context_base_mib, weights_mib, activations_mib, overhead)


def simulate_load(manifests: Sequence, mode: str, ct: CostTable) -> LoadTimeline:
    """Loading timeline for compiling-and-loading a member set."""
    _check_mode(mode)
    if not manifests:
        raise ValueError("simulate_load requires at least one member")
    n = len(manifests)
    weight_bytes = sum(m.weight_bytes for m in manifests)

    function_times: dict[str, float] = {}
    for name in ct.function_names:
        if name == MEMCPY_FUNCTION:
            function_times[name] = ct.memcpy_ms(weight_bytes, mode)
        else:
            function_times[name] = ct.function_cost_ms(name, n, mode)

    init_ms = sum(
        function_times[name]
        for name in ct.function_names
        if name not in (MALLOC_FUNCTION, MEMCPY_FUNCTION)
    )
    phases = (
        Phase("init", init_ms),
        Phase("malloc", function_times.get(MALLOC_FUNCTION, 0.0)),
        Phase("memcpy", function_times.get(MEMCPY_FUNCTION, 0.0)),
        Phase("iterate", 0.0),
        Phase("teardown", ct.teardown_ms),
    )
    call_counts = {name: (n if mode == UNFUSED else 1) for name in ct.function_names}
    return LoadTimeline(phases, function_times, call_counts)


def simulate_swap(incoming, mode: str, ct: CostTable) -> LoadTimeline:
    """Timeline for swapping one member into an already-loaded set.

    Unfused: the incoming model pays a full single-model initialization
    plus its weight transfer. Fused: the recompiled sub-graph reuses the
    DAG's preamble and pays only the marginal per-member cost plus its
    transfer at fused throughput.
    """
    _check_mode(mode)
    function_times: dict[str, float] = {}
    for name in ct.function_names:
        if name == MEMCPY_FUNCTION:
            function_times[name] = ct.memcpy_ms(incoming.weight_bytes, mode)
        elif mode == UNFUSED:
            function_times[name] = ct.one_member_cost_ms(name)
        else:
            function_times[name] = ct.marginal_fused_cost_ms(name)
    init_ms = sum(
        function_times[name]
        for name in ct.function_names
        if name not in (MALLOC_FUNCTION, MEMCPY_FUNCTION)
    )
    phases = (
        Phase("init", init_ms),
        Phase("malloc", function_times.get(MALLOC_FUNCTION, 0.0)),
        Phase("memcpy", function_times.get(MEMCPY_FUNCTION, 0.0)),
        Phase("iterate", 0.0),
        Phase("teardown", ct.teardown_ms),
    )
    call_counts = {name: 1 for name in ct.function_names}
    return LoadTimeline(phases, function_times, call_counts)


def simulate_run(manifests: Sequence, iterations: int, mode: str, ct: CostTable) -> RunReport:
    """Load timeline + iterations x sum of member iteration latencies."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    load = simulate_load(manifests, mode, ct)
    iter_ms = iterations * sum(m.iter_latency_ms for m in manifests)
    return RunReport(load, iterations, iter_ms, estimate_memory(manifests, mode, ct))


@dataclass(frozen=True)
class GraphProfile:
    mem_required_mib: int
    iter_latency_ms: float
    weight_bytes: int
    peak_activation_bytes: int


def profile_graph(graph: ModelGraph, weights: WeightStore, ct: CostTable) -> GraphProfile:
    """Analytic (machine-independent) memory/latency profile of one model."""
    shapes = infer_shapes(graph)
    weight_bytes = weights.byte_size
    act_bytes = peak_activation_bytes(graph, shapes)
    mem = mib_ceil(weight_bytes + act_bytes) + int(math.ceil(ct.per_model_overhead_mib))
    latency = 0.0
    for nid in topo_order(graph):
        node = graph.nodes[nid]
        input_dims = (
            [graph.input_spec.dims]
            if nid == graph.entry
            else [shapes[src].dims for src in node.inputs]
        )
        latency += ct.op_latency_ms(node.kind, node_flops(node, input_dims, shapes[nid].dims))
    return GraphProfile(mem, latency, weight_bytes, act_bytes)


# --- cost table files -------------------------------------------------
#
# Flat "key = value" text, '#' comments. Durations are suffixed with
# their unit (_ns/_ms/_s) and converted to ms on load.

_UNIT_SCALE_TO_MS = {"ns": 1e-6, "us": 1e-3, "ms": 1.0, "s": 1000.0}


def _parse_scalar(raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise CostTableError(f"bad numeric value {raw!r}") from exc


def load_cost_table(path) -> CostTable:
    """Parse a cost table file, starting from built-in defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CostTableError(f"{path}: {exc}") from exc

    scalars: dict[str, float] = {}
    init_costs: dict[str, dict[str, float]] = {}
    op_latency = dict(DEFAULT_OP_LATENCY_MS_PER_MFLOP)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CostTableError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key.startswith("init."):
            parts = key.split(".")
            if len(parts) != 3:
                raise CostTableError(f"{path}:{lineno}: expected init.<function>.<mode>_<unit>")
            _, fn_name, tail = parts
            mode, _, unit = tail.rpartition("_")
            if mode not in MODES or unit not in _UNIT_SCALE_TO_MS:
                raise CostTableError(f"{path}:{lineno}: bad init entry {key!r}")
            init_costs.setdefault(fn_name, {})[mode] = _parse_scalar(raw) * _UNIT_SCALE_TO_MS[unit]
        elif key.startswith("op_latency_ms_per_mflop."):
            op_latency[key.split(".", 1)[1]] = _parse_scalar(raw)
        else:
            scalars[key] = _parse_scalar(raw)

    costs = {name: FunctionCost(*DEFAULT_INIT_COSTS_MS[name]) for name in INIT_FUNCTIONS}
    for fn_name, entry in init_costs.items():
        if UNFUSED not in entry or FUSED not in entry:
            raise CostTableError(f"{path}: init.{fn_name} needs both modes")
        costs[fn_name] = FunctionCost(entry[UNFUSED], entry[FUSED])

    kwargs = {}
    for key, attr, cast in (
        ("calibration_models", "calibration_models", int),
        ("calibration_weight_bytes", "calibration_weight_bytes", int),
        ("context_base_mib", "context_base_mib", float),
        ("per_model_overhead_mib", "per_model_overhead_mib", float),
        ("dedup_saving_mib_per_extra_model", "dedup_saving_mib_per_extra_model", float),
        ("teardown_ms", "teardown_ms", float),
    ):
        if key in scalars:
            kwargs[attr] = cast(scalars.pop(key))
    if scalars:
        raise CostTableError(f"{path}: unknown keys {sorted(scalars)}")
    return CostTable(init_call_costs=costs, op_latency_ms_per_mflop=op_latency, **kwargs)


def _format_duration(ms: float) -> tuple[float, str]:
    if ms < 1e-2:
        return ms * 1e6, "ns"
    if ms >= 1000.0:
        return ms / 1000.0, "s"
    return ms, "ms"


def dump_cost_table(ct: CostTable, path) -> None:
    lines = [
        "# Device cost calibration: per-function initialization totals for a",
        f"# {ct.calibration_models}-model episode, memory constants, and transfer volume.",
        "",
        f"calibration_models = {ct.calibration_models}",
        f"calibration_weight_bytes = {ct.calibration_weight_bytes}",
        f"context_base_mib = {ct.context_base_mib!r}",
        f"per_model_overhead_mib = {ct.per_model_overhead_mib!r}",
        f"dedup_saving_mib_per_extra_model = {ct.dedup_saving_mib_per_extra_model!r}",
        f"teardown_ms = {ct.teardown_ms!r}",
        "",
    ]
    for name in ct.function_names:
        cost = ct.init_call_costs[name]
        for mode, ms in ((UNFUSED, cost.unfused_total_ms), (FUSED, cost.fused_total_ms)):
            value, unit = _format_duration(ms)
            lines.append(f"init.{name}.{mode}_{unit} = {value!r}")
    lines.append("")
    for kind, value in sorted(ct.op_latency_ms_per_mflop.items()):
        lines.append(f"op_latency_ms_per_mflop.{kind} = {value!r}")
    Path(path).write_text("\n".join(lines) + "\n")
