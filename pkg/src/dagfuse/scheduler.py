"""The manager: request aggregation, budget batching, rotation, swaps.

Requests are aggregated FIFO per uptime class. Pending models are packed
into batches with first-fit-decreasing on profiled memory so every batch
fits the device budget when fused; short-uptime batches run before
long-uptime ones. Batches rotate round-robin, each running a fixed
iteration quantum before the next takes the device. A running DAG can
swap one sub-graph at an iteration boundary without touching the rest.

Simulated time comes from the cost model; functional outputs come from
the reference executor, so fused and unfused runs of the same request
stream produce bitwise-identical predictions and differ only in the
simulated time/memory ledger.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass, field

from . import costmodel, executor, fuse
from .errors import (
    BudgetExceeded,
    DagfuseError,
    Unschedulable,
    UnknownSubgraph,
)
from .executor import Tensor
from .repo import ModelManifest, Repository

UPTIME_CLASSES = ("short", "long")
DEFAULT_QUANTUM = 100


@dataclass
class InferenceRequest:
    request_id: str
    model_id: str
    input_ref: object  # Tensor, "zeros", "rand:<seed>", or a file path
    iterations_requested: int
    uptime_class: str = "short"
    arrival_time: float | None = None


@dataclass
class Rejection:
    request: InferenceRequest
    reason: str


class RequestQueue:
    """FIFO per uptime class; rejection is data, not an exception.

    Safe for concurrent producers; arrival stamps are assigned under the
    queue lock so FIFO order and arrival order agree.
    """

    def __init__(self):
        self.pending: dict[str, deque[InferenceRequest]] = {
            cls: deque() for cls in UPTIME_CLASSES
        }
        self.rejected: list[Rejection] = []
        self._lock = threading.Lock()
        self._clock = itertools.count()

    def snapshot(self) -> list[InferenceRequest]:
        with self._lock:
            return [req for cls in UPTIME_CLASSES for req in self.pending[cls]]

    def drain(self) -> list[InferenceRequest]:
        with self._lock:
            out = [req for cls in UPTIME_CLASSES for req in self.pending[cls]]
            for cls in UPTIME_CLASSES:
                self.pending[cls].clear()
            return out

    def __len__(self) -> int:
        with self._lock:
            return sum(len(q) for q in self.pending.values())


def ingest(queue: RequestQueue, req: InferenceRequest, repo: Repository) -> str:
    """Validate and append one request; returns "accepted" or "rejected".

    Invalid requests (unknown model, non-positive iteration count, inline
    input whose shape mismatches the manifest) land in queue.rejected
    with a reason.
    """
    reason = None
    if req.uptime_class not in UPTIME_CLASSES:
        reason = f"unknown uptime class {req.uptime_class!r}"
    elif req.iterations_requested < 1:
        reason = "iterations must be >= 1"
    elif req.model_id not in repo:
        reason = "unknown model"
    elif isinstance(req.input_ref, Tensor):
        declared = repo.input_spec(req.model_id)
        if req.input_ref.spec.dims != declared.dims:
            reason = f"input shape {req.input_ref.spec.dims} != {declared.dims}"
    with queue._lock:
        if req.arrival_time is None:
            req.arrival_time = float(next(queue._clock))
        if reason is not None:
            queue.rejected.append(Rejection(req, reason))
            return "rejected"
        queue.pending[req.uptime_class].append(req)
        return "accepted"


@dataclass(frozen=True)
class SchedulePlan:
    batches: tuple[tuple[str, ...], ...]
    quantum_iterations: int
    device_budget_mib: float
    batch_estimates_mib: tuple[float, ...]
    unschedulable: tuple[tuple[str, str], ...] = ()

    def batch_of(self, model_id: str) -> int | None:
        for i, batch in enumerate(self.batches):
            if model_id in batch:
                return i
        return None


def plan_batches(
    pending_models: list[ModelManifest],
    budget_mib: float,
    ct: costmodel.CostTable,
    *,
    quantum_iterations: int = DEFAULT_QUANTUM,
    uptime_classes: dict[str, str] | None = None,
    mode: str = costmodel.FUSED,
) -> SchedulePlan:
    """Pack models into budget-respecting batches.

    First-fit-decreasing by profiled memory within each uptime class,
    short-class batches ordered before long-class. Models whose solo
    estimate already exceeds the budget are reported unschedulable
    rather than split. Deterministic: ties broken by model id.
    """
    classes = uptime_classes or {}
    unschedulable: list[tuple[str, str]] = []
    per_class: dict[str, list[ModelManifest]] = {cls: [] for cls in UPTIME_CLASSES}
    seen: set[str] = set()
    for manifest in pending_models:
        if manifest.model_id in seen:
            continue
        seen.add(manifest.model_id)
        solo = costmodel.estimate_memory([manifest], mode, ct).peak_mib
        if solo > budget_mib:
            unschedulable.append(
                (manifest.model_id, f"solo estimate {solo:.0f} MiB exceeds budget {budget_mib:.0f}")
            )
            continue
        per_class[classes.get(manifest.model_id, "short")].append(manifest)

    batches: list[list[ModelManifest]] = []
    estimates: list[float] = []
    for cls in UPTIME_CLASSES:
        members = sorted(per_class[cls], key=lambda m: (-m.mem_required_mib, m.model_id))
        class_batches: list[list[ModelManifest]] = []
        class_estimates: list[float] = []
        for manifest in members:
            placed = False
            for i, batch in enumerate(class_batches):
                estimate = costmodel.estimate_memory(batch + [manifest], mode, ct).peak_mib
                if estimate <= budget_mib:
                    batch.append(manifest)
                    class_estimates[i] = estimate
                    placed = True
                    break
            if not placed:
                class_batches.append([manifest])
                class_estimates.append(costmodel.estimate_memory([manifest], mode, ct).peak_mib)
        batches.extend(class_batches)
        estimates.extend(class_estimates)

    return SchedulePlan(
        batches=tuple(tuple(m.model_id for m in batch) for batch in batches),
        quantum_iterations=quantum_iterations,
        device_budget_mib=budget_mib,
        batch_estimates_mib=tuple(estimates),
        unschedulable=tuple(unschedulable),
    )


def require_schedulable(plan: SchedulePlan) -> None:
    if plan.unschedulable:
        model_id, reason = plan.unschedulable[0]
        raise Unschedulable(model_id, reason)


@dataclass
class RunEvent:
    time_ms: float
    kind: str  # compile | load | iterate | swap_subgraph | rotate | complete
    payload: dict


@dataclass
class CycleRecord:
    cycle: int
    batch_index: int
    mode: str
    model_ids: tuple[str, ...]
    peak_mib: float
    load_ms: float
    iterate_ms: float
    swap_ms: float = 0.0

    @property
    def cycle_ms(self) -> float:
        return self.load_ms + self.iterate_ms + self.swap_ms


@dataclass
class RunLog:
    mode: str
    events: list[RunEvent] = field(default_factory=list)
    cycles: list[CycleRecord] = field(default_factory=list)
    completed: dict[str, Tensor] = field(default_factory=dict)
    aborted_batches: list[tuple[int, str]] = field(default_factory=list)
    clock_ms: float = 0.0

    def log(self, kind: str, **payload) -> None:
        self.events.append(RunEvent(self.clock_ms, kind, payload))

    def advance(self, ms: float) -> None:
        self.clock_ms += ms

    @property
    def total_ms(self) -> float:
        return self.clock_ms

    def peak_mib(self) -> float:
        return max((c.peak_mib for c in self.cycles), default=0.0)

    def events_of(self, kind: str) -> list[RunEvent]:
        return [e for e in self.events if e.kind == kind]


def _resolve_input(req: InferenceRequest, manifest_spec, input_source):
    import numpy as np

    if isinstance(req.input_ref, Tensor):
        return req.input_ref
    if input_source is not None:
        resolved = input_source(req)
        if resolved is not None:
            return resolved
    ref = req.input_ref
    if isinstance(ref, str) and ref.startswith("rand:"):
        rng = np.random.default_rng(int(ref.split(":", 1)[1]))
        values = rng.standard_normal(manifest_spec.element_count).astype(np.float32)
        return Tensor(manifest_spec, values)
    return Tensor.zeros(manifest_spec)


class _LoadedState:
    """Which batch currently owns the simulated device."""

    def __init__(self):
        self.batch_index: int | None = None
        self.dag: fuse.FusedDag | None = None


def run_plan(
    plan: SchedulePlan,
    requests: list[InferenceRequest],
    repo: Repository,
    ct: costmodel.CostTable,
    mode: str,
    input_source=None,
) -> RunLog:
    """Round-robin execution of a plan over an aggregated request list.

    Each rotation of a batch compiles it (fused: one DAG; unfused:
    independent graphs), loads it if another batch ran in between, runs
    up to one quantum per pending request, completes exhausted requests,
    then rotates. Compile or validation failures abort only the
    offending batch. A batch that keeps the device between consecutive
    quanta (single-batch plans) does not reload.
    """
    log = RunLog(mode=mode)
    remaining: dict[str, int] = {r.request_id: r.iterations_requested for r in requests}
    by_batch: dict[int, deque[InferenceRequest]] = {}
    for req in requests:
        idx = plan.batch_of(req.model_id)
        if idx is None:
            continue  # model unschedulable or not in this plan
        by_batch.setdefault(idx, deque()).append(req)

    state = _LoadedState()
    cycle = 0
    while any(queue for queue in by_batch.values()):
        progressed = False
        for batch_index, batch in enumerate(plan.batches):
            queue = by_batch.get(batch_index)
            if not queue:
                continue
            progressed = True
            members = repo.get_many(batch)
            manifest_by_id = {m.model_id: m for m in members}

            load_ms = 0.0
            try:
                if mode == costmodel.FUSED:
                    dag = fuse.fuse_models(
                        [repo.load_pair(mid) for mid in batch],
                        cost_table=ct,
                        init_functions=ct.function_names,
                    )
                else:
                    dag = None
                    for mid in batch:
                        repo.load_pair(mid)
                log.log("compile", batch=batch_index, models=list(batch), mode=mode)
            except DagfuseError as exc:
                log.log("compile", batch=batch_index, error=str(exc))
                log.aborted_batches.append((batch_index, str(exc)))
                by_batch[batch_index] = deque()
                continue

            estimate = costmodel.estimate_memory(members, mode, ct)
            if estimate.peak_mib > plan.device_budget_mib:
                log.log("load", batch=batch_index, error="budget exceeded")
                log.aborted_batches.append((batch_index, "budget exceeded"))
                by_batch[batch_index] = deque()
                continue

            if state.batch_index != batch_index:
                timeline = costmodel.simulate_load(members, mode, ct)
                load_ms = timeline.total_ms
                log.log("load", batch=batch_index, duration_ms=load_ms, peak_mib=estimate.peak_mib)
                log.advance(load_ms)
                state.batch_index = batch_index
            state.dag = dag

            # One quantum for every pending request of this batch.
            iterate_ms = 0.0
            finished: list[InferenceRequest] = []
            waves: list[dict[str, InferenceRequest]] = []
            for req in queue:
                for wave in waves:
                    if req.model_id not in wave:
                        wave[req.model_id] = req
                        break
                else:
                    waves.append({req.model_id: req})
            for wave in waves:
                if mode == costmodel.FUSED:
                    inputs = {}
                    for mid in batch:
                        spec = repo.input_spec(mid)
                        if mid in wave:
                            inputs[mid] = _resolve_input(wave[mid], spec, input_source)
                        else:
                            inputs[mid] = Tensor.zeros(spec)
                    outputs = fuse.execute_fused(dag, inputs)
                else:
                    outputs = {}
                    for mid, req in wave.items():
                        graph, weights = repo.load_pair(mid)
                        outputs[mid] = executor.run(
                            graph, weights, _resolve_input(req, repo.input_spec(mid), input_source)
                        )
                for mid, req in wave.items():
                    iters = min(plan.quantum_iterations, remaining[req.request_id])
                    iterate_ms += iters * manifest_by_id[mid].iter_latency_ms
                    remaining[req.request_id] -= iters
                    if remaining[req.request_id] == 0:
                        log.completed[req.request_id] = outputs[mid]
                        finished.append(req)
            log.log("iterate", batch=batch_index, duration_ms=iterate_ms, requests=len(queue))
            log.advance(iterate_ms)
            for req in finished:
                log.log("complete", request_id=req.request_id, model=req.model_id)
                queue.remove(req)

            log.cycles.append(
                CycleRecord(
                    cycle=cycle,
                    batch_index=batch_index,
                    mode=mode,
                    model_ids=tuple(batch),
                    peak_mib=estimate.peak_mib,
                    load_ms=load_ms,
                    iterate_ms=iterate_ms,
                )
            )
            log.log("rotate", batch=batch_index)
            cycle += 1
        if not progressed:
            break
    return log


def request_swap(
    dag: fuse.FusedDag,
    out_model: str,
    incoming_pair,
    incoming_manifest: ModelManifest,
    remaining_manifests: list[ModelManifest],
    budget_mib: float,
    ct: costmodel.CostTable,
) -> tuple[fuse.FusedDag, dict]:
    """Swap one sub-graph at an iteration boundary, enforcing the budget.

    Returns the recompiled DAG and a swap event payload. The DAG is
    unchanged if the post-swap estimate would exceed the budget.
    """
    if out_model not in dag.model_ids():
        raise UnknownSubgraph(out_model)
    post_members = [m for m in remaining_manifests if m.model_id != out_model] + [incoming_manifest]
    estimate = costmodel.estimate_memory(post_members, costmodel.FUSED, ct)
    if estimate.peak_mib > budget_mib:
        raise BudgetExceeded(
            f"swap {out_model} -> {incoming_manifest.model_id} would use "
            f"{estimate.peak_mib:.0f} MiB of {budget_mib:.0f}"
        )
    before = {sg.model_id: id(sg) for sg in dag.subgraphs}
    new_dag = fuse.swap_subgraph(dag, out_model, incoming_pair, cost_table=ct)
    untouched = [
        sg.model_id
        for sg in new_dag.subgraphs
        if sg.model_id in before and id(sg) == before[sg.model_id]
    ]
    payload = {
        "out": out_model,
        "in": incoming_manifest.model_id,
        "untouched": untouched,
        "generation": new_dag.compile_generation,
        "peak_mib": estimate.peak_mib,
    }
    return new_dag, payload


@dataclass
class SwapStep:
    after_iteration: int
    out_model: str
    in_model: str


@dataclass
class SegmentRecord:
    segment: int
    model_ids: tuple[str, ...]
    peak_mib: float
    cumulative_ms: float


def run_swap_schedule(
    initial_models: list[str],
    swaps: list[SwapStep],
    segment_iterations: int,
    repo: Repository,
    ct: costmodel.CostTable,
    mode: str,
    budget_mib: float,
    input_source=None,
) -> tuple[RunLog, list[SegmentRecord]]:
    """Run one resident DAG, swapping one sub-graph per segment boundary.

    The member set runs ``segment_iterations`` per segment; after each
    segment the scheduled swap recompiles exactly one sub-graph (fused)
    or reloads the one incoming model (unfused). Records cumulative
    simulated time per segment, matching how swap experiments report.
    """
    log = RunLog(mode=mode)
    members = list(initial_models)
    manifests = repo.get_many(members)
    fused = mode == costmodel.FUSED

    dag = None
    if fused:
        dag = fuse.fuse_models(
            [repo.load_pair(mid) for mid in members],
            cost_table=ct,
            init_functions=ct.function_names,
        )
    log.log("compile", models=list(members), mode=mode)
    timeline = costmodel.simulate_load(manifests, mode, ct)
    log.log("load", duration_ms=timeline.total_ms)
    log.advance(timeline.total_ms)

    records: list[SegmentRecord] = []
    for segment in range(len(swaps) + 1):
        manifests = repo.get_many(members)
        estimate = costmodel.estimate_memory(manifests, mode, ct)
        if estimate.peak_mib > budget_mib:
            raise BudgetExceeded(
                f"segment {segment} needs {estimate.peak_mib:.0f} MiB of {budget_mib:.0f}"
            )
        # Functional pass: every member produces its prediction once.
        if fused:
            inputs = {}
            for mid in members:
                spec = repo.input_spec(mid)
                req = InferenceRequest(f"seg{segment}:{mid}", mid, "zeros", segment_iterations)
                inputs[mid] = _resolve_input(req, spec, input_source)
            fuse.execute_fused(dag, inputs)
        else:
            for mid in members:
                graph, weights = repo.load_pair(mid)
                req = InferenceRequest(f"seg{segment}:{mid}", mid, "zeros", segment_iterations)
                executor.run(graph, weights, _resolve_input(req, repo.input_spec(mid), input_source))
        iterate_ms = segment_iterations * sum(m.iter_latency_ms for m in manifests)
        log.log("iterate", segment=segment, duration_ms=iterate_ms)
        log.advance(iterate_ms)
        records.append(
            SegmentRecord(
                segment=segment,
                model_ids=tuple(members),
                peak_mib=estimate.peak_mib,
                cumulative_ms=log.clock_ms,
            )
        )

        if segment < len(swaps):
            step = swaps[segment]
            incoming_manifest = repo.lookup(step.in_model)
            if fused:
                dag, payload = request_swap(
                    dag,
                    step.out_model,
                    repo.load_pair(step.in_model),
                    incoming_manifest,
                    manifests,
                    budget_mib,
                    ct,
                )
            else:
                if step.out_model not in members:
                    raise UnknownSubgraph(step.out_model)
                repo.load_pair(step.in_model)
                payload = {"out": step.out_model, "in": step.in_model}
            swap_tl = costmodel.simulate_swap(incoming_manifest, mode, ct)
            payload["duration_ms"] = swap_tl.total_ms
            log.log("swap_subgraph", **payload)
            log.advance(swap_tl.total_ms)
            members = [step.in_model if mid == step.out_model else mid for mid in members]

    return log, records
