"""Replayable scenarios: registration lists, request streams, swap plans.

A scenario file is JSON listing the models to register (graph/weights
paths plus an optional explicit profile), a device budget and quantum,
and one of three drive forms:

  * ``episodes``: explicit member sets run one cycle each (scaling and
    consecutive-swap studies);
  * ``swap_schedule``: one resident DAG swapping one sub-graph per
    segment boundary, reported cumulatively;
  * ``requests``: an arrival-stamped stream fed through the aggregator
    and batch planner.

Replays are deterministic: identical scenario + cost table produce
byte-identical CSV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import costmodel
from .errors import ScenarioParseError
from .repo import Repository
from .scheduler import (
    InferenceRequest,
    RequestQueue,
    SchedulePlan,
    SwapStep,
    ingest,
    plan_batches,
    run_plan,
    run_swap_schedule,
)

CSV_HEADER = "scenario,cycle,mode,model_count,peak_mem_mib,total_time_s,saving_mem_pct,saving_time_pct"


@dataclass(frozen=True)
class ScenarioModel:
    model_id: str
    graph_path: Path
    weights_path: Path
    profile: tuple[int, float] | None


@dataclass(frozen=True)
class Episode:
    cycle: int
    model_ids: tuple[str, ...]
    iterations: int


@dataclass(frozen=True)
class SwapSchedule:
    initial_models: tuple[str, ...]
    segment_iterations: int
    swaps: tuple[SwapStep, ...]


@dataclass(frozen=True)
class ScenarioRequest:
    model_id: str
    iterations: int
    uptime_class: str
    input_ref: str
    arrival_time: float


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    budget_mib: float
    quantum_iterations: int
    models: tuple[ScenarioModel, ...]
    episodes: tuple[Episode, ...]
    swap_schedule: SwapSchedule | None
    requests: tuple[ScenarioRequest, ...]


def resolve_scenario_path(path) -> Path:
    """Accept both exact paths and extensionless fixture names."""
    path = Path(path)
    if path.exists():
        return path
    with_ext = path.with_name(path.name + ".json")
    if with_ext.exists():
        return with_ext
    raise ScenarioParseError(path, "scenario file not found")


def load_scenario(path) -> Scenario:
    path = resolve_scenario_path(path)
    base = path.parent
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(path, f"cannot parse: {exc}") from exc

    try:
        models = []
        for entry in data["models"]:
            profile = None
            if "profile" in entry:
                profile = (
                    int(entry["profile"]["mem_required_mib"]),
                    float(entry["profile"]["iter_latency_ms"]),
                )
            models.append(
                ScenarioModel(
                    model_id=entry["model_id"],
                    graph_path=base / entry["graph"],
                    weights_path=base / entry["weights"],
                    profile=profile,
                )
            )
        episodes = tuple(
            Episode(int(ep["cycle"]), tuple(ep["models"]), int(ep["iterations"]))
            for ep in data.get("episodes", [])
        )
        swap_schedule = None
        if "swap_schedule" in data:
            sched = data["swap_schedule"]
            swap_schedule = SwapSchedule(
                initial_models=tuple(sched["initial_models"]),
                segment_iterations=int(sched["segment_iterations"]),
                swaps=tuple(
                    SwapStep(int(s["after_iteration"]), s["out"], s["in"])
                    for s in sched["swaps"]
                ),
            )
        requests = tuple(
            ScenarioRequest(
                model_id=rq["model_id"],
                iterations=int(rq["iterations"]),
                uptime_class=rq.get("uptime_class", "short"),
                input_ref=rq.get("input_ref", "zeros"),
                arrival_time=float(rq.get("arrival_time", i)),
            )
            for i, rq in enumerate(data.get("requests", []))
        )
        scenario = Scenario(
            scenario_id=data["scenario_id"],
            budget_mib=float(data.get("budget_mib", 24_000)),
            quantum_iterations=int(data.get("quantum_iterations", 100)),
            models=tuple(models),
            episodes=episodes,
            swap_schedule=swap_schedule,
            requests=requests,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(path, f"bad scenario field: {exc}") from exc
    if not (scenario.episodes or scenario.swap_schedule or scenario.requests):
        # Header-only replay is still valid (empty scenario).
        pass
    return scenario


def build_repository(scenario: Scenario, repo_dir, ct: costmodel.CostTable) -> Repository:
    repo = Repository(repo_dir, ct)
    for model in scenario.models:
        repo.register_files(model.graph_path, model.weights_path, model.profile)
    return repo


@dataclass
class RunReportRow:
    scenario_id: str
    cycle: int
    mode: str
    model_count: int
    peak_mem_mib: float
    total_time_s: float
    saving_mem_pct: float | None = None
    saving_time_pct: float | None = None

    def csv_line(self) -> str:
        mem_saving = "" if self.saving_mem_pct is None else f"{self.saving_mem_pct:.2f}"
        time_saving = "" if self.saving_time_pct is None else f"{self.saving_time_pct:.2f}"
        return (
            f"{self.scenario_id},{self.cycle},{self.mode},{self.model_count},"
            f"{self.peak_mem_mib:.2f},{self.total_time_s:.3f},{mem_saving},{time_saving}"
        )


def saving_pct(unfused: float, fused: float) -> float:
    """(unfused - fused) / unfused * 100, rounded to 2 decimals."""
    if unfused == 0:
        return 0.0
    return round((unfused - fused) / unfused * 100.0, 2)


def _episode_cycles(scenario: Scenario, repo: Repository, ct, mode: str):
    cycles = []
    for episode in scenario.episodes:
        requests = [
            InferenceRequest(
                request_id=f"{scenario.scenario_id}:c{episode.cycle}:{mid}",
                model_id=mid,
                input_ref="zeros",
                iterations_requested=episode.iterations,
                arrival_time=float(i),
            )
            for i, mid in enumerate(episode.model_ids)
        ]
        members = repo.get_many(episode.model_ids)
        estimate = costmodel.estimate_memory(members, mode, ct)
        plan = SchedulePlan(
            batches=(tuple(episode.model_ids),),
            quantum_iterations=episode.iterations,
            device_budget_mib=scenario.budget_mib,
            batch_estimates_mib=(estimate.peak_mib,),
        )
        log = run_plan(plan, requests, repo, ct, mode)
        cycles.append((episode.cycle, len(episode.model_ids), log.peak_mib(), log.total_ms))
    return cycles


def _swap_cycles(scenario: Scenario, repo: Repository, ct, mode: str):
    sched = scenario.swap_schedule
    _, records = run_swap_schedule(
        list(sched.initial_models),
        list(sched.swaps),
        sched.segment_iterations,
        repo,
        ct,
        mode,
        scenario.budget_mib,
    )
    return [
        (rec.segment + 1, len(rec.model_ids), rec.peak_mib, rec.cumulative_ms) for rec in records
    ]


def _request_cycles(scenario: Scenario, repo: Repository, ct, mode: str):
    queue = RequestQueue()
    ordered = sorted(scenario.requests, key=lambda r: r.arrival_time)
    for i, rq in enumerate(ordered):
        ingest(
            queue,
            InferenceRequest(
                request_id=f"{scenario.scenario_id}:r{i}",
                model_id=rq.model_id,
                input_ref=rq.input_ref,
                iterations_requested=rq.iterations,
                uptime_class=rq.uptime_class,
                arrival_time=rq.arrival_time,
            ),
            repo,
        )
    pending = queue.drain()
    classes: dict[str, str] = {}
    for req in pending:
        classes.setdefault(req.model_id, req.uptime_class)
    manifests = repo.get_many(sorted({req.model_id for req in pending}))
    plan = plan_batches(
        manifests,
        scenario.budget_mib,
        ct,
        quantum_iterations=scenario.quantum_iterations,
        uptime_classes=classes,
    )
    log = run_plan(plan, pending, repo, ct, mode)
    return [(c.cycle + 1, len(c.model_ids), c.peak_mib, c.load_ms + c.iterate_ms) for c in log.cycles]


def replay(
    scenario: Scenario,
    repo: Repository,
    ct: costmodel.CostTable,
    modes: tuple[str, ...] = (costmodel.UNFUSED, costmodel.FUSED),
) -> list[RunReportRow]:
    """One RunReportRow per cycle per mode, unfused before fused.

    When both modes run, the fused rows carry the savings columns
    computed against the paired unfused cycle.
    """
    per_mode: dict[str, list[tuple[int, int, float, float]]] = {}
    for mode in modes:
        if scenario.swap_schedule is not None:
            per_mode[mode] = _swap_cycles(scenario, repo, ct, mode)
        elif scenario.episodes:
            per_mode[mode] = _episode_cycles(scenario, repo, ct, mode)
        elif scenario.requests:
            per_mode[mode] = _request_cycles(scenario, repo, ct, mode)
        else:
            per_mode[mode] = []

    rows: list[RunReportRow] = []
    paired = len(modes) == 2
    if paired:
        unfused_cycles = dict((c[0], c) for c in per_mode[costmodel.UNFUSED])

    cycle_ids = []
    for mode in modes:
        for c in per_mode[mode]:
            if c[0] not in cycle_ids:
                cycle_ids.append(c[0])
    by_mode_cycle = {
        (mode, c[0]): c for mode in modes for c in per_mode[mode]
    }
    for cycle_id in cycle_ids:
        for mode in modes:
            entry = by_mode_cycle.get((mode, cycle_id))
            if entry is None:
                continue
            _, count, peak, total_ms = entry
            row = RunReportRow(
                scenario_id=scenario.scenario_id,
                cycle=cycle_id,
                mode=mode,
                model_count=count,
                peak_mem_mib=peak,
                total_time_s=total_ms / 1000.0,
            )
            if paired and mode == costmodel.FUSED:
                base = unfused_cycles.get(cycle_id)
                if base is not None:
                    row.saving_mem_pct = saving_pct(base[2], peak)
                    row.saving_time_pct = saving_pct(base[3] / 1000.0, total_ms / 1000.0)
            rows.append(row)
    return rows


def rows_to_csv(rows: list[RunReportRow]) -> str:
    lines = [CSV_HEADER]
    lines.extend(row.csv_line() for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(rows: list[RunReportRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows))
