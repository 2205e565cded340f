#!/usr/bin/env python3
"""Generate the shipped calibration file and scenario fixtures.

Builds the toy model zoo (deterministic seeds), writes the default cost
calibration, and solves per-scenario model profiles so each scenario
replays onto its published reference numbers:

  * phase1_scaling: seven cumulative member sets, 100 iterations each;
    memory anchored at 954 MiB (n=1) and 2016/1814 MiB (n=7), total
    times anchored at 4.3/10.57/60.71/65.3(~66)/67.44 s with the
    seven-member fused run exactly 2.88 s quicker.
  * phase2_consecutive: ten five-member cycles, 100 iterations each;
    unfused total exactly 330 s, fused within a whisker of 311 s.
  * phase3_tableV: one resident five-member DAG, five sub-graph swaps
    at 25-iteration boundaries; fused peaks near
    1186/1114/1112/1026/1528/2016 MiB with per-segment time reductions
    inside +-1 pp of 3.41/3.13/4.08/3.36/3.58/3.28 %.

Everything is derived through the package's own cost model, so the
frozen fixtures and the runtime arithmetic can never drift apart. The
script verifies all bands by replaying the written fixtures and fails
loudly otherwise.
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from dagfuse import costmodel, scenario as scenario_mod, toygen  # noqa: E402
from dagfuse.costmodel import FUSED, UNFUSED  # noqa: E402
from dagfuse.model_io import save_graph, save_weights  # noqa: E402

SCENARIO_DIR = ROOT / "scenario"
MODELS_DIR = SCENARIO_DIR / "models"
CALIBRATION_DIR = ROOT / "calibration"
COST_TABLE_PATH = CALIBRATION_DIR / "paper_tableIV.cfg"

BUDGET_MIB = 24_000
MIN_LAT_MS = 0.2

# ---------------------------------------------------------------------
# Reference numbers the fixtures must reproduce.

# Per-function initialization totals for the 7-member calibration
# episode, written verbatim (value, unit) per mode.
TABLE_COSTS = {
    "cuDeviceGet": ((740, "ns"), (500, "ns")),
    "cuDeviceGetCount": ((921, "ns"), (701, "ns")),
    "cuDriverGetVersion": ((251, "ns"), (100, "ns")),
    "cudaGetDevice": ((4.12, "ms"), (4.01, "ms")),
    "cudaGetDeviceCount": ((440, "ns"), (390, "ns")),
    "cudaMalloc": ((443.8, "ms"), (40.1, "ms")),
    "cudaMemcpyAsync": ((2.964, "s"), (2.759, "s")),
    "cudaSetDevice": ((2.54, "ms"), (2.50, "ms")),
    "cudaStreamIsCapturing": ((75.40, "ms"), (72.36, "ms")),
}
UNIT_TO_MS = {"ns": 1e-6, "us": 1e-3, "ms": 1.0, "s": 1000.0}

# Seven-member episode: total fused run is exactly this much quicker.
SEVEN_MODEL_SAVING_MS = 2880.0
SCHEMA_UNFUSED_MS = 2295.0

CONTEXT_MIB = 500.0
OVERHEAD_MIB = 34.0
# Overhead dedup fitted so the 7-member fused peak saves exactly 202 MiB.
DEDUP_MIB = 202.0 / 6.0

PHASE1_ORDER = [
    "vgg16_bn",
    "mobilenet_v3_large",
    "densenet161",
    "efficientnet_v2_large",
    "resnet18",
    "alexnet",
    "squeezenet1_0",
]
# weights+activations MiB per member (mem_required = this + overhead)
PHASE1_WA_MIB = {
    "vgg16_bn": 420,
    "mobilenet_v3_large": 28,
    "densenet161": 164,
    "efficientnet_v2_large": 480,
    "resnet18": 8,
    "alexnet": 170,
    "squeezenet1_0": 8,
}
# Unfused totals (ms) per member count; n=3 and n=6 are derived.
PHASE1_TIME_ANCHORS_MS = {1: 4300.0, 2: 10570.0, 4: 60710.0, 5: 65300.0, 7: 67440.0}
PHASE1_EFF_LAT_MS = 80.0  # free split of the n=3->4 jump
PHASE1_ALEXNET_LAT_MS = 1.0

PHASE1_PEAKS_REF = {
    UNFUSED: [954, 1016, 1266, 1728, 1770, 2014, 2016],
    FUSED: [954, 988, 1102, 1606, 1626, 1812, 1814],
}

PHASE2_CASES = [
    ["vgg16_bn", "resnet18", "densenet161", "mobilenet_v2", "efficientnet_v2_large"],
    ["alexnet", "vgg19", "resnet50", "mobilenet_v3_large", "wide_resnet50_2"],
    ["alexnet", "vgg13_bn", "resnet34", "densenet201", "shufflenet_v2_x1_0"],
    ["vgg11", "vgg19_bn", "resnet34", "resnet152", "shufflenet_v2_x1_0"],
    ["resnet34", "squeezenet1_1", "shufflenet_v2_x0_5", "mobilenet_v2", "wide_resnet101_2"],
    ["vgg19", "resnet18", "resnet50", "mobilenet_v2", "wide_resnet50_2"],
    ["alexnet", "vgg11_bn", "resnet101", "squeezenet1_0", "resnext101_32x8d"],
    ["vgg16", "resnet101", "resnet152", "resnext101_32x8d", "mnasnet1_0"],
    ["alexnet", "vgg11", "resnet34", "wide_resnet50_2", "mnasnet1_0"],
    ["vgg13", "vgg19", "mobilenet_v2", "mobilenet_v3_large", "resnext50_32x4d"],
]
PHASE2_TOTALS_S = {UNFUSED: 330.0, FUSED: 311.0}

PHASE2_WA_MIB = {
    "alexnet": 180, "vgg11": 320, "vgg13": 340, "vgg16": 360, "vgg19": 380,
    "vgg11_bn": 325, "vgg13_bn": 345, "vgg16_bn": 420, "vgg19_bn": 385,
    "resnet18": 60, "resnet34": 90, "resnet50": 110, "resnet101": 170,
    "resnet152": 230, "squeezenet1_0": 10, "squeezenet1_1": 9,
    "densenet121": 40, "densenet161": 164, "densenet169": 60, "densenet201": 80,
    "inception_v3": 100, "googlenet": 30, "shufflenet_v2_x1_0": 12,
    "shufflenet_v2_x0_5": 7, "mobilenet_v2": 18, "mobilenet_v3_large": 28,
    "mobilenet_v3_small": 12, "resnext50_32x4d": 105, "resnext101_32x8d": 340,
    "wide_resnet50_2": 260, "wide_resnet101_2": 480, "mnasnet1_0": 18,
    "mnasnet0_5": 10, "efficientnet_v2_large": 480,
}
PHASE2_LAT_GUESS_MS = {
    "alexnet": 6, "vgg11": 60, "vgg13": 70, "vgg16": 80, "vgg19": 90,
    "vgg11_bn": 62, "vgg13_bn": 72, "vgg16_bn": 35, "vgg19_bn": 92,
    "resnet18": 25, "resnet34": 40, "resnet50": 55, "resnet101": 85,
    "resnet152": 110, "squeezenet1_0": 8, "squeezenet1_1": 7,
    "densenet121": 45, "densenet161": 90, "densenet169": 60, "densenet201": 75,
    "inception_v3": 55, "googlenet": 25, "shufflenet_v2_x1_0": 9,
    "shufflenet_v2_x0_5": 6, "mobilenet_v2": 12, "mobilenet_v3_large": 14,
    "mobilenet_v3_small": 8, "resnext50_32x4d": 60, "resnext101_32x8d": 120,
    "wide_resnet50_2": 95, "wide_resnet101_2": 150, "mnasnet1_0": 12,
    "mnasnet0_5": 8, "efficientnet_v2_large": 140,
}

PHASE3_INITIAL = ["vgg19_bn", "resnet50", "mobilenet_v3_large", "resnext50_32x4d", "mnasnet1_0"]
PHASE3_SWAPS = [
    ("vgg19_bn", "efficientnet_v2_large"),
    ("resnet50", "inception_v3"),
    ("resnext50_32x4d", "squeezenet1_1"),
    ("mobilenet_v3_large", "vgg16"),
    ("mnasnet1_0", "wide_resnet101_2"),
]
PHASE3_SEGMENT_ITERS = 25
PHASE3_WA_MIB = {
    "vgg19_bn": 552, "resnet50": 6, "mobilenet_v3_large": 28,
    "resnext50_32x4d": 61, "mnasnet1_0": 4, "efficientnet_v2_large": 480,
    "inception_v3": 4, "squeezenet1_1": 4, "vgg16": 501, "wide_resnet101_2": 492,
}
PHASE3_FUSED_PEAKS_REF = [1186, 1114, 1112, 1026, 1528, 2016]
PHASE3_REDUCTIONS_PCT = [3.41, 3.13, 4.08, 3.36, 3.58, 3.28]
# Initial segment latency split, most weight on soon-to-leave members.
PHASE3_SHARES = {"vgg19_bn": 1500.0, "resnet50": 550.0, "resnext50_32x4d": 20.0,
                 "mobilenet_v3_large": 18.0, "mnasnet1_0": 10.7}

# ---------------------------------------------------------------------
# Toy zoo: family generator + parameters per model id.

ZOO = {
    "alexnet": ("conv_stack", dict(channels=(5, 7), with_bn=False)),
    "vgg11": ("conv_stack", dict(channels=(4, 4))),
    "vgg13": ("conv_stack", dict(channels=(4, 5))),
    "vgg16": ("conv_stack", dict(channels=(5, 6))),
    "vgg19": ("conv_stack", dict(channels=(5, 7))),
    "vgg11_bn": ("conv_stack", dict(channels=(4, 4), with_bn=True)),
    "vgg13_bn": ("conv_stack", dict(channels=(4, 5), with_bn=True)),
    "vgg16_bn": ("conv_stack", dict(channels=(5, 6), with_bn=True)),
    "vgg19_bn": ("conv_stack", dict(channels=(5, 7), with_bn=True)),
    "resnet18": ("residual_net", dict(channels=3, blocks=1)),
    "resnet34": ("residual_net", dict(channels=3, blocks=2)),
    "resnet50": ("residual_net", dict(channels=4, blocks=2)),
    "resnet101": ("residual_net", dict(channels=4, blocks=3)),
    "resnet152": ("residual_net", dict(channels=5, blocks=3)),
    "squeezenet1_0": ("concat_net", dict(growth=2, blocks=1)),
    "squeezenet1_1": ("concat_net", dict(growth=2, blocks=1)),
    "densenet121": ("concat_net", dict(growth=3, blocks=2)),
    "densenet161": ("concat_net", dict(growth=4, blocks=2)),
    "densenet169": ("concat_net", dict(growth=3, blocks=3)),
    "densenet201": ("concat_net", dict(growth=4, blocks=3)),
    "inception_v3": ("concat_net", dict(growth=3, blocks=2)),
    "googlenet": ("concat_net", dict(growth=2, blocks=2)),
    "shufflenet_v2_x1_0": ("slim_net", dict(channels=4)),
    "shufflenet_v2_x0_5": ("slim_net", dict(channels=3)),
    "mobilenet_v2": ("slim_net", dict(channels=4)),
    "mobilenet_v3_large": ("slim_net", dict(channels=5)),
    "mobilenet_v3_small": ("slim_net", dict(channels=3)),
    "resnext50_32x4d": ("residual_net", dict(channels=4, blocks=2)),
    "resnext101_32x8d": ("residual_net", dict(channels=5, blocks=3)),
    "wide_resnet50_2": ("residual_net", dict(channels=6, blocks=2)),
    "wide_resnet101_2": ("residual_net", dict(channels=6, blocks=3)),
    "mnasnet1_0": ("slim_net", dict(channels=4)),
    "mnasnet0_5": ("slim_net", dict(channels=3)),
    "efficientnet_v2_large": ("slim_net", dict(channels=6)),
}


@dataclass
class StubManifest:
    model_id: str
    mem_required_mib: int
    iter_latency_ms: float
    weight_bytes: int


def build_zoo() -> dict[str, int]:
    """Write toy graph/weights files; returns weight byte size per model."""
    MODELS_DIR.mkdir(parents=True, exist_ok=True)
    weight_bytes: dict[str, int] = {}
    for seed, (model_id, (family, params)) in enumerate(sorted(ZOO.items()), start=101):
        graph, weights = toygen.FAMILIES[family](model_id, seed, **params)
        save_graph(graph, MODELS_DIR / f"{model_id}.graph.json")
        save_weights(weights, MODELS_DIR / f"{model_id}.weights.fiwt")
        weight_bytes[model_id] = weights.byte_size
    return weight_bytes


def write_cost_table(calibration_weight_bytes: int) -> None:
    CALIBRATION_DIR.mkdir(parents=True, exist_ok=True)
    sum_diff_ms = sum(
        unfused[0] * UNIT_TO_MS[unfused[1]] - fused[0] * UNIT_TO_MS[fused[1]]
        for unfused, fused in TABLE_COSTS.values()
    )
    schema_fused_ms = SCHEMA_UNFUSED_MS - (SEVEN_MODEL_SAVING_MS - sum_diff_ms)
    lines = [
        "# Default device cost calibration.",
        "#",
        "# Per-function initialization totals for a 7-model episode in both",
        "# execution modes, the memory constants of the evaluation baseline,",
        "# and the calibration transfer volume for the memcpy scaling rule.",
        "",
        "calibration_models = 7",
        f"calibration_weight_bytes = {calibration_weight_bytes}",
        f"context_base_mib = {CONTEXT_MIB!r}",
        f"per_model_overhead_mib = {OVERHEAD_MIB!r}",
        "# Overhead dedup per extra fused member, fitted to the 7-model",
        "# episode's 202 MiB peak saving.",
        f"dedup_saving_mib_per_extra_model = {DEDUP_MIB!r}",
        "teardown_ms = 0.0",
        "",
    ]
    for name, (unfused, fused) in TABLE_COSTS.items():
        lines.append(f"init.{name}.unfused_{unfused[1]} = {unfused[0]!r}")
        lines.append(f"init.{name}.fused_{fused[1]} = {fused[0]!r}")
    lines += [
        "# Model schema fetch: per-member when initializing independent",
        "# graphs, once per compiled DAG; fused total fitted to the",
        "# seven-member episode's 2.88 s overall saving.",
        f"init.get_schema.unfused_ms = {SCHEMA_UNFUSED_MS!r}",
        f"init.get_schema.fused_ms = {schema_fused_ms!r}",
        "",
    ]
    for kind, value in sorted(costmodel.DEFAULT_OP_LATENCY_MS_PER_MFLOP.items()):
        lines.append(f"op_latency_ms_per_mflop.{kind} = {value!r}")
    COST_TABLE_PATH.write_text("\n".join(lines) + "\n")


def stub(model_id, wa_mib, lat_ms, weight_bytes) -> StubManifest:
    return StubManifest(model_id, int(wa_mib + OVERHEAD_MIB), lat_ms, weight_bytes[model_id])


def solve_phase1(ct: costmodel.CostTable, weight_bytes: dict[str, int]) -> dict[str, float]:
    """Latencies hitting the unfused time anchors for cumulative sets."""
    lats: dict[str, float] = {}

    def load_ms(n: int) -> float:
        members = [
            stub(mid, PHASE1_WA_MIB[mid], 1.0, weight_bytes) for mid in PHASE1_ORDER[:n]
        ]
        return costmodel.simulate_load(members, UNFUSED, ct).total_ms

    cumsum = 0.0
    for n, mid in enumerate(PHASE1_ORDER, start=1):
        if n == 3:
            lat = (PHASE1_TIME_ANCHORS_MS[4] - load_ms(4)) / 100.0 - cumsum - PHASE1_EFF_LAT_MS
        elif n == 4:
            lat = PHASE1_EFF_LAT_MS
        elif n == 6:
            lat = PHASE1_ALEXNET_LAT_MS
        else:
            lat = (PHASE1_TIME_ANCHORS_MS[n] - load_ms(n)) / 100.0 - cumsum
        assert lat > 0, f"phase1 latency for {mid} came out {lat:.3f} ms"
        lats[mid] = lat
        cumsum += lat
    return lats


def solve_phase2(ct: costmodel.CostTable, weight_bytes: dict[str, int]) -> dict[str, float]:
    """Scale guess latencies so the unfused ten-cycle total is exact."""
    loads = 0.0
    for case in PHASE2_CASES:
        members = [stub(mid, PHASE2_WA_MIB[mid], 1.0, weight_bytes) for mid in case]
        loads += costmodel.simulate_load(members, UNFUSED, ct).total_ms
    guess_iter_ms = sum(
        100.0 * PHASE2_LAT_GUESS_MS[mid] for case in PHASE2_CASES for mid in case
    )
    scale = (PHASE2_TOTALS_S[UNFUSED] * 1000.0 - loads) / guess_iter_ms
    assert scale > 0, "phase2 load time exceeds the target total"
    return {mid: PHASE2_LAT_GUESS_MS[mid] * scale for mid in PHASE2_LAT_GUESS_MS}


def solve_phase3(ct: costmodel.CostTable, weight_bytes: dict[str, int]) -> dict[str, float]:
    """Latencies giving per-segment cumulative reductions inside the bands."""

    def manifest(mid, lat=1.0):
        return stub(mid, PHASE3_WA_MIB[mid], lat, weight_bytes)

    initial = [manifest(m) for m in PHASE3_INITIAL]
    load_u = costmodel.simulate_load(initial, UNFUSED, ct).total_ms
    load_f = costmodel.simulate_load(initial, FUSED, ct).total_ms

    savings = [load_u - load_f]
    swap_costs_u = []
    for _, incoming in PHASE3_SWAPS:
        swap_u = costmodel.simulate_swap(manifest(incoming), UNFUSED, ct).total_ms
        swap_f = costmodel.simulate_swap(manifest(incoming), FUSED, ct).total_ms
        swap_costs_u.append(swap_u)
        savings.append(savings[-1] + (swap_u - swap_f))

    lats: dict[str, float] = {}
    total_share = sum(PHASE3_SHARES.values())
    u_prev = savings[0] / (PHASE3_REDUCTIONS_PCT[0] / 100.0)
    seg_sum = (u_prev - load_u) / PHASE3_SEGMENT_ITERS
    assert seg_sum > 0
    for mid in PHASE3_INITIAL:
        lats[mid] = seg_sum * PHASE3_SHARES[mid] / total_share
    u_path = [u_prev]
    for k, (out_mid, in_mid) in enumerate(PHASE3_SWAPS, start=1):
        target_pct = PHASE3_REDUCTIONS_PCT[k]
        ideal = savings[k] / (target_pct / 100.0)
        floor_sum = seg_sum - lats[out_mid] + MIN_LAT_MS
        low = u_prev + swap_costs_u[k - 1] + PHASE3_SEGMENT_ITERS * floor_sum
        high = savings[k] / ((target_pct - 0.9) / 100.0)
        u_k = min(max(ideal, low), high)
        assert low <= high + 1e-9, (
            f"phase3 segment {k + 1} infeasible: low {low / 1000:.2f}s > high {high / 1000:.2f}s"
        )
        new_sum = (u_k - u_prev - swap_costs_u[k - 1]) / PHASE3_SEGMENT_ITERS
        lat_in = new_sum - (seg_sum - lats[out_mid])
        assert lat_in >= MIN_LAT_MS - 1e-9, f"phase3 incoming {in_mid} latency {lat_in:.3f}"
        lats[in_mid] = lat_in
        seg_sum = new_sum
        u_prev = u_k
        u_path.append(u_k)
    return lats


def scenario_models(wa_mib: dict[str, int], lats: dict[str, float], model_ids) -> list[dict]:
    return [
        {
            "model_id": mid,
            "graph": f"models/{mid}.graph.json",
            "weights": f"models/{mid}.weights.fiwt",
            "profile": {
                "mem_required_mib": int(wa_mib[mid] + OVERHEAD_MIB),
                "iter_latency_ms": lats[mid],
            },
        }
        for mid in model_ids
    ]


def write_scenarios(ct, weight_bytes) -> None:
    lats1 = solve_phase1(ct, weight_bytes)
    phase1 = {
        "scenario_id": "phase1_scaling",
        "budget_mib": BUDGET_MIB,
        "quantum_iterations": 100,
        "models": scenario_models(PHASE1_WA_MIB, lats1, PHASE1_ORDER),
        "episodes": [
            {"cycle": n, "models": PHASE1_ORDER[:n], "iterations": 100}
            for n in range(1, len(PHASE1_ORDER) + 1)
        ],
    }
    (SCENARIO_DIR / "phase1_scaling.json").write_text(json.dumps(phase1, indent=1) + "\n")

    lats2 = solve_phase2(ct, weight_bytes)
    phase2 = {
        "scenario_id": "phase2_consecutive",
        "budget_mib": BUDGET_MIB,
        "quantum_iterations": 100,
        "models": scenario_models(PHASE2_WA_MIB, lats2, sorted(PHASE2_WA_MIB)),
        "episodes": [
            {"cycle": i, "models": case, "iterations": 100}
            for i, case in enumerate(PHASE2_CASES, start=1)
        ],
    }
    (SCENARIO_DIR / "phase2_consecutive.json").write_text(json.dumps(phase2, indent=1) + "\n")

    lats3 = solve_phase3(ct, weight_bytes)
    phase3 = {
        "scenario_id": "phase3_tableV",
        "budget_mib": BUDGET_MIB,
        "quantum_iterations": PHASE3_SEGMENT_ITERS,
        "models": scenario_models(PHASE3_WA_MIB, lats3, sorted(PHASE3_WA_MIB)),
        "swap_schedule": {
            "initial_models": PHASE3_INITIAL,
            "segment_iterations": PHASE3_SEGMENT_ITERS,
            "swaps": [
                {
                    "after_iteration": PHASE3_SEGMENT_ITERS * (i + 1),
                    "out": out_mid,
                    "in": in_mid,
                }
                for i, (out_mid, in_mid) in enumerate(PHASE3_SWAPS)
            ],
        },
    }
    (SCENARIO_DIR / "phase3_tableV.json").write_text(json.dumps(phase3, indent=1) + "\n")


def verify() -> None:
    ct = costmodel.load_cost_table(COST_TABLE_PATH)
    failures = []

    def check(label, ok, detail):
        print(f"  {'ok ' if ok else 'FAIL'} {label}: {detail}")
        if not ok:
            failures.append(label)

    def replay(name):
        sc = scenario_mod.load_scenario(SCENARIO_DIR / name)
        with tempfile.TemporaryDirectory() as tmp:
            repo = scenario_mod.build_repository(sc, tmp, ct)
            return scenario_mod.replay(sc, repo, ct)

    print("phase1_scaling:")
    rows = replay("phase1_scaling.json")
    by = {(r.mode, r.cycle): r for r in rows}
    for n in range(1, 8):
        for mode in (UNFUSED, FUSED):
            ref = PHASE1_PEAKS_REF[mode][n - 1]
            got = by[(mode, n)].peak_mem_mib
            check(f"n={n} {mode} peak", abs(got - ref) / ref <= 0.05,
                  f"{got:.1f} vs {ref} ({(got - ref) / ref * 100:+.2f}%)")
    t7u, t7f = by[(UNFUSED, 7)].total_time_s, by[(FUSED, 7)].total_time_s
    check("n=7 times", abs(t7u - 67.44) < 1e-6 and abs(t7f - 64.56) < 1e-6,
          f"{t7u:.3f}/{t7f:.3f} vs 67.44/64.56")
    row7 = by[(FUSED, 7)]
    check("n=7 savings cols", row7.saving_mem_pct == 10.02 and row7.saving_time_pct == 4.27,
          f"{row7.saving_mem_pct}/{row7.saving_time_pct} vs 10.02/4.27")
    for n, ref_s in ((1, 4.3), (2, 10.57), (4, 60.71), (5, 66.0), (6, 65.06)):
        got = by[(UNFUSED, n)].total_time_s
        check(f"n={n} unfused time ~{ref_s}", abs(got - ref_s) / ref_s <= 0.05,
              f"{got:.2f} ({(got - ref_s) / ref_s * 100:+.2f}%)")
    for n, ref_s in ((2, 10.26), (4, 58.2), (5, 64.7), (6, 62.7)):
        got = by[(FUSED, n)].total_time_s
        check(f"n={n} fused time ~{ref_s}", abs(got - ref_s) / ref_s <= 0.05,
              f"{got:.2f} ({(got - ref_s) / ref_s * 100:+.2f}%)")

    print("phase2_consecutive:")
    rows = replay("phase2_consecutive.json")
    for mode in (UNFUSED, FUSED):
        total = sum(r.total_time_s for r in rows if r.mode == mode)
        ref = PHASE2_TOTALS_S[mode]
        check(f"{mode} total", abs(total - ref) / ref <= 0.05,
              f"{total:.2f} vs {ref} ({(total - ref) / ref * 100:+.2f}%)")
    savings = [r.saving_time_pct for r in rows if r.mode == FUSED]
    check("per-cycle savings positive", all(s > 0 for s in savings),
          f"min {min(savings):.2f}%")

    print("phase3_tableV:")
    rows = replay("phase3_tableV.json")
    fused_rows = [r for r in rows if r.mode == FUSED]
    for i, row in enumerate(fused_rows):
        ref = PHASE3_FUSED_PEAKS_REF[i]
        check(f"swap{i + 1} fused peak", abs(row.peak_mem_mib - ref) / ref <= 0.05,
              f"{row.peak_mem_mib:.1f} vs {ref} ({(row.peak_mem_mib - ref) / ref * 100:+.2f}%)")
        ref_pct = PHASE3_REDUCTIONS_PCT[i]
        check(f"swap{i + 1} time reduction", abs(row.saving_time_pct - ref_pct) <= 1.0,
              f"{row.saving_time_pct:.2f}% vs {ref_pct}% (dev {row.saving_time_pct - ref_pct:+.2f} pp)")

    if failures:
        raise SystemExit(f"fixture verification failed: {failures}")
    print("all fixture checks passed")


def main() -> None:
    if MODELS_DIR.exists():
        shutil.rmtree(MODELS_DIR)
    weight_bytes = build_zoo()
    calibration_bytes = sum(weight_bytes[mid] for mid in PHASE1_ORDER)
    write_cost_table(calibration_bytes)
    ct = costmodel.load_cost_table(COST_TABLE_PATH)
    write_scenarios(ct, weight_bytes)
    verify()


if __name__ == "__main__":
    main()
