"""Operator command line.

Verbs: ``register`` a model into a repository, ``replay`` a scenario to
CSV (+ figures), ``serve`` the line-protocol request loop, ``inspect``
model/DAG structure, and ``profile`` a model analytically.

Exit codes: 0 success, 2 validation/parse failure, 3 duplicate model,
4 I/O or file-format failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from . import costmodel, figures, fuse, model_io, scenario as scenario_mod
from .errors import (
    CostTableError,
    DagfuseError,
    DuplicateModelId,
    ModelFormatError,
    ScenarioParseError,
    ValidationFailed,
    WeightsFormatError,
)
from .repo import Repository
from .service import ServiceLoop

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DUPLICATE = 3
EXIT_IO = 4

DEFAULT_COST_TABLE_PATH = Path("calibration") / "paper_tableIV.cfg"


def _load_cost_table(path_arg) -> costmodel.CostTable:
    if path_arg:
        return costmodel.load_cost_table(path_arg)
    if DEFAULT_COST_TABLE_PATH.exists():
        return costmodel.load_cost_table(DEFAULT_COST_TABLE_PATH)
    return costmodel.DEFAULT_COST_TABLE


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--repo", metavar="DIR", help="model repository directory")
    parser.add_argument("--cost-table", metavar="PATH", help="cost calibration file")
    parser.add_argument("--budget", metavar="MIB", type=float, default=24_000.0,
                        help="device memory budget in MiB (default 24000)")
    parser.add_argument("--quantum", metavar="N", type=int, default=100,
                        help="iterations per scheduling quantum (default 100)")
    parser.add_argument("--mode", choices=("both", "fused", "unfused"), default="both")


def cmd_register(args) -> int:
    if not args.repo:
        print("register: --repo is required", file=sys.stderr)
        return EXIT_VALIDATION
    repo = Repository.open(args.repo, _load_cost_table(args.cost_table))
    profile = None
    if args.mem_required is not None or args.iter_latency is not None:
        if args.mem_required is None or args.iter_latency is None:
            print("register: --mem-required and --iter-latency go together", file=sys.stderr)
            return EXIT_VALIDATION
        profile = (args.mem_required, args.iter_latency)
    manifest = repo.register_files(args.graph, args.weights, profile)
    print(
        f"registered {manifest.model_id}: mem_required={manifest.mem_required_mib} MiB "
        f"iter_latency={manifest.iter_latency_ms:.3f} ms weights={manifest.weight_bytes} B"
    )
    return EXIT_OK


def cmd_profile(args) -> int:
    ct = _load_cost_table(args.cost_table)
    graph = model_io.load_graph(args.graph)
    weights = model_io.load_weights(args.weights)
    profile = costmodel.profile_graph(graph, weights, ct)
    print(
        f"{graph.model_id}: mem_required={profile.mem_required_mib} MiB "
        f"iter_latency={profile.iter_latency_ms:.3f} ms "
        f"weights={profile.weight_bytes} B activations={profile.peak_activation_bytes} B"
    )
    return EXIT_OK


def cmd_replay(args) -> int:
    ct = _load_cost_table(args.cost_table)
    sc = scenario_mod.load_scenario(args.scenario)
    modes = {
        "both": (costmodel.UNFUSED, costmodel.FUSED),
        "fused": (costmodel.FUSED,),
        "unfused": (costmodel.UNFUSED,),
    }[args.mode]

    if args.repo:
        repo = scenario_mod.build_repository(sc, args.repo, ct)
        rows = scenario_mod.replay(sc, repo, ct, modes)
    else:
        with tempfile.TemporaryDirectory(prefix="dagfuse-repo-") as tmp:
            repo = scenario_mod.build_repository(sc, tmp, ct)
            rows = scenario_mod.replay(sc, repo, ct, modes)

    csv_text = scenario_mod.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote {len(rows)} rows to {args.out}")
        if not args.no_figures:
            prefix = Path(args.out).with_suffix("")
            for path in figures.render_report_figures(rows, prefix):
                print(f"wrote {path}")
    else:
        sys.stdout.write(csv_text)

    # Human summary: per-mode totals and savings where paired.
    for mode in modes:
        mode_rows = [r for r in rows if r.mode == mode]
        if not mode_rows:
            continue
        total_s = (
            max(r.total_time_s for r in mode_rows)
            if sc.swap_schedule is not None
            else sum(r.total_time_s for r in mode_rows)
        )
        peak = max(r.peak_mem_mib for r in mode_rows)
        print(f"{sc.scenario_id} [{mode}]: {len(mode_rows)} cycles, "
              f"peak {peak:.0f} MiB, total {total_s:.2f} s")
    return EXIT_OK


def cmd_serve(args) -> int:
    if not args.repo:
        print("serve: --repo is required", file=sys.stderr)
        return EXIT_VALIDATION
    repo = Repository.open(args.repo, _load_cost_table(args.cost_table))
    mode = costmodel.FUSED if args.mode in ("both", "fused") else costmodel.UNFUSED
    out_dir = args.out_dir or (Path(args.repo) / "outputs")
    loop = ServiceLoop(repo, repo.cost_table, args.budget, args.quantum, out_dir, mode)
    if args.stdin:
        loop.serve_stdin(sys.stdin, sys.stdout)
    elif args.socket:
        print(f"serving on {args.socket}", file=sys.stderr)
        try:
            loop.serve_socket(args.socket)
        except KeyboardInterrupt:
            loop.stop()
    else:
        print("serve: need --socket PATH or --stdin", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _inspect_dag_file(data: dict) -> None:
    total_nodes = 0
    cross = 0
    for sg in data["subgraphs"]:
        prefix = sg["model_id"] + "/"
        total_nodes += len(sg["nodes"])
        for node in sg["nodes"]:
            for src in node["inputs"]:
                if not src.startswith(prefix) or not node["node_id"].startswith(prefix):
                    cross += 1
    print(f"dag {data['dag_id']}: generation={data['compile_generation']}")
    print(f"subgraphs={len(data['subgraphs'])} nodes={total_nodes} cross_edges={cross}")
    for sg in data["subgraphs"]:
        print(f"  {sg['model_id']}: nodes={len(sg['nodes'])}")
    mults = sorted({c["multiplicity"] for c in data["preamble"]})
    print(f"preamble: {len(data['preamble'])} functions, multiplicities={mults}")


def _inspect_model_file(data: dict, path: str) -> None:
    graph = model_io.graph_from_dict(data, path)
    kinds: dict[str, int] = {}
    for node in graph.nodes.values():
        kinds[node.kind] = kinds.get(node.kind, 0) + 1
    print(f"model {graph.model_id}: nodes={graph.node_count()} edges={len(graph.edges)}")
    print(f"input={graph.input_spec.dims} output={graph.output_spec.dims}")
    print("kinds: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())))


def cmd_inspect(args) -> int:
    if args.models:
        if not args.repo:
            print("inspect: --models needs --repo", file=sys.stderr)
            return EXIT_VALIDATION
        repo = Repository.open(args.repo, _load_cost_table(args.cost_table))
        ids = [m for m in args.models.split(",") if m]
        dag = fuse.fuse_models([repo.load_pair(mid) for mid in ids])
        print(f"dag {dag.dag_id}: generation={dag.compile_generation}")
        print(
            f"subgraphs={len(dag.subgraphs)} nodes={dag.node_count()} "
            f"cross_edges={dag.cross_edge_count()}"
        )
        for sg in dag.subgraphs:
            print(f"  {sg.model_id}: nodes={sg.node_count()}")
        mults = sorted({c.multiplicity for c in dag.preamble.calls})
        print(f"preamble: {len(dag.preamble.calls)} functions, multiplicities={mults}")
        if args.dump:
            fuse.save_dag(dag, args.dump)
            print(f"wrote {args.dump}")
        return EXIT_OK

    if not args.path:
        print("inspect: need a file path or --models", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        data = json.loads(Path(args.path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"inspect: {args.path}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if "subgraphs" in data:
        _inspect_dag_file(data)
    else:
        _inspect_model_file(data, args.path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagfuse",
        description="Fuse model graphs into one DAG for swap-efficient serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="validate, profile and store a model")
    p.add_argument("graph", help="model description file (JSON)")
    p.add_argument("weights", help="weights file (binary)")
    p.add_argument("--mem-required", type=int, help="explicit memory profile (MiB)")
    p.add_argument("--iter-latency", type=float, help="explicit per-iteration latency (ms)")
    _common_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("replay", help="replay a scenario file to CSV and figures")
    p.add_argument("scenario", help="scenario file (JSON)")
    p.add_argument("--out", metavar="CSV", help="CSV output path (default: stdout)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _common_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="run the line-protocol request loop")
    p.add_argument("--socket", metavar="PATH", help="unix stream socket path")
    p.add_argument("--stdin", action="store_true", help="serve line protocol over stdio")
    p.add_argument("--out-dir", metavar="DIR", help="directory for output tensors")
    _common_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("inspect", help="structural dump of a model or fused DAG")
    p.add_argument("path", nargs="?", help="model or DAG file (JSON)")
    p.add_argument("--models", metavar="IDS", help="comma-separated registered model ids to fuse")
    p.add_argument("--dump", metavar="PATH", help="write the fused DAG to a file")
    _common_flags(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("profile", help="analytic memory/latency profile of a model")
    p.add_argument("graph")
    p.add_argument("weights")
    _common_flags(p)
    p.set_defaults(func=cmd_profile)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DuplicateModelId as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DUPLICATE
    except (WeightsFormatError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationFailed, ScenarioParseError, CostTableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DagfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
