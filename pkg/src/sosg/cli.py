"""Command line surface: gen, build, query, detect.

Machine-readable JSON is the default output; `--format table` prints a
human summary and `--format dot` a Graphviz description. Exit codes are
stable: 0 ok, 2 input, 3 config, 4 query resolution, 5 anomalies found with
--fail-on-anomaly, 10 internal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import anomaly as anomaly_mod
from . import graph as graph_mod
from . import query as query_mod
from . import render, synth
from .builder import IdentifierPolicy, build_from_corpus
from .records import ConfigError, IngestError, IngestConfig, SosgError, parse_timestamp

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_RESOLVE = 4
EXIT_ANOMALY = 5
EXIT_INTERNAL = 10


def _p(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen(args) -> int:
    if args.spec:
        spec = synth.FleetSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = synth.FleetSpec()
    for attr, flag in (("n_vms", "vms"), ("n_hosts", "hosts"), ("n_subnets", "subnets")):
        val = getattr(args, flag)
        if val is not None:
            setattr(spec, attr, val)
    if args.hours is not None:
        spec.duration_hours = args.hours
    if args.total_bytes is not None:
        spec.total_bytes = args.total_bytes

    out = Path(args.out)
    gt = synth.generate(spec, args.seed, out)
    next_target = 0
    for fault_arg in args.fault or []:
        kind, _, idx = fault_arg.partition(":")
        target_idx = int(idx) if idx else next_target
        next_target = target_idx + 1
        target = gt.vms[target_idx]["uuid"]
        gt = synth.inject(out, synth.FaultInjection(kind=kind, target_vm=target), seed=args.seed)
    _p({
        "corpus": str(out),
        "vms": len(gt.vms),
        "mix": {k: round(v, 4) for k, v in synth.measured_mix(out).items()},
        "injected": gt.injected,
    })
    return EXIT_OK


def cmd_build(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise IngestError("corpus directory not found", origin=str(corpus))
    config_path = Path(args.config) if args.config else corpus / "ingest.json"
    config = IngestConfig.from_file(config_path)
    policy = IdentifierPolicy()
    if args.policy:
        policy = IdentifierPolicy.from_dict(json.loads(Path(args.policy).read_text()))
    out = Path(args.graph)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise IngestError("graph directory exists; pass --force to overwrite", origin=str(out))

    graph, report = build_from_corpus(corpus, config, policy, workers=args.workers)
    for step, secs in report.timings.items():
        print(f"{step}: {secs}s", file=sys.stderr)
    graph_mod.save(graph, out)
    (out / "build_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _p(report.to_dict())
    return EXIT_OK


def _load_graph(args) -> graph_mod.StateGraph:
    return graph_mod.load(Path(args.graph))


def _selector(value: str | None):
    if value is None:
        return None
    if "=" in value:
        key, _, val = value.partition("=")
        return (key, val)
    return value


def cmd_query(args) -> int:
    graph = _load_graph(args)
    at_time = parse_timestamp(args.at) if args.at else None
    keys = {}
    if args.vm_key:
        keys["vm"] = args.vm_key

    if args.what == "latest":
        vertex = query_mod.latest_state(graph, _selector(args.entity), args.dtype, at_time)
        if args.format == "table":
            if vertex is None:
                print("no state found")
            else:
                print(f"{args.dtype} @ {vertex.timestamp}")
                for k, v in vertex.props.items():
                    print(f"  {k} = {v}")
        else:
            _p({"entity": args.entity, "dtype": args.dtype,
                "state": None if vertex is None else query_mod.path_to_dicts(graph, [vertex.id])[0]})
        return EXIT_OK

    if args.what == "path":
        q = query_mod.PathQuery(
            source=_selector(getattr(args, "from")),
            target=_selector(args.to),
            max_depth=args.max_depth,
            at_time=at_time,
            max_results=args.limit,
        )
        result = query_mod.find_paths(graph, q)
        _print_paths(graph, result, args.format)
        return EXIT_OK

    if args.what == "related":
        entities = query_mod.list_related(graph, _selector(args.entity), args.target, args.max_depth, at_time)
        _print_entities(entities, args.format)
        return EXIT_OK

    if args.what == "affected-vms":
        entities = query_mod.affected_vms_by_host(graph, args.host, keys, max_depth=args.max_depth)
        _print_entities(entities, args.format)
        return EXIT_OK

    if args.what == "cephfiles":
        entities = query_mod.list_cephfiles_for_vm(graph, args.vm, keys, max_depth=args.max_depth)
        _print_entities(entities, args.format)
        return EXIT_OK

    if args.what == "vms-in-subnet":
        entities = query_mod.list_vms_in_subnet(graph, args.subnet, keys)
        _print_entities(entities, args.format)
        return EXIT_OK

    raise ConfigError(f"unknown query kind {args.what!r}")


def _print_paths(graph, result, fmt: str) -> None:
    if fmt == "dot":
        print(render.paths_to_dot(graph, result), end="")
    elif fmt == "table":
        for i, path in enumerate(result.paths):
            hops = []
            for vid in path:
                v = graph.vertex(vid)
                hops.append(v.value if v.category.value == "entity" else f"[{v.dtype}]")
            print(f"{i}: " + " -> ".join(hops))
        print(f"({len(result.paths)} paths, stats {result.stats})")
    else:
        _p(query_mod.result_to_dict(graph, result))


def _print_entities(entities, fmt: str) -> None:
    if fmt == "table":
        for v in entities:
            print(f"{v.dtype}\t{v.value}")
        print(f"({len(entities)} entities)")
    else:
        _p({"entities": [{"dtype": v.dtype, "value": v.value, "id": v.id} for v in entities]})


def cmd_detect(args) -> int:
    graph = _load_graph(args)
    roots = graph.entities_by_dtype(args.vm_key)
    if len(roots) < 2:
        raise query_mod.EntityResolutionError(
            f"need at least 2 entities of key {args.vm_key!r} as detection roots, found {len(roots)}"
        )
    params = anomaly_mod.DetectionParams(k=args.k, r=args.r, max_bfs_depth=args.max_depth)
    subgraphs = anomaly_mod.extract_subgraphs(graph, roots, params.max_bfs_depth)
    features = {root: anomaly_mod.featurize(graph, sub, params.collapse_event_dtypes)
                for root, sub in subgraphs.items()}
    report = anomaly_mod.detect(features, params, subgraphs=subgraphs, graph=graph)

    if args.format == "dot":
        text = render.report_to_dot(graph, report, subgraphs)
    elif args.format == "table":
        lines = [f"population={report.population} k={report.k} r={report.r:.6f} ({report.r_source})"]
        for row in sorted(report.rows, key=lambda r: r["neighbor_count"]):
            mark = "FLAG" if row["flagged"] else "ok"
            lines.append(f"{mark}\t{graph.vertex(row['root']).value}\tneighbors={row['neighbor_count']}")
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(report.to_dict(graph), indent=2, sort_keys=True) + "\n"

    if args.out:
        Path(args.out).write_text(text)
        print(f"report written to {args.out}", file=sys.stderr)
    else:
        print(text, end="")
    if args.fail_on_anomaly and report.flagged:
        return EXIT_ANOMALY
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosg", description="Operation state graph toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic operations corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--spec", help="FleetSpec overrides as a JSON file")
    gen.add_argument("--vms", type=int)
    gen.add_argument("--hosts", type=int)
    gen.add_argument("--subnets", type=int)
    gen.add_argument("--hours", type=float)
    gen.add_argument("--total-bytes", type=int, dest="total_bytes")
    gen.add_argument("--fault", action="append", metavar="KIND[:VM_INDEX]",
                     help=f"inject a fault after generating ({', '.join(synth.FAULT_KINDS)})")
    gen.set_defaults(func=cmd_gen)

    bld = sub.add_parser("build", help="ingest a corpus and build the graph")
    bld.add_argument("--corpus", required=True)
    bld.add_argument("--graph", required=True)
    bld.add_argument("--config", help="ingest config (default: <corpus>/ingest.json)")
    bld.add_argument("--policy", help="identifier policy overrides as a JSON file")
    bld.add_argument("--force", action="store_true")
    bld.add_argument("--workers", type=int)
    bld.set_defaults(func=cmd_build)

    qry = sub.add_parser("query", help="state queries over a built graph")
    qry.add_argument("what", choices=["latest", "path", "related", "affected-vms", "cephfiles", "vms-in-subnet"])
    qry.add_argument("--graph", required=True)
    qry.add_argument("--entity", help="entity selector (value or key=value)")
    qry.add_argument("--dtype", help="data source for latest-state lookup")
    qry.add_argument("--from", dest="from", help="path source entity")
    qry.add_argument("--to", help="path target entity")
    qry.add_argument("--target", help="target entity key for `related`")
    qry.add_argument("--host", help="host value for affected-vms")
    qry.add_argument("--vm", help="vm value for cephfiles")
    qry.add_argument("--subnet", help="subnet value for vms-in-subnet")
    qry.add_argument("--vm-key", dest="vm_key", default=None)
    qry.add_argument("--at", help="query the graph as of this ISO8601 instant")
    qry.add_argument("--max-depth", dest="max_depth", type=int, default=3)
    qry.add_argument("--limit", type=int, default=100)
    qry.add_argument("--format", choices=["json", "dot", "table"], default="json")
    qry.set_defaults(func=cmd_query)

    det = sub.add_parser("detect", help="flag VMs whose dependency subgraphs diverge")
    det.add_argument("--graph", required=True)
    det.add_argument("--k", type=int)
    det.add_argument("--r", type=float)
    det.add_argument("--max-depth", dest="max_depth", type=int, default=6)
    det.add_argument("--vm-key", dest="vm_key", default="uuid")
    det.add_argument("--fail-on-anomaly", dest="fail_on_anomaly", action="store_true")
    det.add_argument("--format", choices=["json", "dot", "table"], default="json")
    det.add_argument("--out", help="write the report here instead of stdout")
    det.set_defaults(func=cmd_detect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except query_mod.EntityResolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOLVE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, graph_mod.GraphFormatError, synth.SynthError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SosgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
