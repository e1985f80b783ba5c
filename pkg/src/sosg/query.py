"""State queries as graph traversal.

Single-entity queries look up the most recent state/event of a data type for
one entity. Cross-entity queries walk alternating entity -> bridge -> entity
paths with breadth-first search; bridge data types prune the frontier before
expansion, and results are all shortest paths in deterministic order.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable

from .graph import EdgeKind, StateGraph, Vertex, VertexCategory
from .records import SosgError

# Entity key names the convenience queries assume; override per deployment.
DEFAULT_KEYS = {"vm": "uuid", "host": "host", "subnet": "subnet", "cephfile": "object"}


class EntityResolutionError(SosgError):
    """Selector matched zero or several entities; candidates are attached."""

    def __init__(self, message: str, candidates: list[tuple[str, str]] | None = None):
        self.candidates = candidates or []
        if self.candidates:
            listed = ", ".join(f"{k}={v}" for k, v in self.candidates)
            message = f"{message} (candidates: {listed})"
        super().__init__(message)


Selector = "int | str | tuple[str, str]"


def resolve_entity(graph: StateGraph, selector, dtype: str | None = None) -> int:
    """Resolve a selector (vertex id, bare value, or (key, value) pair) to a
    unique entity vertex id."""
    if isinstance(selector, int):
        if not graph.has_vertex(selector) or graph.vertex(selector).category is not VertexCategory.ENTITY:
            raise EntityResolutionError(f"no entity vertex with id {selector}")
        return selector
    if isinstance(selector, tuple):
        dtype, value = selector
    else:
        value = selector
    matches = graph.find_entities(value, dtype)
    if not matches:
        raise EntityResolutionError(f"no entity matches {value!r}" + (f" under key {dtype!r}" if dtype else ""))
    if len(matches) > 1:
        cands = [(graph.vertex(m).dtype, graph.vertex(m).value) for m in matches]
        raise EntityResolutionError(f"selector {value!r} is ambiguous", candidates=cands)
    return matches[0]


def latest_state(
    graph: StateGraph,
    entity,
    dtype: str,
    at_time: int | None = None,
    entity_key: str | None = None,
) -> Vertex | None:
    """Most recent state/event of `dtype` associated with the entity, with
    timestamp <= at_time (default: the graph's maximum time). None if the
    entity has no such states."""
    eid = resolve_entity(graph, entity, entity_key)
    series = graph.timeline(eid, dtype)
    if not series:
        return None
    if at_time is None:
        at_time = graph.max_timestamp()
    idx = bisect.bisect_right(series, (at_time, float("inf"))) - 1
    if idx < 0:
        return None
    return graph.vertex(series[idx][1])


@dataclass
class PathQuery:
    """Alternating-path search between entities.

    Exactly one of `target` (entity selector) or `target_dtype` (find all
    entities of that identifier key) must be given. `type_constraints[i]`
    restricts the bridge data type at hop i; `at_time` hides bridges newer
    than the instant. Depth counts entity hops.
    """

    source: object
    target: object = None
    target_dtype: str | None = None
    max_depth: int = 8
    type_constraints: list | None = None
    at_time: int | None = None
    max_results: int = 100

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if (self.target is None) == (self.target_dtype is None):
            raise ValueError("exactly one of target / target_dtype is required")


@dataclass
class PathResult:
    paths: list[list[int]] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def _constraint_allows(constraints, hop: int, dtype: str) -> bool:
    if not constraints or hop >= len(constraints):
        return True
    allowed = constraints[hop]
    if allowed is None:
        return True
    if isinstance(allowed, str):
        return dtype == allowed
    return dtype in allowed


def find_paths(graph: StateGraph, query: PathQuery) -> PathResult:
    """All shortest alternating paths from the source entity.

    With an entity target, shortest means the minimal entity-hop count to
    that entity. With a dtype target, each matching entity contributes its
    own shortest paths (so deeper matches are not shadowed by nearer ones).
    Paths are entity-simple, ordered lexicographically by vertex id
    sequence, and capped at max_results per target entity.
    """
    src = resolve_entity(graph, query.source)
    target_id: int | None = None
    if query.target is not None:
        target_id = resolve_entity(graph, query.target)

    dist: dict[int, int] = {src: 0}
    preds: dict[int, set[tuple[int, int]]] = {src: set()}
    frontier = [src]
    depth = 0
    bridges_seen = 0
    while frontier and depth < query.max_depth:
        if target_id is not None and target_id in dist:
            break
        nxt: list[int] = []
        for eid in frontier:
            for edge in graph.out_edges(eid):
                if edge.kind is not EdgeKind.SPATIAL:
                    continue
                bridge = graph.vertex(edge.dst)
                if query.at_time is not None and bridge.timestamp > query.at_time:
                    continue
                if not _constraint_allows(query.type_constraints, depth, bridge.dtype):
                    continue
                bridges_seen += 1
                for back in graph.in_edges(bridge.id):
                    if back.kind is not EdgeKind.SPATIAL:
                        continue
                    other = back.src
                    if other == eid:
                        continue
                    known = dist.get(other)
                    if known is None:
                        dist[other] = depth + 1
                        preds[other] = {(bridge.id, eid)}
                        nxt.append(other)
                    elif known == depth + 1:
                        preds[other].add((bridge.id, eid))
        frontier = sorted(set(nxt))
        depth += 1

    if target_id is not None:
        targets = [target_id] if target_id in dist else []
    else:
        targets = sorted(
            eid
            for eid in dist
            if graph.vertex(eid).dtype == query.target_dtype and eid != src
        )

    paths: list[list[int]] = []
    truncated = False
    for tid in targets:
        enumerated = _enumerate_paths(preds, src, tid, cap=max(query.max_results * 10, 1000))
        enumerated.sort()
        if len(enumerated) > query.max_results:
            truncated = True
            enumerated = enumerated[: query.max_results]
        paths.extend(enumerated)

    return PathResult(
        paths=paths,
        stats={
            "visited_entities": len(dist),
            "bridges_examined": bridges_seen,
            "depth_reached": depth,
            "targets_found": len(targets),
            "truncated": truncated,
        },
    )


def _enumerate_paths(preds: dict[int, set[tuple[int, int]]], src: int, target: int, cap: int) -> list[list[int]]:
    """Backward walk over the shortest-path DAG. Deterministic; cuts off at
    `cap` partial results to bound pathological fan-out."""
    out: list[list[int]] = []

    def walk(eid: int, suffix: list[int]):
        if len(out) >= cap:
            return
        if eid == src:
            out.append([src] + suffix)
            return
        for bridge, prev in sorted(preds[eid]):
            walk(prev, [bridge, eid] + suffix)

    walk(target, [])
    return out


def list_related(
    graph: StateGraph,
    entity,
    target_dtype: str,
    max_depth: int = 3,
    at_time: int | None = None,
) -> list[Vertex]:
    """Entities of `target_dtype` reachable from the entity within max_depth
    entity hops, sorted by value. The source itself is not listed."""
    result = find_paths(
        graph,
        PathQuery(source=entity, target_dtype=target_dtype, max_depth=max_depth, at_time=at_time, max_results=1),
    )
    seen: dict[int, Vertex] = {}
    for path in result.paths:
        v = graph.vertex(path[-1])
        seen[v.id] = v
    return sorted(seen.values(), key=lambda v: v.value)


def list_cephfiles_for_vm(graph: StateGraph, vm, keys: dict | None = None, max_depth: int = 3) -> list[Vertex]:
    """Ceph block files a VM's storage resolves to (vm -> image -> object
    prefix -> block file)."""
    keys = {**DEFAULT_KEYS, **(keys or {})}
    return list_related(graph, _with_key(vm, keys["vm"]), keys["cephfile"], max_depth)


def list_vms_in_subnet(graph: StateGraph, subnet, keys: dict | None = None) -> list[Vertex]:
    """VMs with a port in the subnet (one bridge hop away)."""
    keys = {**DEFAULT_KEYS, **(keys or {})}
    return list_related(graph, _with_key(subnet, keys["subnet"]), keys["vm"], max_depth=1)


def affected_vms_by_host(graph: StateGraph, host, keys: dict | None = None, max_depth: int = 3) -> list[Vertex]:
    """VMs that depend on a physical host: placed on it, or using storage
    blocks it holds (reached across the Ceph states)."""
    keys = {**DEFAULT_KEYS, **(keys or {})}
    return list_related(graph, _with_key(host, keys["host"]), keys["vm"], max_depth)


def _with_key(selector, key: str):
    if isinstance(selector, (int, tuple)):
        return selector
    return (key, selector)


def path_to_dicts(graph: StateGraph, path: list[int]) -> list[dict]:
    out = []
    for vid in path:
        v = graph.vertex(vid)
        item = {"id": v.id, "cat": v.category.value, "dtype": v.dtype}
        if v.category is VertexCategory.ENTITY:
            item["value"] = v.value
        else:
            item["ts"] = v.timestamp
            item["props"] = v.props
        out.append(item)
    return out


def result_to_dict(graph: StateGraph, result: PathResult) -> dict:
    return {"paths": [path_to_dicts(graph, p) for p in result.paths], "stats": result.stats}
