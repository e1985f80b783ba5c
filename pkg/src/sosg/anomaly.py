"""Distance-based detection of misbehaving VMs.

Each VM entity gets a dependency subgraph via a multi-root BFS with
collaborative pruning: all roots expand in synchronized rounds, and a vertex
reached by more than one root (in the same round, or already owned from an
earlier round) becomes a terminal "shared" vertex for the later arrivals.
That keeps one VM's subgraph from swallowing another VM's resources through
hubs like a subnet or a physical host, while still recording the boundary.

Subgraphs are compared structurally: every induced edge contributes one
triplet code (source BFS depth, source signature, edge kind, destination
signature), the codes form a multiset, and two multisets are compared with
the generalized Jaccard distance 1 - sum(min)/sum(max). A VM with fewer
than k peers within radius r is flagged.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

from .graph import StateGraph, Vertex, VertexCategory
from .records import SosgError


class DetectionError(SosgError):
    pass


@dataclass
class VmSubgraph:
    """BFS ball around one root with shared vertices kept as terminal
    boundary markers. `depths` maps owned members to their BFS depth;
    `shared` maps boundary vertices to the round this root reached them."""

    root: int
    depths: dict[int, int]
    shared: dict[int, int]
    edge_indexes: list[int]

    @property
    def members(self) -> set[int]:
        return set(self.depths)

    def vertex_ids(self) -> set[int]:
        return set(self.depths) | set(self.shared)

    def depth_of(self, vid: int) -> int:
        return self.depths[vid] if vid in self.depths else self.shared[vid]


def extract_subgraphs(
    graph: StateGraph,
    roots: list[int],
    max_bfs_depth: int = 6,
) -> dict[int, VmSubgraph]:
    """Collaborative-pruning BFS from every root at once.

    Rounds are synchronized: every root finishes depth d before any root
    expands d+1, so ownership is a function of the graph alone, not of
    scheduling. Within a round, a vertex proposed by exactly one new root is
    owned by it; proposed by several, it is shared for all of them; a vertex
    owned since an earlier round is shared for any later arrival. Shared
    vertices are never expanded.
    """
    if max_bfs_depth < 1:
        raise DetectionError("max_bfs_depth must be >= 1")
    roots = list(roots)
    for r in roots:
        if not graph.has_vertex(r):
            raise DetectionError(f"root vertex {r} not found")
    if len(set(roots)) != len(roots):
        raise DetectionError("duplicate roots")

    owner: dict[int, int] = {r: r for r in roots}
    globally_shared: set[int] = set()
    depths: dict[int, dict[int, int]] = {r: {r: 0} for r in roots}
    shared: dict[int, dict[int, int]] = {r: {} for r in roots}
    visited: dict[int, set[int]] = {r: {r} for r in roots}
    frontier: dict[int, list[int]] = {r: [r] for r in roots}

    for depth in range(1, max_bfs_depth + 1):
        proposals: dict[int, list[int]] = {}
        for r in sorted(roots):
            mine: set[int] = set()
            for vid in frontier[r]:
                for nb in graph.neighbor_ids(vid):
                    if nb not in visited[r]:
                        mine.add(nb)
            for nb in mine:
                proposals.setdefault(nb, []).append(r)
        next_frontier: dict[int, list[int]] = {r: [] for r in roots}
        for vid in sorted(proposals):
            proposers = proposals[vid]
            if vid in globally_shared or vid in owner:
                for r in proposers:
                    if owner.get(vid) == r:
                        continue
                    shared[r][vid] = depth
                    visited[r].add(vid)
            elif len(proposers) == 1:
                r = proposers[0]
                owner[vid] = r
                depths[r][vid] = depth
                visited[r].add(vid)
                next_frontier[r].append(vid)
            else:
                globally_shared.add(vid)
                for r in proposers:
                    shared[r][vid] = depth
                    visited[r].add(vid)
        frontier = next_frontier
        if not any(frontier.values()):
            break

    out: dict[int, VmSubgraph] = {}
    for r in roots:
        inside = visited[r]
        member_set = set(depths[r])
        edge_idx: set[int] = set()
        for vid in member_set:
            for idx in graph.incident_indexes(vid):
                e = graph.edge_at(idx)
                if e.src in inside and e.dst in inside:
                    edge_idx.add(idx)
        out[r] = VmSubgraph(root=r, depths=depths[r], shared=shared[r], edge_indexes=sorted(edge_idx))
    return out


@dataclass(frozen=True, order=True)
class TripletCode:
    """Structural feature unit: one edge with endpoint signatures and the
    BFS depth of its source endpoint."""

    depth: int
    src_sig: tuple[str, str]
    kind: str
    dst_sig: tuple[str, str]

    def to_dict(self) -> dict:
        return {"depth": self.depth, "src": list(self.src_sig), "kind": self.kind, "dst": list(self.dst_sig)}


def _signature(v: Vertex, collapse_events: bool) -> tuple[str, str]:
    if collapse_events and v.category is VertexCategory.EVENT:
        return ("event", "*")
    return (v.category.value, v.dtype)


def featurize(graph: StateGraph, sub: VmSubgraph, collapse_events: bool = True) -> Counter:
    """Triplet multiset of a subgraph: one count per induced edge.

    Event vertices collapse to a single signature by default so that log
    volume does not drown the structural signal.
    """
    counts: Counter = Counter()
    for idx in sub.edge_indexes:
        e = graph.edge_at(idx)
        code = TripletCode(
            depth=sub.depth_of(e.src),
            src_sig=_signature(graph.vertex(e.src), collapse_events),
            kind=e.kind.value,
            dst_sig=_signature(graph.vertex(e.dst), collapse_events),
        )
        counts[code] += 1
    return counts


def generalized_jaccard(a: Counter, b: Counter) -> float:
    """1 - sum(min)/sum(max) over the union of codes; 0 for two empty
    multisets. Symmetric, zero iff equal, satisfies the triangle
    inequality."""
    total_a = sum(a.values())
    total_b = sum(b.values())
    smaller, larger = (a, b) if len(a) <= len(b) else (b, a)
    s_min = sum(min(c, larger[code]) for code, c in smaller.items() if code in larger)
    s_max = total_a + total_b - s_min
    if s_max == 0:
        return 0.0
    return (s_max - s_min) / s_max


@dataclass
class DetectionParams:
    """k and r default to scale-free values derived from the population:
    r is the given percentile of the pairwise-distance distribution and
    k = max(2, ceil(0.02 * n))."""

    k: int | None = None
    r: float | None = None
    max_bfs_depth: int = 6
    r_percentile: float = 10.0
    collapse_event_dtypes: bool = True
    top_nearest: int = 5

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.r is not None and not (0.0 <= self.r <= 1.0):
            raise ValueError("r must lie in [0, 1]")
        if self.max_bfs_depth < 1:
            raise ValueError("max_bfs_depth must be >= 1")


@dataclass
class AnomalyReport:
    k: int
    r: float
    r_source: str
    population: int
    rows: list[dict]
    flagged: list[int]
    evidence: dict[int, dict] = field(default_factory=dict)

    def to_dict(self, graph: StateGraph | None = None) -> dict:
        def label(root: int):
            if graph is not None and graph.has_vertex(root):
                return graph.vertex(root).value
            return root

        rows = []
        for row in self.rows:
            rows.append(
                {
                    "vm": label(row["root"]),
                    "root_id": row["root"],
                    "neighbor_count": row["neighbor_count"],
                    "flagged": row["flagged"],
                    "nearest": [{"vm": label(o), "distance": d} for o, d in row["nearest"]],
                }
            )
        out = {
            "params": {"k": self.k, "r": self.r, "r_source": self.r_source},
            "population": self.population,
            "vms": rows,
            "flagged": sorted(label(r) for r in self.flagged),
        }
        if self.evidence:
            out["evidence"] = {str(label(root)): ev for root, ev in sorted(self.evidence.items())}
        return out


def percentile_radius(distances: list[float], percentile: float) -> float:
    """Deterministic nearest-rank style percentile of the pairwise
    distances (index floor(p/100 * (n-1)) of the sorted list)."""
    if not distances:
        return 0.0
    ordered = sorted(distances)
    idx = int((percentile / 100.0) * (len(ordered) - 1))
    return ordered[idx]


def detect(
    features: dict[int, Counter],
    params: DetectionParams | None = None,
    subgraphs: dict[int, VmSubgraph] | None = None,
    graph: StateGraph | None = None,
) -> AnomalyReport:
    """Flag every root with fewer than k peers within distance r.

    The result is exactly the O(n^2) pairwise definition; no indexing
    shortcut changes the flag set. Evidence subgraphs and the most
    over/under-represented triplet codes are attached when `subgraphs`
    (and `graph`, for serialization) are provided.
    """
    params = params or DetectionParams()
    roots = sorted(features)
    n = len(roots)
    if n < 2:
        raise DetectionError("detection needs at least two subgraph features")

    dist: dict[tuple[int, int], float] = {}
    for a, b in combinations(roots, 2):
        dist[(a, b)] = generalized_jaccard(features[a], features[b])

    if params.r is not None:
        r, r_source = params.r, "explicit"
    else:
        r = percentile_radius(list(dist.values()), params.r_percentile)
        r_source = f"percentile{params.r_percentile:g}"
    k = params.k if params.k is not None else max(2, math.ceil(0.02 * n))

    rows: list[dict] = []
    flagged: list[int] = []
    for root in roots:
        others = [(dist[(min(root, o), max(root, o))], o) for o in roots if o != root]
        neighbor_count = sum(1 for d, _ in others if d <= r)
        others.sort()
        is_flagged = neighbor_count < k
        if is_flagged:
            flagged.append(root)
        rows.append(
            {
                "root": root,
                "neighbor_count": neighbor_count,
                "flagged": is_flagged,
                "nearest": [(o, d) for d, o in others[: params.top_nearest]],
            }
        )

    report = AnomalyReport(k=k, r=r, r_source=r_source, population=n, rows=rows, flagged=flagged)
    if subgraphs is not None:
        for root in flagged:
            report.evidence[root] = _evidence(features, root, subgraphs.get(root), graph)
    return report


def _evidence(features: dict[int, Counter], root: int, sub: VmSubgraph | None, graph: StateGraph | None) -> dict:
    """Triplet codes most over/under-represented versus the population
    median, plus the subgraph itself."""
    all_codes = sorted({code for f in features.values() for code in f})
    mine = features[root]
    divergence = []
    for code in all_codes:
        median = statistics.median(f.get(code, 0) for f in features.values())
        delta = mine.get(code, 0) - median
        if delta:
            divergence.append((abs(delta), code, median))
    divergence.sort(key=lambda t: (-t[0], t[1]))
    top = [
        {
            "code": code.to_dict(),
            "count": mine.get(code, 0),
            "population_median": median,
            "direction": "over" if mine.get(code, 0) > median else "under",
        }
        for _, code, median in divergence[:8]
    ]
    out: dict = {"triplet_divergence": top}
    if sub is not None:
        out["subgraph"] = subgraph_to_dict(sub, graph)
    return out


def subgraph_to_dict(sub: VmSubgraph, graph: StateGraph | None = None) -> dict:
    out = {
        "root": sub.root,
        "members": {str(vid): d for vid, d in sorted(sub.depths.items())},
        "shared": {str(vid): d for vid, d in sorted(sub.shared.items())},
    }
    if graph is not None:
        edges = [graph.edge_at(i) for i in sub.edge_indexes]
        out["edges"] = [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in edges]
        out["vertices"] = {}
        for vid in sorted(sub.vertex_ids()):
            v = graph.vertex(vid)
            entry: dict = {"cat": v.category.value, "dtype": v.dtype}
            if v.category is VertexCategory.ENTITY:
                entry["value"] = v.value
            else:
                entry["ts"] = v.timestamp
            out["vertices"][str(vid)] = entry
    return out
