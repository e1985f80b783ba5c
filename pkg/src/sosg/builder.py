"""Four-step state graph construction.

1. Every parsed record becomes a state or event vertex (category decided by
   its data source).
2. Identifier keys are discovered statistically: keys whose values are
   numerous and individually recurring look like identifiers; shapes that
   cannot identify anything (numbers, timestamps, prose) are excluded.
3. Each distinct value of an accepted key becomes an entity vertex, and a
   spatial edge joins every state/event to each entity it contains,
   including whole-token mentions inside free-text `message` properties.
4. Per entity, its associated states/events are chained with temporal edges
   in ascending time order.

Every step is a map or group-by over independent items, so the whole build
can run partitioned with a deterministic merge; serial and parallel builds
produce byte-identical canonical graph files.
"""

from __future__ import annotations

import re
import time
from collections import Counter
from dataclasses import dataclass, field

from .graph import Edge, EdgeKind, StateGraph, Vertex, VertexCategory
from .parallel import chunked, pool_map, worker_count
from .records import IngestConfig, Record, SourceCatalog, ingest_corpus

# Value shape classes, most specific first. A key's shape is the plurality
# class over a deterministic sample of its distinct values.
SHAPE_PATTERNS: tuple[tuple[str, re.Pattern], ...] = (
    ("uuid-like", re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$|^[0-9a-fA-F]{32}$")),
    ("mac-like", re.compile(r"^[0-9a-fA-F]{2}([:-][0-9a-fA-F]{2}){5}$")),
    ("ip-like", re.compile(r"^\d{1,3}(\.\d{1,3}){3}(:\d+)?$|^(?=.*:)[0-9a-fA-F:]{3,39}$")),
    ("timestamp-like", re.compile(r"^\d{4}-\d{2}-\d{2}([T ].*)?$|^\d{2}:\d{2}(:\d{2})?(\.\d+)?$|^1\d{9}(\d{3}){0,2}(\.\d+)?$")),
    ("numeric", re.compile(r"^-?\d+(\.\d+)?([eE][+-]?\d+)?$")),
    ("path-like", re.compile(r"^(/[^/\s]+)+/?$")),
    ("hostname-like", re.compile(r"^[A-Za-z][A-Za-z0-9_.-]*$")),
)

SHAPE_CLASSES = tuple(name for name, _ in SHAPE_PATTERNS) + ("free-text",)

_SHAPE_SAMPLE = 128

# Free text splits on anything outside this alphabet; '-', '_', '.', '/'
# stay inside tokens so ids, paths and object names survive intact.
_TOKEN_RE = re.compile(r"[A-Za-z0-9_./-]+")


def classify_value(value: str) -> str:
    for name, pattern in SHAPE_PATTERNS:
        if pattern.match(value):
            return name
    return "free-text"


def classify_key(values) -> str:
    """Plurality shape over a sample of distinct values (first _SHAPE_SAMPLE
    in sorted order, so the answer does not depend on scan order)."""
    sample = sorted(values)[:_SHAPE_SAMPLE]
    votes = Counter(classify_value(v) for v in sample)
    if not votes:
        return "free-text"
    best = max(votes.values())
    for name in SHAPE_CLASSES:
        if votes.get(name) == best:
            return name
    return "free-text"


def tokenize(text: str) -> list[str]:
    """Whole tokens of free text, with boundary dots/hyphens stripped."""
    out = []
    for tok in _TOKEN_RE.findall(text):
        tok = tok.strip(".-")
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class IdentifierStats:
    key: str
    kind_count: int
    occurrence_count: int
    shape_class: str

    @property
    def mean_repetition(self) -> float:
        return self.occurrence_count / self.kind_count

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "kind_count": self.kind_count,
            "occurrence_count": self.occurrence_count,
            "mean_repetition": round(self.mean_repetition, 6),
            "shape_class": self.shape_class,
        }


@dataclass(frozen=True)
class IdentifierPolicy:
    """Acceptance gate for identifier keys. Manual overrides beat the
    statistics; an exclude beats an include."""

    min_kind: int = 10
    min_mean_repetition: float = 2.0
    excluded_shapes: frozenset[str] = frozenset({"numeric", "timestamp-like", "free-text"})
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()

    def __post_init__(self):
        if self.min_kind <= 0 or self.min_mean_repetition <= 0:
            raise ValueError("policy thresholds must be strictly positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "IdentifierPolicy":
        kwargs = {}
        for key in ("min_kind", "min_mean_repetition"):
            if key in raw:
                kwargs[key] = raw[key]
        if "excluded_shapes" in raw:
            kwargs["excluded_shapes"] = frozenset(raw["excluded_shapes"])
        for key in ("include", "exclude"):
            if key in raw:
                kwargs[key] = tuple(raw[key])
        return cls(**kwargs)

    def decide(self, stats: IdentifierStats) -> str | None:
        """None when accepted, otherwise the rejection reason."""
        if stats.key in self.exclude:
            return "manually excluded"
        if stats.key in self.include:
            return None
        if stats.shape_class in self.excluded_shapes:
            return f"shape {stats.shape_class} excluded"
        if stats.kind_count < self.min_kind:
            return f"kind_count {stats.kind_count} < {self.min_kind}"
        if stats.mean_repetition < self.min_mean_repetition:
            return f"mean_repetition {stats.mean_repetition:.2f} < {self.min_mean_repetition}"
        return None


@dataclass
class BuildReport:
    records_total: int = 0
    per_source: dict = field(default_factory=dict)
    vertices: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)
    accepted: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "records": {"total": self.records_total, "per_source": self.per_source},
            "vertices": self.vertices,
            "edges": self.edges,
            "identifiers": {"accepted": self.accepted, "rejected": self.rejected},
        }
        if include_timings:
            out["timings"] = self.timings
        return out


# -- step 1 ---------------------------------------------------------------


def _vertices_for_records(job: tuple[list[Record], dict[str, str]]) -> list[Vertex]:
    records, categories = job
    out = []
    for rec in records:
        if categories[rec.source] == "event":
            out.append(Vertex.event(rec.source, rec.props, rec.timestamp, rec.origin))
        else:
            out.append(Vertex.state(rec.source, rec.props, rec.timestamp, rec.origin))
    return out


def build_state_event_vertices(
    records: list[Record],
    catalog: SourceCatalog | None = None,
    workers: int | None = None,
) -> StateGraph:
    """Step 1: one state/event vertex per record, props copied verbatim."""
    catalog = catalog or SourceCatalog()
    categories = {name: catalog.category(name) for name in catalog.names()}
    for rec in records:
        catalog.require(rec.source)
    graph = StateGraph()
    n = worker_count(workers)
    jobs = [(chunk, categories) for chunk in chunked(records, n * 4 if n > 1 else 1)]
    for vertices in pool_map(_vertices_for_records, jobs, workers):
        for v in vertices:
            graph.add_vertex(v)
    return graph


# -- step 2 (+ spatial candidates, collected in the same scan) -------------


def _scan_chunk(vertices: list[Vertex]) -> tuple[dict[str, Counter], dict[tuple[str, str], list[int]]]:
    counts: dict[str, Counter] = {}
    incidence: dict[tuple[str, str], list[int]] = {}
    for v in vertices:
        for key, value in v.props.items():
            if not value:
                continue
            counts.setdefault(key, Counter())[value] += 1
            incidence.setdefault((key, value), []).append(v.id)
    return counts, incidence


def _scan_vertices(graph: StateGraph, workers: int | None):
    vertices = [v for v in graph.vertices() if v.category is not VertexCategory.ENTITY]
    n = worker_count(workers)
    results = pool_map(_scan_chunk, chunked(vertices, n * 4 if n > 1 else 1), workers)
    counts: dict[str, Counter] = {}
    incidence: dict[tuple[str, str], list[int]] = {}
    for part_counts, part_incidence in results:
        for key, counter in part_counts.items():
            counts.setdefault(key, Counter()).update(counter)
        for pair, vids in part_incidence.items():
            incidence.setdefault(pair, []).extend(vids)
    return counts, incidence


def _stats_from_counts(counts: dict[str, Counter]) -> list[IdentifierStats]:
    return [
        IdentifierStats(key, len(counter), sum(counter.values()), classify_key(counter.keys()))
        for key, counter in sorted(counts.items())
    ]


def compute_identifier_stats(graph: StateGraph, workers: int | None = None) -> list[IdentifierStats]:
    counts, _ = _scan_vertices(graph, workers)
    return _stats_from_counts(counts)


def discover_identifiers(
    graph: StateGraph,
    policy: IdentifierPolicy | None = None,
    workers: int | None = None,
) -> list[IdentifierStats]:
    """Step 2: keys accepted as identifiers, with their statistics."""
    policy = policy or IdentifierPolicy()
    return [s for s in compute_identifier_stats(graph, workers) if policy.decide(s) is None]


# -- step 3 ---------------------------------------------------------------


def _message_matches(job: tuple[list[tuple[int, str]], set[str]]) -> list[tuple[int, str]]:
    messages, values = job
    out = []
    for vid, text in messages:
        hits = {tok for tok in tokenize(text) if tok in values}
        for value in sorted(hits):
            out.append((vid, value))
    return out


def materialize_entities_and_spatial_edges(
    graph: StateGraph,
    accepted: list[IdentifierStats],
    workers: int | None = None,
    incidence: dict[tuple[str, str], list[int]] | None = None,
) -> StateGraph:
    """Step 3: entity vertices for every distinct accepted (key, value), one
    spatial edge per (state/event, entity) incidence. The edge remembers the
    contributing property keys (`message` for free-text mentions).

    `incidence` reuses the scan already done for identifier discovery; the
    two steps share one pass over the vertices.
    """
    if incidence is None:
        _, incidence = _scan_vertices(graph, workers)
    accepted_keys = {s.key for s in accepted}

    value_to_keys: dict[str, list[str]] = {}
    entity_ids: dict[tuple[str, str], int] = {}
    for (key, value), _vids in sorted(incidence.items()):
        if key in accepted_keys:
            entity_ids[(key, value)] = graph.add_vertex(Vertex.entity(key, value))
            value_to_keys.setdefault(value, []).append(key)

    # vertex id -> entity id -> contributing property keys
    contribs: dict[int, dict[int, set[str]]] = {}
    for (key, value), vids in sorted(incidence.items()):
        if key not in accepted_keys:
            continue
        eid = entity_ids[(key, value)]
        for vid in vids:
            contribs.setdefault(vid, {}).setdefault(eid, set()).add(key)

    messages = [
        (v.id, v.props["message"])
        for v in graph.vertices()
        if v.category is not VertexCategory.ENTITY and v.props.get("message")
    ]
    value_set = set(value_to_keys)
    n = worker_count(workers)
    jobs = [(chunk, value_set) for chunk in chunked(messages, n * 4 if n > 1 else 1)]
    for matches in pool_map(_message_matches, jobs, workers):
        for vid, value in matches:
            for key in value_to_keys[value]:
                eid = entity_ids[(key, value)]
                contribs.setdefault(vid, {}).setdefault(eid, set()).add("message")

    for vid in sorted(contribs):
        for eid in sorted(contribs[vid]):
            keys = ",".join(sorted(contribs[vid][eid]))
            graph.add_edge(Edge(eid, vid, EdgeKind.SPATIAL, {"keys": keys}))
    return graph


# -- step 4 ---------------------------------------------------------------


def _chain_pairs(series: list[tuple[int, int]]) -> list[tuple[int, int]]:
    ordered = sorted(series)
    return [(a[1], b[1]) for a, b in zip(ordered, ordered[1:])]


def link_temporal(graph: StateGraph, workers: int | None = None) -> StateGraph:
    """Step 4: per entity, chain its associated states/events in ascending
    (timestamp, vertex id) order. Chains from different entities may walk the
    same consecutive pair; the structurally identical edge is added once."""
    assoc: dict[int, list[tuple[int, int]]] = {}
    for edge in graph.edges():
        if edge.kind is EdgeKind.SPATIAL:
            se = graph.vertex(edge.dst)
            assoc.setdefault(edge.src, []).append((se.timestamp, se.id))
    groups = [assoc[eid] for eid in sorted(assoc)]
    n = worker_count(workers)
    pair_lists = pool_map(_chain_pairs, groups, workers) if len(groups) > 64 else [_chain_pairs(g) for g in groups]
    seen: set[tuple[int, int]] = set()
    for pairs in pair_lists:
        for src, dst in pairs:
            if (src, dst) in seen:
                continue
            seen.add((src, dst))
            graph.add_edge(Edge(src, dst, EdgeKind.TEMPORAL))
    return graph


# -- composition ----------------------------------------------------------


def build(
    records: list[Record],
    policy: IdentifierPolicy | None = None,
    catalog: SourceCatalog | None = None,
    workers: int | None = None,
) -> tuple[StateGraph, BuildReport]:
    """Run all four steps over parsed records and seal the result."""
    policy = policy or IdentifierPolicy()
    if workers is None and len(records) < 20_000:
        workers = 1
    report = BuildReport(records_total=len(records))
    t0 = time.perf_counter()
    graph = build_state_event_vertices(records, catalog, workers)
    t1 = time.perf_counter()
    counts, incidence = _scan_vertices(graph, workers)
    accepted = []
    for s in _stats_from_counts(counts):
        reason = policy.decide(s)
        if reason is None:
            accepted.append(s)
            report.accepted.append(s.to_dict())
        else:
            report.rejected.append({**s.to_dict(), "reason": reason})
    t2 = time.perf_counter()
    materialize_entities_and_spatial_edges(graph, accepted, workers, incidence=incidence)
    t3 = time.perf_counter()
    link_temporal(graph, workers)
    t4 = time.perf_counter()
    graph.seal()
    report.vertices = graph.counts_by_category()
    report.edges = graph.counts_by_kind()
    report.timings = {
        "parse_vertices_s": round(t1 - t0, 4),
        "discover_identifiers_s": round(t2 - t1, 4),
        "spatial_edges_s": round(t3 - t2, 4),
        "temporal_edges_s": round(t4 - t3, 4),
    }
    return graph, report


def build_from_corpus(
    corpus_dir,
    config: IngestConfig,
    policy: IdentifierPolicy | None = None,
    workers: int | None = None,
) -> tuple[StateGraph, BuildReport]:
    """Ingest a corpus directory and build the graph in one go."""
    t0 = time.perf_counter()
    records, per_source = ingest_corpus(corpus_dir, config, workers)
    t1 = time.perf_counter()
    graph, report = build(records, policy, config.catalog, workers)
    report.per_source = per_source
    report.timings["ingest_s"] = round(t1 - t0, 4)
    return graph, report
