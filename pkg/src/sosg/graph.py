"""The state graph: a directed property multigraph of entity, state and event
vertices joined by spatial and temporal edges, with deterministic ids and a
canonical line-delimited on-disk form.

Entity vertices stand for identifier values (a VM UUID, an IP, a hostname);
the identifier and the entity are deliberately the same thing. State and
event vertices are timestamped records; entities never carry a timestamp.
Entity-entity edges do not exist: two entities relate only through a state
or event vertex that mentions both (a "bridge").
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

from .records import SosgError

FORMAT_VERSION = 1

_CAT_CODE = {"entity": "E", "state": "S", "event": "V"}
_CODE_CAT = {v: k for k, v in _CAT_CODE.items()}


class GraphError(SosgError):
    """Invariant violation or misuse of the graph API."""


class GraphFormatError(SosgError):
    """Corrupt or inconsistent graph files; names the failing section."""

    def __init__(self, section: str, message: str, byte_offset: int | None = None):
        loc = f"{section}" if byte_offset is None else f"{section} at byte {byte_offset}"
        super().__init__(f"{loc}: {message}")
        self.section = section
        self.byte_offset = byte_offset


class VertexCategory(str, Enum):
    ENTITY = "entity"
    STATE = "state"
    EVENT = "event"


class EdgeKind(str, Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


def _canonical_props(props: dict[str, str]) -> str:
    return json.dumps(props, sort_keys=True, separators=(",", ":"))


def _stable_id(*parts: str) -> int:
    digest = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << 63) - 1)


@dataclass(frozen=True)
class Vertex:
    """A graph vertex. For entities `dtype` is the identifier key name and
    `props` holds the single value; for states/events `dtype` is the data
    source name and `props` the record's key-value pairs."""

    id: int
    category: VertexCategory
    dtype: str
    props: dict[str, str]
    timestamp: int | None = None

    @staticmethod
    def entity(key: str, value: str) -> "Vertex":
        if not key or not value:
            raise GraphError("entity key and value must be non-empty")
        return Vertex(_stable_id("E", key, value), VertexCategory.ENTITY, key, {"value": value})

    @staticmethod
    def state(dtype: str, props: dict[str, str], timestamp: int, origin: tuple[str, int]) -> "Vertex":
        return Vertex(_record_id("S", dtype, props, timestamp, origin), VertexCategory.STATE, dtype, dict(props), timestamp)

    @staticmethod
    def event(dtype: str, props: dict[str, str], timestamp: int, origin: tuple[str, int]) -> "Vertex":
        return Vertex(_record_id("V", dtype, props, timestamp, origin), VertexCategory.EVENT, dtype, dict(props), timestamp)

    @property
    def value(self) -> str:
        """Identifier value of an entity vertex."""
        if self.category is not VertexCategory.ENTITY:
            raise GraphError("value is only defined for entity vertices")
        return self.props["value"]


def _record_id(code: str, dtype: str, props: dict[str, str], timestamp: int, origin: tuple[str, int]) -> int:
    # Origin disambiguates byte-identical records (e.g. repeated log lines).
    return _stable_id(code, dtype, _canonical_props(props), str(timestamp), origin[0], str(origin[1]))


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind
    props: dict[str, str] = field(default_factory=dict)

    def sort_key(self) -> tuple:
        return (self.src, self.dst, self.kind.value, _canonical_props(self.props))


class StateGraph:
    """Mutable while building; `seal()` freezes it, validates invariants and
    builds the query indexes. Sealed graphs are safe for concurrent readers.
    """

    def __init__(self):
        self._vertices: dict[int, Vertex] = {}
        self._edges: list[Edge] = []
        self._out: dict[int, list[int]] = {}
        self._in: dict[int, list[int]] = {}
        self._entity_index: dict[tuple[str, str], int] = {}
        self._by_value: dict[str, list[int]] = {}
        self._timeline: dict[tuple[int, str], list[tuple[int, int]]] = {}
        self._sealed = False

    # -- construction ----------------------------------------------------

    def add_vertex(self, v: Vertex) -> int:
        """Insert a vertex, returning its id.

        Entity insertion is an upsert keyed on (dtype, value): re-inserting
        the same identifier returns the existing id.
        """
        self._check_mutable()
        self._validate_vertex(v)
        if v.category is VertexCategory.ENTITY:
            key = (v.dtype, v.value)
            existing = self._entity_index.get(key)
            if existing is not None:
                return existing
            self._entity_index[key] = v.id
            self._by_value.setdefault(v.value, []).append(v.id)
        existing = self._vertices.get(v.id)
        if existing is not None:
            if existing != v:
                raise GraphError(f"id collision: {existing} vs {v}")
            return v.id
        self._vertices[v.id] = v
        self._out[v.id] = []
        self._in[v.id] = []
        return v.id

    def add_edge(self, edge: Edge) -> None:
        """Insert an edge; parallel edges between the same pair are allowed.

        Spatial edges are normalized to run entity -> state/event.
        """
        self._check_mutable()
        src = self._vertices.get(edge.src)
        dst = self._vertices.get(edge.dst)
        if src is None or dst is None:
            raise GraphError(f"edge endpoint missing: {edge.src} -> {edge.dst}")
        if edge.kind is EdgeKind.SPATIAL:
            if dst.category is VertexCategory.ENTITY and src.category is not VertexCategory.ENTITY:
                src, dst = dst, src
                edge = Edge(src.id, dst.id, edge.kind, edge.props)
            if src.category is not VertexCategory.ENTITY or dst.category is VertexCategory.ENTITY:
                raise GraphError("spatial edges connect an entity with a state/event vertex")
        else:
            if VertexCategory.ENTITY in (src.category, dst.category):
                raise GraphError("temporal edges connect state/event vertices only")
            if dst.timestamp < src.timestamp:
                raise GraphError("temporal edges must point toward non-decreasing time")
        idx = len(self._edges)
        self._edges.append(edge)
        self._out[edge.src].append(idx)
        self._in[edge.dst].append(idx)

    def seal(self) -> "StateGraph":
        if self._sealed:
            return self
        problems = verify_invariants(self)
        if problems:
            raise GraphError("invariant violations: " + "; ".join(problems))
        for edge in self._edges:
            if edge.kind is EdgeKind.SPATIAL:
                se = self._vertices[edge.dst]
                self._timeline.setdefault((edge.src, se.dtype), []).append((se.timestamp, se.id))
        for series in self._timeline.values():
            series.sort()
        self._sealed = True
        return self

    def _check_mutable(self) -> None:
        if self._sealed:
            raise GraphError("graph is sealed")

    @staticmethod
    def _validate_vertex(v: Vertex) -> None:
        if v.category is VertexCategory.ENTITY:
            if v.timestamp is not None:
                raise GraphError("entity vertices carry no timestamp")
            if set(v.props) != {"value"} or not v.props["value"]:
                raise GraphError("entity vertices hold exactly one identifier value")
        else:
            if v.timestamp is None:
                raise GraphError("state/event vertices require a timestamp")
            if not v.props:
                raise GraphError("state/event vertices require non-empty props")
        if any(not k for k in v.props):
            raise GraphError("property keys must be non-empty")

    # -- access ----------------------------------------------------------

    @property
    def sealed(self) -> bool:
        return self._sealed

    @property
    def vertex_count(self) -> int:
        return len(self._vertices)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def vertex(self, vid: int) -> Vertex:
        return self._vertices[vid]

    def has_vertex(self, vid: int) -> bool:
        return vid in self._vertices

    def vertices(self) -> Iterator[Vertex]:
        return iter(self._vertices.values())

    def edges(self) -> Iterator[Edge]:
        return iter(self._edges)

    def out_edges(self, vid: int) -> list[Edge]:
        return [self._edges[i] for i in self._out.get(vid, ())]

    def in_edges(self, vid: int) -> list[Edge]:
        return [self._edges[i] for i in self._in.get(vid, ())]

    def incident_edges(self, vid: int) -> list[Edge]:
        return self.out_edges(vid) + self.in_edges(vid)

    def incident_indexes(self, vid: int) -> list[int]:
        return list(self._out.get(vid, ())) + list(self._in.get(vid, ()))

    def edge_at(self, idx: int) -> Edge:
        return self._edges[idx]

    def neighbor_ids(self, vid: int) -> list[int]:
        """Distinct adjacent vertex ids, ignoring edge direction."""
        seen = {self._edges[i].dst for i in self._out.get(vid, ())}
        seen.update(self._edges[i].src for i in self._in.get(vid, ()))
        seen.discard(vid)
        return sorted(seen)

    def entity_id(self, dtype: str, value: str) -> int | None:
        return self._entity_index.get((dtype, value))

    def entity_ids(self) -> list[int]:
        return sorted(self._entity_index.values())

    def entities_by_dtype(self, dtype: str) -> list[int]:
        return sorted(vid for (key, _), vid in self._entity_index.items() if key == dtype)

    def find_entities(self, value: str, dtype: str | None = None) -> list[int]:
        if dtype is not None:
            vid = self.entity_id(dtype, value)
            return [vid] if vid is not None else []
        return sorted(self._by_value.get(value, ()))

    def timeline(self, entity_id: int, dtype: str) -> list[tuple[int, int]]:
        """Time-sorted (timestamp, vertex id) pairs of the states/events of
        the given data type associated with the entity. Sealed graphs only."""
        if not self._sealed:
            raise GraphError("timeline index requires a sealed graph")
        return self._timeline.get((entity_id, dtype), [])

    def max_timestamp(self) -> int | None:
        stamps = [v.timestamp for v in self._vertices.values() if v.timestamp is not None]
        return max(stamps) if stamps else None

    def counts_by_category(self) -> dict[str, int]:
        out = {"entity": 0, "state": 0, "event": 0}
        for v in self._vertices.values():
            out[v.category.value] += 1
        return out

    def counts_by_kind(self) -> dict[str, int]:
        out = {"spatial": 0, "temporal": 0}
        for e in self._edges:
            out[e.kind.value] += 1
        return out


def verify_invariants(graph: StateGraph) -> list[str]:
    """Full-scan structural check; returns human-readable violations."""
    problems: list[str] = []
    entity_pairs = set()
    for v in graph.vertices():
        if v.category is VertexCategory.ENTITY:
            if v.timestamp is not None:
                problems.append(f"entity {v.id} has a timestamp")
            pair = (v.dtype, v.props.get("value"))
            if pair in entity_pairs:
                problems.append(f"duplicate entity {pair}")
            entity_pairs.add(pair)
        elif v.timestamp is None:
            problems.append(f"{v.category.value} vertex {v.id} lacks a timestamp")
    for e in graph.edges():
        if not graph.has_vertex(e.src) or not graph.has_vertex(e.dst):
            problems.append(f"dangling edge {e.src}->{e.dst}")
            continue
        src, dst = graph.vertex(e.src), graph.vertex(e.dst)
        src_is_entity = src.category is VertexCategory.ENTITY
        dst_is_entity = dst.category is VertexCategory.ENTITY
        if src_is_entity and dst_is_entity:
            problems.append(f"entity-entity edge {e.src}->{e.dst}")
        if e.kind is EdgeKind.SPATIAL and not (src_is_entity and not dst_is_entity):
            problems.append(f"spatial edge {e.src}->{e.dst} is not entity->state/event")
        if e.kind is EdgeKind.TEMPORAL:
            if src_is_entity or dst_is_entity:
                problems.append(f"temporal edge {e.src}->{e.dst} touches an entity")
            elif dst.timestamp < src.timestamp:
                problems.append(f"temporal edge {e.src}->{e.dst} goes backward in time")
    return problems


# -- persistence ---------------------------------------------------------
#
# A graph directory holds three files:
#   manifest.json  {"version", "vertex_count", "edge_count", "sha256": {...}}
#   vertices.jsonl one per line, sorted by id:
#                  {"id":..,"cat":"E|S|V","dtype":..,"ts":micros|null,"props":{..}}
#   edges.jsonl    sorted by (src, dst, kind, props):
#                  {"src":..,"dst":..,"kind":"spatial|temporal"[,"props":{..}]}
# The byte form is canonical: rebuilding the same graph reproduces it bit
# for bit, so directories can be checksummed and diffed.


def _vertex_line(v: Vertex) -> str:
    ts = "null" if v.timestamp is None else str(v.timestamp)
    props = json.dumps(v.props, separators=(",", ":"), sort_keys=False)
    return f'{{"id":{v.id},"cat":"{_CAT_CODE[v.category.value]}","dtype":{json.dumps(v.dtype)},"ts":{ts},"props":{props}}}'


def _edge_line(e: Edge) -> str:
    base = f'{{"src":{e.src},"dst":{e.dst},"kind":"{e.kind.value}"'
    if e.props:
        base += f',"props":{json.dumps(e.props, separators=(",", ":"), sort_keys=True)}'
    return base + "}"


def save(graph: StateGraph, path: str | Path) -> None:
    """Write the canonical three-file form; refuses graphs that fail the
    invariant scan."""
    problems = verify_invariants(graph)
    if problems:
        raise GraphError("refusing to save: " + "; ".join(problems))
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    vert_bytes = (
        "\n".join(_vertex_line(v) for v in sorted(graph.vertices(), key=lambda v: v.id)) + "\n"
        if graph.vertex_count
        else ""
    ).encode("utf-8")
    edge_bytes = (
        "\n".join(_edge_line(e) for e in sorted(graph.edges(), key=Edge.sort_key)) + "\n"
        if graph.edge_count
        else ""
    ).encode("utf-8")
    (path / "vertices.jsonl").write_bytes(vert_bytes)
    (path / "edges.jsonl").write_bytes(edge_bytes)
    manifest = {
        "version": FORMAT_VERSION,
        "vertex_count": graph.vertex_count,
        "edge_count": graph.edge_count,
        "sha256": {
            "vertices.jsonl": hashlib.sha256(vert_bytes).hexdigest(),
            "edges.jsonl": hashlib.sha256(edge_bytes).hexdigest(),
        },
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load(path: str | Path) -> StateGraph:
    """Read a graph directory back into a sealed StateGraph.

    Checksum or schema mismatches raise GraphFormatError naming the failing
    section and, for line-level damage, the byte offset.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except OSError as exc:
        raise GraphFormatError("manifest.json", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise GraphFormatError("manifest.json", f"not valid JSON: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise GraphFormatError("manifest.json", f"unsupported version {manifest.get('version')!r}")

    payload: dict[str, bytes] = {}
    for section in ("vertices.jsonl", "edges.jsonl"):
        try:
            raw = (path / section).read_bytes()
        except OSError as exc:
            raise GraphFormatError(section, str(exc)) from exc
        digest = hashlib.sha256(raw).hexdigest()
        want = manifest.get("sha256", {}).get(section)
        if digest != want:
            raise GraphFormatError(section, f"checksum mismatch: {digest} != {want}")
        payload[section] = raw

    graph = StateGraph()
    for count_key, section, loader in (
        ("vertex_count", "vertices.jsonl", _load_vertex),
        ("edge_count", "edges.jsonl", _load_edge),
    ):
        n = 0
        offset = 0
        for line in payload[section].split(b"\n"):
            if not line:
                offset += 1
                continue
            try:
                obj = json.loads(line)
                loader(graph, obj)
            except (json.JSONDecodeError, KeyError, ValueError, GraphError) as exc:
                raise GraphFormatError(section, str(exc), byte_offset=offset) from exc
            offset += len(line) + 1
            n += 1
        if n != manifest.get(count_key):
            raise GraphFormatError(section, f"{count_key} mismatch: {n} != {manifest.get(count_key)}")
    return graph.seal()


def _load_vertex(graph: StateGraph, obj: dict) -> None:
    cat = _CODE_CAT[obj["cat"]]
    v = Vertex(int(obj["id"]), VertexCategory(cat), obj["dtype"], dict(obj["props"]),
               None if obj["ts"] is None else int(obj["ts"]))
    if v.category is VertexCategory.ENTITY:
        # Bypass the upsert so stored ids survive verbatim.
        graph._check_mutable()
        graph._validate_vertex(v)
        key = (v.dtype, v.value)
        if key in graph._entity_index:
            raise GraphError(f"duplicate entity {key}")
        graph._entity_index[key] = v.id
        graph._by_value.setdefault(v.value, []).append(v.id)
        graph._vertices[v.id] = v
        graph._out[v.id] = []
        graph._in[v.id] = []
    else:
        graph.add_vertex(v)


def _load_edge(graph: StateGraph, obj: dict) -> None:
    graph.add_edge(Edge(int(obj["src"]), int(obj["dst"]), EdgeKind(obj["kind"]), dict(obj.get("props", {}))))
