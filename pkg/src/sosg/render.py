"""Graphviz output for query results and anomaly evidence.

Vertex shapes follow the usual drawing convention for these graphs:
entities are boxes, states parallelograms, events hexagons.
"""

from __future__ import annotations

from .anomaly import AnomalyReport, VmSubgraph
from .graph import StateGraph, Vertex, VertexCategory
from .query import PathResult
from .records import format_timestamp

_SHAPES = {
    VertexCategory.ENTITY: "box",
    VertexCategory.STATE: "parallelogram",
    VertexCategory.EVENT: "hexagon",
}


def _node(v: Vertex) -> str:
    if v.category is VertexCategory.ENTITY:
        label = f"{v.dtype}\\n{v.value}"
    else:
        label = f"{v.dtype}\\n{format_timestamp(v.timestamp)}"
    return f'  n{v.id} [shape={_SHAPES[v.category]}, label="{label}"];'


def paths_to_dot(graph: StateGraph, result: PathResult, name: str = "paths") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    nodes: dict[int, Vertex] = {}
    edges: set[tuple[int, int]] = set()
    for path in result.paths:
        for vid in path:
            nodes[vid] = graph.vertex(vid)
        for a, b in zip(path, path[1:]):
            edges.add((a, b))
    for vid in sorted(nodes):
        lines.append(_node(nodes[vid]))
    for a, b in sorted(edges):
        lines.append(f"  n{a} -> n{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def subgraph_to_dot(graph: StateGraph, sub: VmSubgraph, name: str = "subgraph") -> str:
    lines = [f"digraph {name} {{"]
    for vid in sorted(sub.vertex_ids()):
        v = graph.vertex(vid)
        style = ', style=dashed, color=gray40' if vid in sub.shared else ""
        if v.category is VertexCategory.ENTITY:
            label = f"{v.dtype}\\n{v.value}"
        else:
            label = f"{v.dtype}\\n{format_timestamp(v.timestamp)}"
        lines.append(f'  n{vid} [shape={_SHAPES[v.category]}, label="{label}"{style}];')
    for idx in sub.edge_indexes:
        e = graph.edge_at(idx)
        attr = " [style=dotted]" if e.kind.value == "temporal" else ""
        lines.append(f"  n{e.src} -> n{e.dst}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def report_to_dot(graph: StateGraph, report: AnomalyReport, subgraphs: dict[int, VmSubgraph]) -> str:
    """One digraph per flagged VM's evidence subgraph."""
    parts = []
    for root in sorted(report.flagged):
        sub = subgraphs.get(root)
        if sub is not None:
            parts.append(subgraph_to_dot(graph, sub, name=f"vm_{root}"))
    return "\n".join(parts) if parts else "digraph empty {\n}\n"
