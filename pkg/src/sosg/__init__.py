"""Operation state graphs for heterogeneous systems: parse operations data
into records, build a property multigraph of entities, states and events,
answer cross-component queries by traversal, and flag misbehaving VMs by
subgraph distance."""

from .anomaly import (
    AnomalyReport,
    DetectionParams,
    TripletCode,
    VmSubgraph,
    detect,
    extract_subgraphs,
    featurize,
    generalized_jaccard,
)
from .builder import (
    BuildReport,
    IdentifierPolicy,
    IdentifierStats,
    build,
    build_from_corpus,
    build_state_event_vertices,
    discover_identifiers,
    link_temporal,
    materialize_entities_and_spatial_edges,
)
from .graph import (
    Edge,
    EdgeKind,
    GraphError,
    GraphFormatError,
    StateGraph,
    Vertex,
    VertexCategory,
    load,
    save,
    verify_invariants,
)
from .query import (
    EntityResolutionError,
    PathQuery,
    PathResult,
    affected_vms_by_host,
    find_paths,
    latest_state,
    list_cephfiles_for_vm,
    list_related,
    list_vms_in_subnet,
    resolve_entity,
)
from .records import (
    ConfigError,
    FormatSpec,
    IngestConfig,
    IngestError,
    ParseStats,
    Record,
    SosgError,
    SourceCatalog,
    dedupe_snapshots,
    ingest_corpus,
    parse_source,
    parse_timestamp,
)
from .synth import FaultInjection, FleetSpec, GroundTruth, SynthError, generate, inject

__version__ = "0.1.0"
