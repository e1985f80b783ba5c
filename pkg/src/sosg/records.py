"""Parsers that turn heterogeneous operations data (snapshots, DB update
streams, log files) into uniform timestamped key-value records.

No semantics are attached here: values stay verbatim strings, nested JSON is
flattened to dotted keys, and the timestamp is lifted out of the payload onto
the record itself so that later stages share one comparable time axis.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .parallel import pool_map


class SosgError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SosgError):
    """Bad or inconsistent configuration."""


class IngestError(SosgError):
    """I/O or stream-level ingest failure; carries the failing origin."""

    def __init__(self, message: str, origin: str | None = None):
        super().__init__(message if origin is None else f"{origin}: {message}")
        self.origin = origin


# Source name -> (vertex category, is periodic snapshot). Snapshot sources are
# eligible for consecutive-duplicate removal; DB is an update stream and is not.
DEFAULT_SOURCE_TYPES: dict[str, tuple[str, bool]] = {
    "DB": ("state", False),
    "Libvirt": ("state", True),
    "Ovs": ("state", True),
    "Cephimage": ("state", True),
    "Cephfile": ("state", True),
    "Cephlog": ("event", False),
    "Log": ("event", False),
}

SUPPORTED_FORMATS = ("jsonl", "csv", "dbdump", "syslog")


class SourceCatalog:
    """Closed set of source types, loaded from configuration.

    Unknown source labels are a hard error everywhere they appear.
    """

    def __init__(self, entries: dict[str, tuple[str, bool]] | None = None):
        entries = dict(entries) if entries else dict(DEFAULT_SOURCE_TYPES)
        for name, (category, _) in entries.items():
            if category not in ("state", "event"):
                raise ConfigError(f"source {name!r}: category must be 'state' or 'event', got {category!r}")
        self._entries = entries

    @classmethod
    def from_config(cls, raw: dict) -> "SourceCatalog":
        entries = {}
        for name, val in raw.items():
            if isinstance(val, str):
                entries[name] = (val, val == "state")
            else:
                entries[name] = (val["category"], bool(val.get("snapshot", val["category"] == "state")))
        return cls(entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def require(self, name: str) -> None:
        if name not in self._entries:
            raise ConfigError(f"unknown source type {name!r} (known: {', '.join(self.names())})")

    def category(self, name: str) -> str:
        self.require(name)
        return self._entries[name][0]

    def is_snapshot(self, name: str) -> bool:
        self.require(name)
        return self._entries[name][1]


@dataclass(frozen=True)
class FormatSpec:
    """How to decode one input format.

    `timestamp_format` is `iso8601`, `epoch_s`, `epoch_ms`, `epoch_us`, or a
    strptime pattern (anything containing a `%`). dbdump and syslog carry the
    timestamp as a line-level field, so `timestamp_key` applies to jsonl/csv.
    """

    name: str
    timestamp_key: str | None = None
    timestamp_format: str = "iso8601"
    delimiter: str = ","

    def __post_init__(self):
        if self.name not in SUPPORTED_FORMATS:
            raise ConfigError(f"unknown format {self.name!r} (supported: {', '.join(SUPPORTED_FORMATS)})")
        if self.name in ("jsonl", "csv") and not self.timestamp_key:
            raise ConfigError(f"format {self.name!r} requires timestamp_key")


@dataclass
class ParseStats:
    parsed: int = 0
    skipped_malformed: int = 0
    skipped_no_timestamp: int = 0

    @property
    def total(self) -> int:
        return self.parsed + self.skipped_malformed + self.skipped_no_timestamp

    def merge(self, other: "ParseStats") -> None:
        self.parsed += other.parsed
        self.skipped_malformed += other.skipped_malformed
        self.skipped_no_timestamp += other.skipped_no_timestamp


@dataclass(frozen=True)
class Record:
    """One parsed unit: source type, UTC microsecond timestamp, verbatim
    string properties, and (file, line) provenance."""

    source: str
    timestamp: int
    props: dict[str, str]
    origin: tuple[str, int]


def parse_timestamp(value: str, fmt: str = "iso8601") -> int:
    """Normalize a timestamp string to UTC microseconds since the epoch."""
    value = value.strip()
    if not value:
        raise ValueError("empty timestamp")
    if fmt == "iso8601":
        s = value.replace("Z", "+00:00")
        if " " in s and "T" not in s:
            s = s.replace(" ", "T", 1)
        dt = datetime.fromisoformat(s)
    elif fmt == "epoch_s":
        return round(float(value) * 1_000_000)
    elif fmt == "epoch_ms":
        return round(float(value) * 1_000)
    elif fmt == "epoch_us":
        return int(value)
    elif "%" in fmt:
        dt = datetime.strptime(value, fmt)
    else:
        raise ConfigError(f"unknown timestamp format {fmt!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1_000_000)


def format_timestamp(micros: int) -> str:
    """Inverse of parse_timestamp for iso8601 output."""
    dt = datetime.fromtimestamp(micros / 1_000_000, tz=timezone.utc)
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if micros % 1_000_000:
        return f"{base}.{micros % 1_000_000:06d}Z"
    return base + "Z"


def flatten_json(obj: dict, prefix: str = "") -> dict[str, str]:
    """Flatten nested objects/arrays to dotted keys; scalars become strings."""
    out: dict[str, str] = {}
    for key, val in obj.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(flatten_json(val, name + "."))
        elif isinstance(val, list):
            for i, item in enumerate(val):
                if isinstance(item, (dict, list)):
                    out.update(flatten_json({str(i): item}, name + "."))
                else:
                    out[f"{name}.{i}"] = _scalar(item)
        else:
            out[name] = _scalar(val)
    return out


def _scalar(val) -> str:
    if val is None:
        return ""
    if isinstance(val, bool):
        return "true" if val else "false"
    return str(val)


def parse_source(
    data: bytes | str | io.IOBase,
    source: str,
    spec: FormatSpec,
    origin_name: str = "<stream>",
) -> tuple[list[Record], ParseStats]:
    """Parse one input stream into records.

    Malformed units are counted and skipped, never fatal; units without a
    parseable timestamp are counted separately. Output preserves input order
    and is deterministic for identical bytes.
    """
    if isinstance(data, io.IOBase):
        data = data.read()
    if isinstance(data, bytes):
        text = data.decode("utf-8", errors="replace")
    else:
        text = data
    parser = _PARSERS[spec.name]
    return parser(text, source, spec, origin_name)


def parse_file(path: str | Path, source: str, spec: FormatSpec) -> tuple[list[Record], ParseStats]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestError(str(exc), origin=str(path)) from exc
    return parse_source(raw, source, spec, origin_name=str(path))


def _parse_jsonl(text: str, source: str, spec: FormatSpec, origin_name: str):
    records: list[Record] = []
    stats = ParseStats()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            stats.skipped_malformed += 1
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            stats.skipped_malformed += 1
            continue
        if not isinstance(obj, dict):
            stats.skipped_malformed += 1
            continue
        props = flatten_json(obj)
        ts_raw = props.pop(spec.timestamp_key, None)
        if not props:
            stats.skipped_malformed += 1
            continue
        if ts_raw is None:
            stats.skipped_no_timestamp += 1
            continue
        try:
            ts = parse_timestamp(ts_raw, spec.timestamp_format)
        except (ValueError, OverflowError):
            stats.skipped_no_timestamp += 1
            continue
        records.append(Record(source, ts, props, (origin_name, lineno)))
        stats.parsed += 1
    return records, stats


def _parse_csv(text: str, source: str, spec: FormatSpec, origin_name: str):
    records: list[Record] = []
    stats = ParseStats()
    reader = csv.reader(io.StringIO(text), delimiter=spec.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        return records, stats
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            stats.skipped_malformed += 1
            continue
        if len(row) != len(header):
            stats.skipped_malformed += 1
            continue
        props = dict(zip(header, row))
        ts_raw = props.pop(spec.timestamp_key, None)
        if not props:
            stats.skipped_malformed += 1
            continue
        if ts_raw is None:
            stats.skipped_no_timestamp += 1
            continue
        try:
            ts = parse_timestamp(ts_raw, spec.timestamp_format)
        except (ValueError, OverflowError):
            stats.skipped_no_timestamp += 1
            continue
        records.append(Record(source, ts, props, (origin_name, lineno)))
        stats.parsed += 1
    return records, stats


_DB_OPS = ("INSERT", "UPDATE", "DELETE")


def _parse_dbdump(text: str, source: str, spec: FormatSpec, origin_name: str):
    """DB trigger update log: `<iso8601>\\t<table>\\t<op>\\t<json columns>`."""
    records: list[Record] = []
    stats = ParseStats()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            stats.skipped_malformed += 1
            continue
        parts = line.split("\t", 3)
        if len(parts) != 4 or parts[2] not in _DB_OPS:
            stats.skipped_malformed += 1
            continue
        try:
            cols = json.loads(parts[3])
        except json.JSONDecodeError:
            stats.skipped_malformed += 1
            continue
        if not isinstance(cols, dict):
            stats.skipped_malformed += 1
            continue
        try:
            ts = parse_timestamp(parts[0], "iso8601")
        except (ValueError, OverflowError):
            stats.skipped_no_timestamp += 1
            continue
        props = {"table": parts[1], "op": parts[2]}
        props.update(flatten_json(cols))
        records.append(Record(source, ts, props, (origin_name, lineno)))
        stats.parsed += 1
    return records, stats


def _parse_syslog(text: str, source: str, spec: FormatSpec, origin_name: str):
    """Log line: `<iso8601> <severity> <component> <free text>`."""
    records: list[Record] = []
    stats = ParseStats()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            stats.skipped_malformed += 1
            continue
        parts = line.split(" ", 3)
        if len(parts) < 3:
            stats.skipped_malformed += 1
            continue
        message = parts[3] if len(parts) == 4 else ""
        try:
            ts = parse_timestamp(parts[0], "iso8601")
        except (ValueError, OverflowError):
            stats.skipped_no_timestamp += 1
            continue
        props = {"severity": parts[1], "component": parts[2], "message": message}
        records.append(Record(source, ts, props, (origin_name, lineno)))
        stats.parsed += 1
    return records, stats


_PARSERS = {
    "jsonl": _parse_jsonl,
    "csv": _parse_csv,
    "dbdump": _parse_dbdump,
    "syslog": _parse_syslog,
}


def dedupe_snapshots(records: list[Record]) -> list[Record]:
    """Collapse runs of consecutive records identical in all props to the
    first (earliest) record of the run. Pure and idempotent; never reorders."""
    out: list[Record] = []
    for rec in records:
        if out and out[-1].source == rec.source and out[-1].props == rec.props:
            continue
        out.append(rec)
    return out


@dataclass(frozen=True)
class SourceRule:
    """Maps files matching `glob` (relative to the corpus root) to a source
    type and format."""

    glob: str
    source: str
    spec: FormatSpec


@dataclass
class IngestConfig:
    rules: list[SourceRule]
    catalog: SourceCatalog = field(default_factory=SourceCatalog)

    @classmethod
    def from_dict(cls, raw: dict) -> "IngestConfig":
        catalog = SourceCatalog.from_config(raw["source_types"]) if "source_types" in raw else SourceCatalog()
        rules = []
        for item in raw.get("sources", []):
            catalog.require(item["source"])
            spec = FormatSpec(
                name=item["format"],
                timestamp_key=item.get("timestamp_key"),
                timestamp_format=item.get("timestamp_format", "iso8601"),
                delimiter=item.get("delimiter", ","),
            )
            rules.append(SourceRule(item["glob"], item["source"], spec))
        if not rules:
            raise ConfigError("ingest config declares no sources")
        return cls(rules, catalog)

    @classmethod
    def from_file(cls, path: str | Path) -> "IngestConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise IngestError(str(exc), origin=str(path)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "source_types": {
                name: {"category": self.catalog.category(name), "snapshot": self.catalog.is_snapshot(name)}
                for name in self.catalog.names()
            },
            "sources": [
                {
                    "glob": r.glob,
                    "source": r.source,
                    "format": r.spec.name,
                    **({"timestamp_key": r.spec.timestamp_key} if r.spec.timestamp_key else {}),
                    **(
                        {"timestamp_format": r.spec.timestamp_format}
                        if r.spec.timestamp_format != "iso8601"
                        else {}
                    ),
                    **({"delimiter": r.spec.delimiter} if r.spec.delimiter != "," else {}),
                }
                for r in self.rules
            ],
        }


def discover_files(corpus_dir: str | Path, config: IngestConfig) -> list[tuple[Path, SourceRule]]:
    """Match corpus files against the config globs, in deterministic order.

    A file matching several rules goes to the first matching rule.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise IngestError("corpus directory not found", origin=str(corpus_dir))
    out: list[tuple[Path, SourceRule]] = []
    seen: set[Path] = set()
    for rule in config.rules:
        for path in sorted(corpus_dir.glob(rule.glob)):
            if path.is_file() and path not in seen:
                seen.add(path)
                out.append((path, rule))
    out.sort(key=lambda pair: str(pair[0]))
    return out


def _parse_one(job: tuple[str, str, FormatSpec, bool]) -> tuple[list[Record], ParseStats, int]:
    path, source, spec, snapshot = job
    recs, stats = parse_file(path, source, spec)
    raw_count = len(recs)
    if snapshot:
        recs = dedupe_snapshots(recs)
    return recs, stats, raw_count - len(recs)


def ingest_corpus(
    corpus_dir: str | Path,
    config: IngestConfig,
    workers: int | None = None,
) -> tuple[list[Record], dict[str, dict[str, int]]]:
    """Parse every configured file under corpus_dir.

    Snapshot sources get consecutive-duplicate removal per file. Returns the
    merged record list (file order, then line order) and per-source counters.
    """
    files = discover_files(corpus_dir, config)
    jobs = [(str(p), r.source, r.spec, config.catalog.is_snapshot(r.source)) for p, r in files]
    if workers is None and len(jobs) < 8:
        workers = 1
    results = pool_map(_parse_one, jobs, workers)
    records: list[Record] = []
    report: dict[str, dict[str, int]] = {}
    for (path, rule), (recs, stats, deduped) in zip(files, results):
        records.extend(recs)
        agg = report.setdefault(
            rule.source,
            {"files": 0, "parsed": 0, "skipped_malformed": 0, "skipped_no_timestamp": 0, "deduplicated": 0},
        )
        agg["files"] += 1
        agg["parsed"] += stats.parsed
        agg["skipped_malformed"] += stats.skipped_malformed
        agg["skipped_no_timestamp"] += stats.skipped_no_timestamp
        agg["deduplicated"] += deduped
    return records, report
