"""Synthetic OpenStack/Ceph-style operations corpus with a known ground
truth, sized to a byte budget with a calibrated per-source mix, plus
injection of three reproducible fault archetypes:

  OrphanOvsPorts     VM deleted in the database, libvirt and Ceph records
                     stop, but its virtual ports keep appearing in OVS
                     snapshots until the end of the run (resource leak).
  DbPhysicalMismatch Database says deleted early on, yet libvirt, Ceph image
                     and OVS states persist; thousands of repeated failing
                     action/fault rows accumulate (1,704 failures out of
                     1,707 actions by default).
  FailedMigration    libvirt states vanish on the source host after the
                     migration starts and never appear on the destination;
                     two fault rows and a flood of repeated skip log lines
                     (653 of the VM's 1,653 log lines by default).

Snapshot content is a pure function of topology and round index, so the
corpus is byte-identical per seed. Identifier keys are named consistently
across sources (uuid, host, ip, mac, port, subnet, image, prefix, object)
because an entity is one (key, value) pair.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .builder import tokenize
from .records import SosgError, format_timestamp, parse_timestamp

FAULT_KINDS = ("OrphanOvsPorts", "DbPhysicalMismatch", "FailedMigration")

MIX_TOLERANCE = 0.05

# Smallest sensible emission per snapshot source; below this the byte budget
# cannot hold even a degenerate schedule.
_MIN_ROUNDS = 2

_CEPHIMAGE_FRACTION = 0.012  # not in the named mix; kept small
_CEPHLOG_SHARE_OF_LOGS = 0.08


class SynthError(SosgError):
    pass


@dataclass
class FleetSpec:
    n_hosts: int = 20
    n_storage_hosts: int = 4
    n_vms: int = 200
    n_subnets: int = 12
    images_per_vm: int = 1
    blocks_per_image: int = 4
    duration_hours: float = 3.0
    start_time: str = "2026-05-04T00:00:00Z"
    snapshot_periods: dict = field(
        default_factory=lambda: {"Libvirt": 60, "Ovs": 60, "Cephimage": 600, "Cephfile": 3600}
    )
    log_rate_per_component: int | None = None  # lines/hour; None derives it from the byte budget
    total_bytes: int = 8 * 2**20
    mix_targets: dict = field(
        default_factory=lambda: {"Ovs": 0.50, "logs": 0.24, "Cephfile": 0.15, "Libvirt": 0.09}
    )

    def validate(self) -> None:
        for name in ("n_hosts", "n_storage_hosts", "n_vms", "n_subnets", "images_per_vm", "blocks_per_image"):
            if getattr(self, name) < 1:
                raise SynthError(f"{name} must be >= 1")
        if self.n_storage_hosts >= self.n_hosts:
            raise SynthError("n_storage_hosts must leave at least one compute host")
        if self.duration_hours <= 0:
            raise SynthError("duration_hours must be positive")
        if sum(self.mix_targets.values()) > 1.0 + 1e-9:
            raise SynthError("mix_targets must sum to <= 1")
        if self.total_bytes < 64 * 1024:
            raise SynthError("total_bytes too small to satisfy any mix")

    @classmethod
    def from_dict(cls, raw: dict) -> "FleetSpec":
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "n_hosts": self.n_hosts,
            "n_storage_hosts": self.n_storage_hosts,
            "n_vms": self.n_vms,
            "n_subnets": self.n_subnets,
            "images_per_vm": self.images_per_vm,
            "blocks_per_image": self.blocks_per_image,
            "duration_hours": self.duration_hours,
            "start_time": self.start_time,
            "snapshot_periods": dict(self.snapshot_periods),
            "log_rate_per_component": self.log_rate_per_component,
            "total_bytes": self.total_bytes,
            "mix_targets": dict(self.mix_targets),
        }


@dataclass
class FaultInjection:
    kind: str
    target_vm: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise SynthError(f"unknown fault kind {self.kind!r} (known: {', '.join(FAULT_KINDS)})")


class GroundTruth:
    """Topology, injected faults and expected anomalies for one corpus."""

    def __init__(self, data: dict):
        self.data = data

    @property
    def vms(self) -> list[dict]:
        return self.data["vms"]

    @property
    def hosts(self) -> dict:
        return self.data["hosts"]

    @property
    def injected(self) -> list[dict]:
        return self.data["injected"]

    @property
    def expected_anomalies(self) -> list[str]:
        return self.data["expected_anomalies"]

    def vm(self, uuid: str) -> dict:
        for vm in self.vms:
            if vm["uuid"] == uuid:
                return vm
        raise SynthError(f"unknown vm {uuid!r}")

    def vms_on_host(self, host: str) -> set[str]:
        return {vm["uuid"] for vm in self.vms if vm["host"] == host}

    def vms_with_blocks_on(self, host: str) -> set[str]:
        out = set()
        for vm in self.vms:
            for img in vm["images"]:
                if host in img["placement"].values():
                    out.add(vm["uuid"])
        return out

    def vms_in_subnet(self, subnet: str) -> set[str]:
        return {vm["uuid"] for vm in self.vms if vm["subnet"] == subnet}

    def save(self, corpus_dir: str | Path) -> None:
        path = Path(corpus_dir) / "ground_truth.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, corpus_dir: str | Path) -> "GroundTruth":
        path = Path(corpus_dir) / "ground_truth.json"
        if not path.is_file():
            raise SynthError(f"{path} not found (not a generated corpus?)")
        return cls(json.loads(path.read_text()))


# -- deterministic value factories -----------------------------------------


def _uuid(rng: random.Random) -> str:
    return (
        f"{rng.getrandbits(32):08x}-{rng.getrandbits(16):04x}-4{rng.getrandbits(12):03x}"
        f"-{8 + rng.getrandbits(2):x}{rng.getrandbits(12):03x}-{rng.getrandbits(48):012x}"
    )


def _mac(rng: random.Random) -> str:
    return f"fa:16:3e:{rng.getrandbits(8):02x}:{rng.getrandbits(8):02x}:{rng.getrandbits(8):02x}"


def _fill(salt: str, n: int) -> str:
    if n <= 0:
        return ""
    unit = hashlib.blake2b(salt.encode(), digest_size=16).hexdigest()
    return (unit * (n // len(unit) + 1))[:n]


def _micros(hours: float) -> int:
    return int(hours * 3600 * 1_000_000)


def build_topology(spec: FleetSpec, seed: int) -> dict:
    rng = random.Random(f"{seed}:topology")
    n_compute = spec.n_hosts - spec.n_storage_hosts
    compute = [f"cn-{i + 1:03d}" for i in range(n_compute)]
    storage = [f"cs-{i + 1:03d}" for i in range(spec.n_storage_hosts)]
    subnets = [f"subnet-{i + 1:02d}" for i in range(spec.n_subnets)]
    t0 = parse_timestamp(spec.start_time)

    vms = []
    for i in range(spec.n_vms):
        subnet_idx = i % spec.n_subnets
        images = []
        for j in range(spec.images_per_vm):
            prefix = f"rbd_data.{rng.getrandbits(48):012x}"
            objects = [f"/ceph/data/{prefix}.{k:08d}" for k in range(spec.blocks_per_image)]
            placement = {obj: storage[rng.randrange(len(storage))] for obj in objects}
            images.append(
                {
                    "image": _uuid(rng),
                    "prefix": prefix,
                    "size_bytes": 2 * 2**30 + i * 4096,
                    "objects": objects,
                    "placement": placement,
                }
            )
        vms.append(
            {
                "uuid": _uuid(rng),
                "name": f"instance-{i + 1:08x}",
                "ip": f"10.{subnet_idx + 1}.{i // 250}.{i % 250 + 2}",
                "mac": _mac(rng),
                "port": _uuid(rng),
                "subnet": subnets[subnet_idx],
                "host": compute[i % n_compute],
                "created_at": t0 + i * (60_000_000 // max(1, spec.n_vms)),
                "deleted_at": None,
                "images": images,
            }
        )
    return {
        "seed": seed,
        "spec": spec.to_dict(),
        "hosts": {"controller": "ctl-01", "compute": compute, "storage": storage},
        "subnets": subnets,
        "vms": vms,
        "injected": [],
        "expected_anomalies": [],
    }


# -- snapshot sources -------------------------------------------------------
#
# Snapshot rows are functions of (topology, round index): no randomness, so
# a schedule can be probed, discarded and regenerated freely. Budget fitting
# works in two phases: size one round unpadded, pick the round count that
# fits the source budget (decimating the nominal period, never below
# _MIN_ROUNDS), then distribute the remaining byte deficit into each row's
# trailing `fill` column.


def _round_times(t0: int, duration_us: int, rounds: int) -> list[int]:
    return [t0 + (k + 1) * duration_us // (rounds + 1) for k in range(rounds)]


def _fit_rounds(source: str, budget: int, round_bytes: int, natural_rounds: int) -> int:
    if round_bytes <= 0:
        raise SynthError(f"{source}: empty snapshot round")
    natural_rounds = max(natural_rounds, 1)
    by_budget = budget // round_bytes
    rounds = min(natural_rounds, by_budget)
    if rounds < _MIN_ROUNDS:
        if natural_rounds >= _MIN_ROUNDS:
            raise SynthError(
                f"{source}: byte budget {budget} cannot hold {_MIN_ROUNDS} snapshot rounds "
                f"of {round_bytes} bytes (binding constraint: topology size vs mix target)"
            )
        rounds = natural_rounds
    return rounds


def _pad_lines(source: str, files: dict[str, list[str]], budget: int) -> dict[str, list[str]]:
    """Insert deficit bytes into the empty trailing fill field of each row.

    Rows expose the slot either as a trailing empty CSV column (line ends
    with a comma) or as an empty `fill` JSON string.
    """
    slots = []
    for fname in sorted(files):
        for i, line in enumerate(files[fname]):
            if line.endswith(',"fill":""}') or line.endswith(","):
                slots.append((fname, i))
    total = sum(len(line) + 1 for lines in files.values() for line in lines)
    deficit = budget - total
    if deficit <= 0 or not slots:
        return files
    base, extra = divmod(deficit, len(slots))
    for n, (fname, i) in enumerate(slots):
        pad = base + (1 if n < extra else 0)
        if pad <= 0:
            continue
        content = _fill(f"{source}:{fname}:{i}", pad)
        line = files[fname][i]
        if line.endswith(',"fill":""}'):
            files[fname][i] = line[:-2] + content + '"}'
        else:
            files[fname][i] = line + content
    return files


def _gen_ovs(topo: dict, spec: FleetSpec, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    header = "ts,host,bridge,port,mac,uuid,ip,rx_packets,tx_packets,rx_bytes,tx_bytes,rx_errors,tx_errors,stats,fill"

    def round_rows(ts: int, k: int) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        iso = format_timestamp(ts)
        for i, vm in enumerate(topo["vms"]):
            rx = 120_000 + 971 * (k + 1) + i * 13
            tx = 80_000 + 643 * (k + 1) + i * 7
            stats = (
                f"collisions=0;rx_crc_err=0;rx_dropped={k % 3};rx_frame_err=0;rx_over_err=0;"
                f"tx_dropped=0;rx_multicast={i % 5};link_resets=0;mtu=1500;duplex=full;"
                f"ofport={i + 1};admin_state=up;link_state=up"
            )
            line = (
                f"{iso},{vm['host']},br-int,{vm['port']},{vm['mac']},{vm['uuid']},{vm['ip']},"
                f"{rx},{tx},{rx * 64},{tx * 64},0,0,{stats},"
            )
            out.setdefault(f"ovs/{vm['host']}/ports.csv", []).append(line)
        return out

    return _emit_rounds("Ovs", header, round_rows, spec.snapshot_periods["Ovs"], budget, t0, duration_us)


def _gen_libvirt(topo: dict, spec: FleetSpec, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    def round_rows(ts: int, k: int) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        iso = format_timestamp(ts)
        for i, vm in enumerate(topo["vms"]):
            obj = {
                "ts": iso,
                "host": vm["host"],
                "uuid": vm["uuid"],
                "name": vm["name"],
                "ip": vm["ip"],
                "status": "running",
                "vcpus": "2",
                "memory_kb": "4194304",
                "cpu_time_ns": str(10_000_000_000 + (k + 1) * 500_000_000 + i * 1017),
                "fill": "",
            }
            out.setdefault(f"libvirt/{vm['host']}/snapshots.jsonl", []).append(
                json.dumps(obj, separators=(",", ":"))
            )
        return out

    return _emit_rounds("Libvirt", None, round_rows, spec.snapshot_periods["Libvirt"], budget, t0, duration_us)


def _gen_cephimage(topo: dict, spec: FleetSpec, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    ctl = topo["hosts"]["controller"]

    def round_rows(ts: int, k: int) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        iso = format_timestamp(ts)
        for vm in topo["vms"]:
            for img in vm["images"]:
                obj = {
                    "ts": iso,
                    "image": img["image"],
                    "prefix": img["prefix"],
                    "size_bytes": str(img["size_bytes"] + k * 8192),
                    "objects": str(len(img["objects"])),
                    "order": "22",
                    "fill": "",
                }
                out.setdefault(f"cephimage/{ctl}/images.jsonl", []).append(
                    json.dumps(obj, separators=(",", ":"))
                )
        return out

    return _emit_rounds("Cephimage", None, round_rows, spec.snapshot_periods["Cephimage"], budget, t0, duration_us)


def _gen_cephfile(topo: dict, spec: FleetSpec, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    header = "ts,host,prefix,object,size_bytes,fill"

    def round_rows(ts: int, k: int) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        iso = format_timestamp(ts)
        for i, vm in enumerate(topo["vms"]):
            for img in vm["images"]:
                for obj in img["objects"]:
                    host = img["placement"][obj]
                    size = 4 * 2**20 + k * 4096 + i * 17
                    out.setdefault(f"cephfile/{host}/blocks.csv", []).append(
                        f"{iso},{host},{img['prefix']},{obj},{size},"
                    )
        return out

    return _emit_rounds("Cephfile", header, round_rows, spec.snapshot_periods["Cephfile"], budget, t0, duration_us)


def _emit_rounds(source, header, round_rows, period_s, budget, t0, duration_us) -> dict[str, list[str]]:
    natural = max(1, int(duration_us / 1_000_000 // period_s))
    probe = round_rows(t0, 0)
    round_bytes = sum(len(line) + 1 for lines in probe.values() for line in lines)
    header_bytes = (len(header) + 1) * len(probe) if header else 0
    rounds = _fit_rounds(source, budget - header_bytes, round_bytes, natural)
    files: dict[str, list[str]] = {}
    if header:
        for fname in probe:
            files[fname] = [header]
    for k, ts in enumerate(_round_times(t0, duration_us, rounds)):
        for fname, lines in round_rows(ts, k).items():
            files.setdefault(fname, [] if not header else [header]).extend(lines)
    return _pad_lines(source, files, budget)


# -- database update stream --------------------------------------------------


def _db_row(ts: int, table: str, op: str, cols: dict) -> str:
    return f"{format_timestamp(ts)}\t{table}\t{op}\t{json.dumps(cols, separators=(',', ':'))}"


def _gen_db(topo: dict, spec: FleetSpec, t0: int, duration_us: int) -> dict[str, list[str]]:
    ctl = topo["hosts"]["controller"]
    rows: list[tuple[int, str]] = []
    for i, vm in enumerate(topo["vms"]):
        ts = vm["created_at"]
        first_image = vm["images"][0]["image"]
        rows.append(
            (ts, _db_row(ts, "nova.instances", "INSERT", {
                "uuid": vm["uuid"], "name": vm["name"], "host": vm["host"],
                "ip": vm["ip"], "image": first_image, "status": "active",
            }))
        )
        rows.append(
            (ts + 1_000_000, _db_row(ts + 1_000_000, "neutron.ports", "INSERT", {
                "port": vm["port"], "uuid": vm["uuid"], "subnet": vm["subnet"],
                "ip": vm["ip"], "mac": vm["mac"], "status": "ACTIVE",
            }))
        )
        for j, img in enumerate(vm["images"]):
            rows.append(
                (ts + 2_000_000 + j, _db_row(ts + 2_000_000 + j, "glance.images", "INSERT", {
                    "image": img["image"], "name": f"img-{i + 1:05d}-{j}",
                    "size_bytes": str(img["size_bytes"]), "status": "active",
                }))
            )
        rows.append(
            (ts + 3_000_000, _db_row(ts + 3_000_000, "nova.instance_actions", "INSERT", {
                "uuid": vm["uuid"], "action": "create", "result": "Success",
            }))
        )
        mid = t0 + duration_us // 2 + i * 1_000
        rows.append(
            (mid, _db_row(mid, "nova.instances", "UPDATE", {
                "uuid": vm["uuid"], "name": vm["name"], "host": vm["host"],
                "ip": vm["ip"], "image": first_image, "status": "active",
            }))
        )
    rows.sort(key=lambda pair: pair[0])
    return {f"db/{ctl}/updates.tsv": [line for _, line in rows]}


# -- log streams --------------------------------------------------------------

_SEVERITIES = (("INFO", 90), ("WARN", 8), ("ERROR", 2))

_CHATTER = (
    "Periodic resource audit completed",
    "Worker heartbeat ok queue_depth=0",
    "Cache refreshed entries={n}",
    "RPC pool size steady at {n}",
    "Config reload not required",
    "Token cache pruned {n} entries",
)

_VM_TEMPLATES = (
    "[instance: {uuid}] VM heartbeat ok cpu={n}% mem={m}MB",
    "[instance: {uuid}] Periodic task update_available_resource completed on {host}",
    "[instance: {uuid}] Instance {name} state synced",
    "Active port {port} for instance {uuid} on {ip}",
    "[instance: {uuid}] Disk usage checked image {image}",
    "GET /v2/servers/{uuid} status 200 len={n}",
)

_COMPUTE_COMPONENTS = ("nova-compute", "neutron-openvswitch-agent")
_CONTROLLER_COMPONENTS = ("nova-api", "nova-scheduler", "neutron-server", "glance-api", "cinder-volume")

_CEPH_TEMPLATES = (
    "osd.{n} pg 3.{h} scrub starts",
    "osd.{n} pg 3.{h} scrub ok",
    "osd.{n} slow request warning on object {object}",
    "mon.0 health check ok {n} osds up",
)


def _log_line_body(rng: random.Random, topo: dict) -> str:
    # Host mentions always use the named VM's own host, so a line that
    # contains both a host and a VM never contradicts the placement.
    if rng.random() < 0.7:
        template = _VM_TEMPLATES[rng.randrange(len(_VM_TEMPLATES))]
        vm = topo["vms"][rng.randrange(len(topo["vms"]))]
        img = vm["images"][0]
        return template.format(
            uuid=vm["uuid"], name=vm["name"], ip=vm["ip"], port=vm["port"],
            host=vm["host"], image=img["image"],
            n=rng.randrange(5, 95), m=rng.randrange(512, 4096),
        )
    template = _CHATTER[rng.randrange(len(_CHATTER))]
    return template.format(n=rng.randrange(1, 400))


def _pick_severity(rng: random.Random) -> str:
    roll = rng.randrange(100)
    acc = 0
    for name, weight in _SEVERITIES:
        acc += weight
        if roll < acc:
            return name
    return "INFO"


def _gen_logs(topo: dict, spec: FleetSpec, seed: int, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    rng = random.Random(f"{seed}:logs")
    slots: list[tuple[str, str, bool]] = []
    for host in topo["hosts"]["compute"]:
        for comp in _COMPUTE_COMPONENTS:
            slots.append((host, comp, False))
    for comp in _CONTROLLER_COMPONENTS:
        slots.append((topo["hosts"]["controller"], comp, True))

    ts_len = len(format_timestamp(t0))
    if spec.log_rate_per_component is not None:
        target_lines = int(spec.log_rate_per_component * len(slots) * duration_us / 3_600_000_000)
    else:
        target_lines = None

    entries: list[tuple[str, str]] = []  # (relpath, body-with-severity-and-component)
    used = 0
    while True:
        if target_lines is not None:
            if len(entries) >= target_lines:
                break
        elif used >= budget:
            break
        host, comp, _on_ctl = slots[len(entries) % len(slots)]
        sev = _pick_severity(rng)
        body = _log_line_body(rng, topo)
        tail = f"{sev} {comp} {body}"
        entries.append((f"log/{host}/{comp}.log", tail))
        used += ts_len + 1 + len(tail) + 1
        if len(entries) > 5_000_000:
            raise SynthError("Log: line budget diverged")

    files: dict[str, list[str]] = {}
    times = _round_times(t0, duration_us, len(entries))
    for (relpath, tail), ts in zip(entries, times):
        files.setdefault(relpath, []).append(f"{format_timestamp(ts)} {tail}")
    return files


def _gen_cephlogs(topo: dict, spec: FleetSpec, seed: int, budget: int, t0: int, duration_us: int) -> dict[str, list[str]]:
    rng = random.Random(f"{seed}:cephlogs")
    storage = topo["hosts"]["storage"]
    objects_by_host: dict[str, list[str]] = {h: [] for h in storage}
    for vm in topo["vms"]:
        for img in vm["images"]:
            for obj, host in sorted(img["placement"].items()):
                objects_by_host[host].append(obj)

    ts_len = len(format_timestamp(t0))
    entries: list[tuple[str, str]] = []
    used = 0
    while used < budget:
        host = storage[len(entries) % len(storage)]
        template = _CEPH_TEMPLATES[rng.randrange(len(_CEPH_TEMPLATES))]
        pool = objects_by_host[host]
        obj = pool[rng.randrange(len(pool))] if pool else "/ceph/data/none"
        body = template.format(n=rng.randrange(0, 40), h=f"{rng.getrandbits(12):03x}", object=obj)
        sev = _pick_severity(rng)
        tail = f"{sev} ceph-osd {body}"
        entries.append((f"cephlog/{host}/ceph-osd.log", tail))
        used += ts_len + 1 + len(tail) + 1
        if len(entries) > 5_000_000:
            raise SynthError("Cephlog: line budget diverged")

    files: dict[str, list[str]] = {}
    times = _round_times(t0, duration_us, len(entries))
    for (relpath, tail), ts in zip(entries, times):
        files.setdefault(relpath, []).append(f"{format_timestamp(ts)} {tail}")
    return files


# -- corpus assembly ----------------------------------------------------------


def ingest_config_dict() -> dict:
    """The source-mapping config matching the emitted corpus layout."""
    return {
        "sources": [
            {"glob": "db/**/*.tsv", "source": "DB", "format": "dbdump"},
            {"glob": "libvirt/**/*.jsonl", "source": "Libvirt", "format": "jsonl", "timestamp_key": "ts"},
            {"glob": "ovs/**/*.csv", "source": "Ovs", "format": "csv", "timestamp_key": "ts"},
            {"glob": "cephimage/**/*.jsonl", "source": "Cephimage", "format": "jsonl", "timestamp_key": "ts"},
            {"glob": "cephfile/**/*.csv", "source": "Cephfile", "format": "csv", "timestamp_key": "ts"},
            {"glob": "log/**/*.log", "source": "Log", "format": "syslog"},
            {"glob": "cephlog/**/*.log", "source": "Cephlog", "format": "syslog"},
        ]
    }


def measured_mix(corpus_dir: str | Path) -> dict[str, float]:
    """Byte fraction per source directory; Log and Cephlog merge as `logs`."""
    corpus_dir = Path(corpus_dir)
    sizes: dict[str, int] = {}
    for sub in corpus_dir.iterdir():
        if sub.is_dir():
            sizes[sub.name] = sum(p.stat().st_size for p in sub.rglob("*") if p.is_file())
    total = sum(sizes.values())
    if total == 0:
        return {}
    mix = {
        "Ovs": sizes.get("ovs", 0) / total,
        "logs": (sizes.get("log", 0) + sizes.get("cephlog", 0)) / total,
        "Cephfile": sizes.get("cephfile", 0) / total,
        "Libvirt": sizes.get("libvirt", 0) / total,
        "DB": sizes.get("db", 0) / total,
        "Cephimage": sizes.get("cephimage", 0) / total,
    }
    return mix


def generate(spec: FleetSpec, seed: int, out_dir: str | Path) -> GroundTruth:
    """Emit the corpus (one directory per source, one file per host),
    ground_truth.json and ingest.json. Byte-identical for identical
    (spec, seed); achieved byte mix within the tolerance of mix_targets."""
    spec.validate()
    out_dir = Path(out_dir)
    topo = build_topology(spec, seed)
    t0 = parse_timestamp(spec.start_time)
    duration_us = _micros(spec.duration_hours)
    total = spec.total_bytes
    logs_budget = int(total * spec.mix_targets["logs"])

    files: dict[str, list[str]] = {}
    files.update(_gen_ovs(topo, spec, int(total * spec.mix_targets["Ovs"]), t0, duration_us))
    files.update(_gen_libvirt(topo, spec, int(total * spec.mix_targets["Libvirt"]), t0, duration_us))
    files.update(_gen_cephfile(topo, spec, int(total * spec.mix_targets["Cephfile"]), t0, duration_us))
    files.update(_gen_cephimage(topo, spec, int(total * _CEPHIMAGE_FRACTION), t0, duration_us))
    files.update(_gen_db(topo, spec, t0, duration_us))
    files.update(_gen_logs(topo, spec, seed, int(logs_budget * (1 - _CEPHLOG_SHARE_OF_LOGS)), t0, duration_us))
    files.update(_gen_cephlogs(topo, spec, seed, int(logs_budget * _CEPHLOG_SHARE_OF_LOGS), t0, duration_us))

    for relpath, lines in sorted(files.items()):
        path = out_dir / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")

    (out_dir / "ingest.json").write_text(json.dumps(ingest_config_dict(), indent=2) + "\n")
    gt = GroundTruth(topo)
    gt.save(out_dir)

    mix = measured_mix(out_dir)
    for name, want in spec.mix_targets.items():
        got = mix.get(name, 0.0)
        if abs(got - want) > MIX_TOLERANCE:
            raise SynthError(
                f"{name}: achieved byte fraction {got:.3f} misses target {want:.3f} "
                f"by more than {MIX_TOLERANCE} (binding constraint: topology vs total_bytes)"
            )
    return gt


# -- fault injection ----------------------------------------------------------


def _edit_jsonl(path: Path, keep) -> int:
    lines = path.read_text().splitlines()
    kept = [ln for ln in lines if keep(json.loads(ln))]
    path.write_text("\n".join(kept) + "\n" if kept else "")
    return len(lines) - len(kept)


def _edit_csv(path: Path, keep) -> int:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    kept = [lines[0]]
    dropped = 0
    for ln in lines[1:]:
        row = next(csv.reader(io.StringIO(ln)))
        if keep(dict(zip(header, row))):
            kept.append(ln)
        else:
            dropped += 1
    path.write_text("\n".join(kept) + "\n")
    return dropped


def _merge_timestamped(path: Path, new_lines: list[tuple[int, str]]) -> None:
    """Merge (ts, line) items into a time-ordered line file."""
    existing = []
    if path.is_file():
        for ln in path.read_text().splitlines():
            existing.append((parse_timestamp(ln.split("\t", 1)[0].split(" ", 1)[0]), ln))
    merged = sorted(existing + new_lines, key=lambda p: p[0])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(ln for _, ln in merged) + "\n")


def _count_vm_log_lines(corpus_dir: Path, uuid: str) -> int:
    count = 0
    for path in sorted(corpus_dir.glob("log/**/*.log")):
        for ln in path.read_text().splitlines():
            if uuid in ln and uuid in tokenize(ln):
                count += 1
    return count


def inject(corpus_dir: str | Path, fault: FaultInjection, seed: int = 0) -> GroundTruth:
    """Apply one fault archetype to a generated corpus, editing only records
    attributable to the target VM and its hosts, and update the ground truth."""
    corpus_dir = Path(corpus_dir)
    gt = GroundTruth.load(corpus_dir)
    for prior in gt.injected:
        if prior["target_vm"] == fault.target_vm:
            raise SynthError(f"vm {fault.target_vm} already has an injected fault")
    vm = gt.vm(fault.target_vm)
    spec = FleetSpec.from_dict(gt.data["spec"])
    t0 = parse_timestamp(spec.start_time)
    duration_us = _micros(spec.duration_hours)
    t_end = t0 + duration_us
    ctl = gt.hosts["controller"]
    db_path = corpus_dir / "db" / ctl / "updates.tsv"
    params = dict(fault.params)

    if fault.kind == "OrphanOvsPorts":
        t_del = t0 + int(duration_us * params.get("delete_at_fraction", 0.5))
        params["deleted_at"] = t_del
        _drop_vm_snapshots(corpus_dir, gt, vm, after=t_del, libvirt=True, ceph=True)
        _merge_timestamped(db_path, _deletion_rows(vm, t_del))
        vm["deleted_at"] = t_del

    elif fault.kind == "DbPhysicalMismatch":
        t_del = t0 + int(duration_us * params.get("delete_at_fraction", 0.15))
        actions = int(params.get("actions", 1707))
        failures = int(params.get("failures", 1704))
        params.update({"deleted_at": t_del, "actions": actions, "failures": failures})
        rows = _deletion_rows(vm, t_del)
        ok_slots = _success_slots(actions, actions - failures)
        span = max(1, t_end - t_del - 2_000_000)
        for n in range(actions):
            ts = t_del + 2_000_000 + n * span // actions
            result = "Success" if n in ok_slots else "Error"
            rows.append((ts, _db_row(ts, "nova.instance_actions", "INSERT", {
                "uuid": vm["uuid"], "action": "delete", "result": result,
            })))
            if result == "Error":
                rows.append((ts, _db_row(ts, "nova.instance_faults", "INSERT", {
                    "uuid": vm["uuid"], "code": "500",
                    "message": f"Failed to delete instance {vm['name']}: resource busy",
                })))
        _merge_timestamped(db_path, rows)
        vm["deleted_at"] = t_del

    elif fault.kind == "FailedMigration":
        t_mig = t0 + int(duration_us * params.get("migrate_at_fraction", 0.6))
        total_lines = int(params.get("log_lines", 1653))
        skip_lines = int(params.get("skip_lines", 653))
        dest = _pick_dest_host(gt, vm)
        params.update({"migrated_at": t_mig, "dest_host": dest,
                       "log_lines": total_lines, "skip_lines": skip_lines})
        _drop_vm_snapshots(corpus_dir, gt, vm, after=t_mig, libvirt=True, ceph=False)
        rows = [(t_mig, _db_row(t_mig, "nova.instance_actions", "INSERT", {
            "uuid": vm["uuid"], "action": "migrate", "result": "Error",
        }))]
        msg_src = f"cannot remove config /etc/libvirt/qemu/{vm['name']}.xml: Read-only file system"
        msg_dst = "error removing image"
        rows.append((t_mig + 1_000_000, _db_row(t_mig + 1_000_000, "nova.instance_faults", "INSERT", {
            "uuid": vm["uuid"], "code": "500", "host": vm["host"], "message": msg_src,
        })))
        rows.append((t_mig + 2_000_000, _db_row(t_mig + 2_000_000, "nova.instance_faults", "INSERT", {
            "uuid": vm["uuid"], "code": "500", "host": dest, "message": msg_dst,
        })))
        _merge_timestamped(db_path, rows)

        existing = _count_vm_log_lines(corpus_dir, vm["uuid"])
        filler = max(0, total_lines - skip_lines - existing)
        params["existing_log_lines"] = existing
        log_path = corpus_dir / "log" / vm["host"] / "nova-compute.log"
        new_lines: list[tuple[int, str]] = []
        span = max(1, t_end - t_mig - 1_000_000)
        for n in range(skip_lines):
            ts = t_mig + 1_000_000 + n * span // max(1, skip_lines)
            new_lines.append((ts, f"{format_timestamp(ts)} WARN nova-compute "
                                  f"[instance: {vm['uuid']}] Instance not resizing, skipping migration"))
        for n in range(filler):
            ts = t_mig + 1_500_000 + n * span // max(1, filler)
            new_lines.append((ts, f"{format_timestamp(ts)} INFO nova-compute "
                                  f"[instance: {vm['uuid']}] Migration data transfer progress {n % 97}%"))
        _merge_timestamped(log_path, new_lines)

    gt.data["injected"].append({"kind": fault.kind, "target_vm": fault.target_vm, "params": params})
    gt.data["expected_anomalies"].append(fault.target_vm)
    gt.save(corpus_dir)
    return gt


def _success_slots(actions: int, successes: int) -> set[int]:
    if successes <= 0:
        return set()
    step = max(1, actions // (successes + 1))
    return {min(actions - 1, (n + 1) * step) for n in range(successes)}


def _pick_dest_host(gt: GroundTruth, vm: dict) -> str:
    for host in gt.hosts["compute"]:
        if host != vm["host"]:
            return host
    raise SynthError("no destination host available for migration fault")


def _deletion_rows(vm: dict, t_del: int) -> list[tuple[int, str]]:
    first_image = vm["images"][0]["image"]
    return [
        (t_del, _db_row(t_del, "nova.instance_actions", "INSERT", {
            "uuid": vm["uuid"], "action": "delete", "result": "Success",
        })),
        (t_del + 1_000_000, _db_row(t_del + 1_000_000, "nova.instances", "UPDATE", {
            "uuid": vm["uuid"], "name": vm["name"], "host": vm["host"],
            "ip": vm["ip"], "image": first_image, "status": "deleted",
        })),
    ]


def _drop_vm_snapshots(corpus_dir: Path, gt: GroundTruth, vm: dict, after: int, libvirt: bool, ceph: bool) -> None:
    uuid = vm["uuid"]
    if libvirt:
        path = corpus_dir / "libvirt" / vm["host"] / "snapshots.jsonl"
        if path.is_file():
            _edit_jsonl(path, lambda obj: not (obj.get("uuid") == uuid and parse_timestamp(obj["ts"]) > after))
    if ceph:
        images = {img["image"] for img in vm["images"]}
        prefixes = {img["prefix"] for img in vm["images"]}
        ctl = gt.hosts["controller"]
        img_path = corpus_dir / "cephimage" / ctl / "images.jsonl"
        if img_path.is_file():
            _edit_jsonl(img_path, lambda obj: not (obj.get("image") in images and parse_timestamp(obj["ts"]) > after))
        hosts = set()
        for img in vm["images"]:
            hosts.update(img["placement"].values())
        for host in sorted(hosts):
            path = corpus_dir / "cephfile" / host / "blocks.csv"
            if path.is_file():
                _edit_csv(path, lambda row: not (row.get("prefix") in prefixes and parse_timestamp(row["ts"]) > after))
