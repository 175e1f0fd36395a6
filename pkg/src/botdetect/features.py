"""Connection-level, per-port traffic and per-port inter-arrival features.

Aggregated rows are keyed by (internal host, time window). Every row has the
same columns no matter what traffic the host produced: statistics are grouped
into a fixed list of port buckets, with empty buckets filled with zeros.
"""

from __future__ import annotations

import ipaddress
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .ingest import CONN_STATES, PROTOCOLS, ConnRecord, ScenarioSpec
from .labeling import entity_label, label_record, label_window, require_victims
from .matrix import FeatureMatrix

REPRESENTATIONS = ("connection", "traffic", "traffic+temporal")
DIRECTIONS = ("out", "in")
_DIRECTION_ALIASES = {"out": "out", "outgoing": "out", "in": "in", "incoming": "in"}

# Per-bucket traffic statistics, in column order.
_SUMMED = ("duration", "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts")
TRAFFIC_STATS = ("distinct_ips", "distinct_subnets") + tuple(
    f"{f}.{op}" for f in _SUMMED for op in ("sum", "min", "max"))
GLOBAL_STATS = ("tcp_conns", "udp_conns", "icmp_conns",
                "distinct_src_ports", "distinct_external_ips", "distinct_dest_ports")
TEMPORAL_STATS = ("iat.mean", "iat.std", "iat.median", "iat.min", "iat.max")
CONNECTION_NUMERIC = ("ts", "orig_p", "dest_p", "duration",
                      "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts")


class FeaturizeError(ValueError):
    pass


# --------------------------------------------------------------------------
# Windows

@dataclass(frozen=True)
class WindowConfig:
    window_len: float = 30.0
    t0: float = 0.0

    def __post_init__(self):
        if not (self.window_len > 0 and math.isfinite(self.window_len)):
            raise FeaturizeError(f"window_len must be > 0, got {self.window_len}")


def assign_window(ts: float, cfg: WindowConfig) -> int:
    """Index of the half-open window ``[t0 + kT, t0 + (k+1)T)`` holding ``ts``."""
    if ts < cfg.t0:
        raise FeaturizeError(f"record precedes scenario start: ts={ts} < t0={cfg.t0}")
    return int(math.floor((ts - cfg.t0) / cfg.window_len))


# --------------------------------------------------------------------------
# Port buckets

@dataclass(frozen=True)
class PortBucket:
    name: str
    members: frozenset  # of (proto, port)


@dataclass(frozen=True)
class PortBucketConfig:
    """Ordered, disjoint port buckets plus a catch-all.

    Bucket order defines column order, so changing it changes ``version``.
    """

    buckets: tuple[PortBucket, ...]
    other: str = "Other"
    version: str = "1"
    _lookup: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        lookup = {}
        names = set()
        for b in self.buckets:
            if b.name in names or b.name == self.other:
                raise FeaturizeError(f"duplicate bucket name {b.name!r}")
            names.add(b.name)
            for member in b.members:
                if member in lookup:
                    raise FeaturizeError(
                        f"{member} belongs to both {lookup[member]!r} and {b.name!r}")
                lookup[member] = b.name
        object.__setattr__(self, "_lookup", lookup)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.buckets) + (self.other,)

    def bucket_of(self, proto: str, port: int) -> str:
        return self._lookup.get((proto, port), self.other)

    def index_map(self) -> dict:
        idx = {name: i for i, name in enumerate(self.names)}
        return {member: idx[name] for member, name in self._lookup.items()}

    @classmethod
    def from_ports(cls, named_ports: Sequence[tuple[str, int]],
                   icmp_types: Sequence[tuple[str, int]] = (), **kw) -> "PortBucketConfig":
        """TCP and UDP share a bucket per port; ICMP buckets are keyed by type."""
        buckets = [PortBucket(name, frozenset({("tcp", p), ("udp", p)}))
                   for name, p in named_ports]
        buckets += [PortBucket(name, frozenset({("icmp", t)})) for name, t in icmp_types]
        return cls(tuple(buckets), **kw)


APPLICATION_PORTS = (
    ("ftp-21", 21), ("ssh-22", 22), ("telnet-23", 23), ("smtp-25", 25),
    ("dns-53", 53), ("http-80", 80), ("pop3-110", 110), ("ntp-123", 123),
    ("msrpc-135", 135), ("netbios-138", 138), ("netbios-139", 139),
    ("imap-143", 143), ("snmp-161", 161), ("https-443", 443), ("smb-445", 445),
    ("imaps-993", 993), ("pop3s-995", 995), ("rdp-3389", 3389),
)
ICMP_TYPES = (("icmp-3", 3), ("icmp-8", 8))

DEFAULT_BUCKETS = PortBucketConfig.from_ports(APPLICATION_PORTS, ICMP_TYPES)


def bucket_port(proto: str, port: int, cfg: PortBucketConfig = DEFAULT_BUCKETS) -> str:
    return cfg.bucket_of(proto, port)


def service_port(record: ConnRecord) -> int:
    """Port used for bucketing; ICMP records carry the message type in orig_p."""
    return record.orig_p if record.proto == "icmp" else record.dest_p


def record_bucket(record: ConnRecord, cfg: PortBucketConfig = DEFAULT_BUCKETS) -> str:
    return cfg.bucket_of(record.proto, service_port(record))


def subnet24(ip: str) -> str:
    addr = ipaddress.ip_address(ip)
    prefix = 24 if addr.version == 4 else 120
    return str(ipaddress.ip_network(f"{ip}/{prefix}", strict=False))


# --------------------------------------------------------------------------
# Schemas

@dataclass(frozen=True)
class ConnectionSchema:
    numeric: tuple[str, ...] = CONNECTION_NUMERIC
    one_hot_proto: bool = True
    one_hot_state: bool = True

    def columns(self) -> tuple[str, ...]:
        cols = list(self.numeric)
        if self.one_hot_proto:
            cols += [f"proto.{p}" for p in PROTOCOLS]
        if self.one_hot_state:
            cols += [f"conn_state.{s}" for s in CONN_STATES]
        return tuple(cols)


def traffic_columns(buckets: PortBucketConfig = DEFAULT_BUCKETS) -> tuple[str, ...]:
    cols = [f"{d}.{b}.{s}" for d in DIRECTIONS for b in buckets.names for s in TRAFFIC_STATS]
    cols += [f"{d}.global.{s}" for d in DIRECTIONS for s in GLOBAL_STATS]
    return tuple(cols)


def temporal_columns(buckets: PortBucketConfig = DEFAULT_BUCKETS) -> tuple[str, ...]:
    return tuple(f"{d}.{b}.{s}" for d in DIRECTIONS for b in buckets.names
                 for s in TEMPORAL_STATS)


def feature_schema(representation: str, buckets: PortBucketConfig = DEFAULT_BUCKETS,
                   connection_schema: ConnectionSchema | None = None) -> tuple[str, ...]:
    """Column names for a representation; depends only on configuration."""
    if representation == "connection":
        return (connection_schema or ConnectionSchema()).columns()
    if representation == "traffic":
        return traffic_columns(buckets)
    if representation == "traffic+temporal":
        return traffic_columns(buckets) + temporal_columns(buckets)
    raise FeaturizeError(f"unknown representation {representation!r}; "
                         f"expected one of {REPRESENTATIONS}")


_STAT_TEXT = {
    "distinct_ips": "distinct peer IPs",
    "distinct_subnets": "distinct peer /24 subnets",
    "tcp_conns": "TCP connections", "udp_conns": "UDP connections",
    "icmp_conns": "ICMP connections", "distinct_src_ports": "distinct source ports",
    "distinct_external_ips": "distinct external peer IPs",
    "distinct_dest_ports": "distinct destination ports",
    "iat.mean": "mean inter-arrival time", "iat.std": "std. dev. of inter-arrival time",
    "iat.median": "median inter-arrival time", "iat.min": "min inter-arrival time",
    "iat.max": "max inter-arrival time",
}


def describe_column(name: str) -> str:
    """Human-readable description of an aggregated column name."""
    parts = name.split(".", 2)
    if len(parts) < 3 or parts[0] not in DIRECTIONS:
        return name
    direction = "outgoing" if parts[0] == "out" else "incoming"
    bucket, stat = parts[1], parts[2]
    if stat in _STAT_TEXT:
        text = _STAT_TEXT[stat]
    else:
        fld, _, op = stat.rpartition(".")
        text = {"sum": "total", "min": "min", "max": "max"}.get(op, op) + " " + fld
    where = "all ports" if bucket == "global" else f"port {bucket}"
    return f"{text}, {direction}, {where}"


# --------------------------------------------------------------------------
# Single-record and single-group features

def featurize_connection(record: ConnRecord,
                         schema: ConnectionSchema | None = None) -> np.ndarray:
    schema = schema or ConnectionSchema()
    vec = [float(getattr(record, f)) for f in schema.numeric]
    if schema.one_hot_proto:
        vec += [1.0 if record.proto == p else 0.0 for p in PROTOCOLS]
    if schema.one_hot_state:
        vec += [1.0 if record.conn_state == s else 0.0 for s in CONN_STATES]
    return np.array(vec, dtype=np.float64)


def _direction(direction: str) -> str:
    try:
        return _DIRECTION_ALIASES[direction]
    except KeyError:
        raise FeaturizeError(f"unknown direction {direction!r}") from None


def _split_direction(records: Iterable[ConnRecord], entity: str, direction: str):
    """Records where ``entity`` plays the requested role, plus each record's peer."""
    out = []
    for r in records:
        if r.orig_h != entity and r.dest_h != entity:
            raise FeaturizeError(f"record {r.orig_h}->{r.dest_h} does not involve {entity}")
        if direction == "out" and r.orig_h == entity:
            out.append((r, r.dest_h))
        elif direction == "in" and r.dest_h == entity:
            out.append((r, r.orig_h))
    return out


def _traffic_block(pairs, n_buckets: int, bucket_index, is_external) -> tuple[list, list]:
    """Per-bucket stats (flattened) and global stats for one direction."""
    groups = defaultdict(list)
    for rec, peer in pairs:
        groups[bucket_index(rec)].append((rec, peer))
    block = [0.0] * (n_buckets * len(TRAFFIC_STATS))
    for b, members in groups.items():
        base = b * len(TRAFFIC_STATS)
        block[base] = float(len({peer for _, peer in members}))
        block[base + 1] = float(len({_subnet_key(peer) for _, peer in members}))
        off = base + 2
        for fld in _SUMMED:
            vals = [getattr(rec, fld) for rec, _ in members]
            total = 0
            for v in vals:
                total += v
            block[off] = float(total)
            block[off + 1] = float(min(vals))
            block[off + 2] = float(max(vals))
            off += 3
    counts = {p: 0 for p in PROTOCOLS}
    for rec, _ in pairs:
        counts[rec.proto] += 1
    glob = [float(counts[p]) for p in PROTOCOLS] + [
        float(len({rec.orig_p for rec, _ in pairs})),
        float(len({peer for _, peer in pairs if is_external(peer)})),
        float(len({rec.dest_p for rec, _ in pairs})),
    ]
    return block, glob


def gap_statistics(timestamps: Sequence[float]) -> list[float]:
    """Mean, population std, median, min and max of consecutive gaps.

    Fewer than two timestamps give all zeros.
    """
    if len(timestamps) < 2:
        return [0.0] * len(TEMPORAL_STATS)
    ts = sorted(timestamps)
    gaps = [b - a for a, b in zip(ts, ts[1:])]
    n = len(gaps)
    total = 0.0
    for g in gaps:
        total += g
    mean = total / n
    sq = 0.0
    for g in gaps:
        sq += (g - mean) ** 2
    std = math.sqrt(sq / n)
    ordered = sorted(gaps)
    mid = n // 2
    median = ordered[mid] if n % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])
    return [mean, std, median, ordered[0], ordered[-1]]


def _temporal_block(pairs, n_buckets: int, bucket_index) -> list:
    groups = defaultdict(list)
    for rec, _ in pairs:
        groups[bucket_index(rec)].append(rec.ts)
    block = [0.0] * (n_buckets * len(TEMPORAL_STATS))
    for b, ts in groups.items():
        base = b * len(TEMPORAL_STATS)
        block[base:base + len(TEMPORAL_STATS)] = gap_statistics(ts)
    return block


_SUBNET_CACHE: dict[str, str] = {}


def _subnet_key(ip: str) -> str:
    key = _SUBNET_CACHE.get(ip)
    if key is None:
        if len(_SUBNET_CACHE) > 1_000_000:
            _SUBNET_CACHE.clear()
        key = _SUBNET_CACHE[ip] = subnet24(ip)
    return key


def _make_bucket_index(cfg: PortBucketConfig):
    lookup = cfg.index_map()
    other = len(cfg.names) - 1

    def index(rec: ConnRecord) -> int:
        return lookup.get((rec.proto, service_port(rec)), other)
    return index


def _internal_predicate(internal_cidr):
    if internal_cidr is None:
        return lambda ip: False
    net = ipaddress.ip_network(internal_cidr, strict=False) \
        if not isinstance(internal_cidr, (ipaddress.IPv4Network, ipaddress.IPv6Network)) \
        else internal_cidr
    cache: dict[str, bool] = {}

    def inside(ip: str) -> bool:
        hit = cache.get(ip)
        if hit is None:
            hit = cache[ip] = ipaddress.ip_address(ip) in net
        return hit
    return inside


def aggregate_traffic(records: Sequence[ConnRecord], entity: str, direction: str,
                      cfg: PortBucketConfig = DEFAULT_BUCKETS,
                      internal_cidr=None) -> dict[str, float]:
    """Per-port traffic statistics of one host in one window.

    Parameters
    ----------
    records : sequence of ConnRecord
        Records of one (host, window) group; each must involve ``entity``.
    entity : str
        The internal host. ``"out"`` selects records it originated, ``"in"``
        records it received.
    internal_cidr : network, optional
        Peers outside it count toward ``distinct_external_ips``. When omitted,
        every peer is treated as external.
    """
    d = _direction(direction)
    pairs = _split_direction(records, entity, d)
    internal = _internal_predicate(internal_cidr)
    block, glob = _traffic_block(pairs, len(cfg.names), _make_bucket_index(cfg),
                                 lambda ip: not internal(ip))
    names = [f"{d}.{b}.{s}" for b in cfg.names for s in TRAFFIC_STATS]
    names += [f"{d}.global.{s}" for s in GLOBAL_STATS]
    return dict(zip(names, block + glob))


def aggregate_temporal(records: Sequence[ConnRecord], entity: str, direction: str,
                       cfg: PortBucketConfig = DEFAULT_BUCKETS) -> dict[str, float]:
    """Inter-arrival statistics per port bucket for one host, window and direction."""
    d = _direction(direction)
    pairs = _split_direction(records, entity, d)
    block = _temporal_block(pairs, len(cfg.names), _make_bucket_index(cfg))
    names = [f"{d}.{b}.{s}" for b in cfg.names for s in TEMPORAL_STATS]
    return dict(zip(names, block))


# --------------------------------------------------------------------------
# Whole scenarios

def _ip_sort_key(ip: str):
    addr = ipaddress.ip_address(ip)
    return (addr.version, int(addr))


def _resolve_window(window, spec: ScenarioSpec) -> WindowConfig:
    if window is None:
        return WindowConfig(30.0, spec.t_start)
    if isinstance(window, WindowConfig):
        return window
    return WindowConfig(float(window), spec.t_start)


def group_by_entity_window(records: Iterable[ConnRecord], spec: ScenarioSpec,
                           window: WindowConfig):
    """Map ``(internal ip, window index)`` to the records involving that host.

    Records outside ``[t_start, t_end)`` are skipped.
    """
    internal = _internal_predicate(spec.internal_cidr)
    groups: dict[tuple[str, int], list[ConnRecord]] = defaultdict(list)
    for rec in records:
        if not spec.contains_time(rec.ts):
            continue
        w = assign_window(rec.ts, window)
        if internal(rec.orig_h):
            groups[(rec.orig_h, w)].append(rec)
        if rec.dest_h != rec.orig_h and internal(rec.dest_h):
            groups[(rec.dest_h, w)].append(rec)
    return groups


def featurize_dataset(records: Iterable[ConnRecord], spec: ScenarioSpec,
                      representation: str = "traffic", window=None,
                      buckets: PortBucketConfig = DEFAULT_BUCKETS,
                      labeling: str = "coarse",
                      connection_schema: ConnectionSchema | None = None,
                      origin_only: bool = False) -> FeatureMatrix:
    """Build a labeled feature matrix for one scenario.

    Connection rows follow file order, one per record touching an internal
    host. Aggregated rows are sorted by (host, window) and hold the outgoing
    bucket block, the incoming bucket block, per-direction global statistics
    and, for ``"traffic+temporal"``, the inter-arrival blocks.

    Parameters
    ----------
    window : float or WindowConfig, optional
        Window length in seconds (anchored at ``spec.t_start``); default 30.
    labeling : {"coarse", "fine"}
    """
    columns = feature_schema(representation, buckets, connection_schema)
    cfg = _resolve_window(window, spec)
    if labeling == "fine":
        require_victims(spec)
    sid = spec.scenario_id
    internal = _internal_predicate(spec.internal_cidr)

    if representation == "connection":
        schema = connection_schema or ConnectionSchema()
        rows, keys, labels = [], [], []
        for rec in records:
            if not spec.contains_time(rec.ts):
                continue
            if internal(rec.orig_h):
                ip = rec.orig_h
            elif internal(rec.dest_h):
                ip = rec.dest_h
            else:
                continue
            rows.append(featurize_connection(rec, schema))
            keys.append((sid, ip, assign_window(rec.ts, cfg)))
            labels.append(int(label_record(rec, spec, labeling, origin_only)))
        X = np.vstack(rows) if rows else np.empty((0, len(columns)))
        return FeatureMatrix(columns, X, np.array(labels, dtype=np.int8), keys)

    temporal = representation == "traffic+temporal"
    groups = group_by_entity_window(records, spec, cfg)
    order = sorted(groups, key=lambda k: (_ip_sort_key(k[0]), k[1]))
    n_buckets = len(buckets.names)
    bucket_index = _make_bucket_index(buckets)
    external = lambda ip: not internal(ip)  # noqa: E731
    label_cache: dict[int, int] = {}

    X = np.zeros((len(order), len(columns)), dtype=np.float64)
    y = np.zeros(len(order), dtype=np.int8)
    keys = []
    for i, (ip, w) in enumerate(order):
        recs = groups[(ip, w)]
        out_pairs = [(r, r.dest_h) for r in recs if r.orig_h == ip]
        in_pairs = [(r, r.orig_h) for r in recs if r.dest_h == ip]
        out_block, out_glob = _traffic_block(out_pairs, n_buckets, bucket_index, external)
        in_block, in_glob = _traffic_block(in_pairs, n_buckets, bucket_index, external)
        row = out_block + in_block + out_glob + in_glob
        if temporal:
            row += _temporal_block(out_pairs, n_buckets, bucket_index)
            row += _temporal_block(in_pairs, n_buckets, bucket_index)
        X[i] = row
        record_labels = []
        for r in recs:
            lab = label_cache.get(id(r))
            if lab is None:
                lab = label_cache[id(r)] = int(label_record(r, spec, labeling, origin_only))
            record_labels.append(entity_label(lab, ip, spec))
        y[i] = label_window(record_labels)
        keys.append((sid, ip, w))
    return FeatureMatrix(columns, X, y, keys)


class WindowFeaturizer(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper around :func:`featurize_dataset`.

    ``transform`` takes a ``(records, ScenarioSpec)`` pair, or a list of such
    pairs, and returns a FeatureMatrix (concatenated for lists). Fitting only
    fixes the column schema, which never depends on data.
    """

    def __init__(self, representation="traffic", window_len=30.0, buckets=None,
                 labeling="coarse"):
        self.representation = representation
        self.window_len = window_len
        self.buckets = buckets
        self.labeling = labeling

    def fit(self, X=None, y=None):
        self.columns_ = feature_schema(self.representation, self.buckets or DEFAULT_BUCKETS)
        self.n_features_out_ = len(self.columns_)
        return self

    def transform(self, X) -> FeatureMatrix:
        if not hasattr(self, "columns_"):
            self.fit()
        if isinstance(X, tuple) and len(X) == 2 and isinstance(X[1], ScenarioSpec):
            X = [X]
        parts = [featurize_dataset(records, spec, self.representation,
                                   WindowConfig(self.window_len, spec.t_start),
                                   self.buckets or DEFAULT_BUCKETS, self.labeling)
                 for records, spec in X]
        return FeatureMatrix.concat(parts)

    def get_feature_names_out(self, input_features=None):
        if not hasattr(self, "columns_"):
            self.fit()
        return np.array(self.columns_, dtype=object)


__all__ = [
    "REPRESENTATIONS", "WindowConfig", "PortBucket", "PortBucketConfig", "DEFAULT_BUCKETS",
    "ConnectionSchema", "assign_window", "bucket_port", "record_bucket", "service_port",
    "featurize_connection", "aggregate_traffic", "aggregate_temporal", "gap_statistics",
    "feature_schema", "featurize_dataset", "group_by_entity_window", "describe_column",
    "WindowFeaturizer",
]
