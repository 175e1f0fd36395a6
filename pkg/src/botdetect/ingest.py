"""Zeek/Bro ``conn.log`` parsing and scenario ground-truth manifests."""

from __future__ import annotations

import io
import ipaddress
import logging
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

logger = logging.getLogger(__name__)

PROTOCOLS = ("tcp", "udp", "icmp")
CONN_STATES = (
    "S0", "S1", "SF", "REJ", "S2", "S3", "RSTO",
    "RSTR", "RSTOS0", "RSTRH", "SH", "SHR", "OTH",
)
COUNTER_FIELDS = ("orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts")
OPTIONAL_FIELDS = ("duration",) + COUNTER_FIELDS + ("conn_state",)
MANDATORY_FIELDS = ("ts", "orig_h", "orig_p", "dest_h", "dest_p", "proto")

# Zeek column name -> ConnRecord attribute.  The ``id.dest_*`` aliases accept
# logs written with the older naming.
DEFAULT_FIELD_MAP: dict[str, str] = {
    "ts": "ts",
    "id.orig_h": "orig_h",
    "id.orig_p": "orig_p",
    "id.resp_h": "dest_h",
    "id.resp_p": "dest_p",
    "id.dest_h": "dest_h",
    "id.dest_p": "dest_p",
    "proto": "proto",
    "duration": "duration",
    "orig_bytes": "orig_bytes",
    "resp_bytes": "resp_bytes",
    "orig_pkts": "orig_pkts",
    "resp_pkts": "resp_pkts",
    "conn_state": "conn_state",
}

# Standard conn.log columns that carry nothing we model; skipped silently.
KNOWN_UNUSED_COLUMNS = frozenset({
    "uid", "service", "local_orig", "local_resp", "missed_bytes", "history",
    "orig_ip_bytes", "resp_ip_bytes", "tunnel_parents", "orig_l2_addr",
    "resp_l2_addr", "vlan", "inner_vlan", "community_id", "ip_proto",
})

# Column order used when writing logs.
DEFAULT_COLUMNS = (
    "ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto",
    "duration", "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts",
    "conn_state",
)

UNSET = "-"
EMPTY = "(empty)"


class ConnLogError(ValueError):
    """A conn.log line or header could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None, text: str | None = None):
        self.line_no = line_no
        self.text = text
        if line_no is not None:
            message = f"line {line_no}: {message}: {text!r}"
        super().__init__(message)


class ManifestError(ValueError):
    """A scenario manifest is missing keys or holds invalid values."""


@dataclass(frozen=True, slots=True)
class ConnRecord:
    """One row of a connection log.

    Missing counters and duration are stored as zero; ``missing`` keeps the
    names of the fields that were unset in the source line.
    """

    ts: float
    orig_h: str
    orig_p: int
    dest_h: str
    dest_p: int
    proto: str
    duration: float = 0.0
    orig_bytes: int = 0
    resp_bytes: int = 0
    orig_pkts: int = 0
    resp_pkts: int = 0
    conn_state: str | None = None
    missing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not math.isfinite(self.ts) or self.ts < 0:
            raise ValueError(f"ts must be finite and >= 0, got {self.ts}")
        for name in ("orig_p", "dest_p"):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise ValueError(f"{name} out of range: {port}")
        if self.proto not in PROTOCOLS:
            raise ValueError(f"unknown proto {self.proto!r}")
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ValueError(f"duration must be finite and >= 0, got {self.duration}")
        for name in COUNTER_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.conn_state is not None and self.conn_state not in CONN_STATES:
            raise ValueError(f"unknown conn_state {self.conn_state!r}")

    def is_missing(self, name: str) -> bool:
        return name in self.missing


@dataclass
class ConnLog(Sequence):
    """Parsed records plus header diagnostics."""

    records: list[ConnRecord]
    columns: tuple[str, ...] = ()
    unknown_columns: tuple[str, ...] = ()

    @property
    def n_unknown_columns(self) -> int:
        return len(self.unknown_columns)

    def __getitem__(self, i):
        return self.records[i]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ConnRecord]:
        return iter(self.records)


def _parse_ip(value: str) -> str:
    return str(ipaddress.ip_address(value))


def _parse_port(value: str) -> int:
    port = int(value)
    if not 0 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    return port


def _parse_count(value: str) -> int:
    n = int(value)
    if n < 0:
        raise ValueError(f"negative counter: {n}")
    return n


def _parse_seconds(value: str) -> float:
    x = float(value)
    if not math.isfinite(x) or x < 0:
        raise ValueError(f"invalid seconds value: {value}")
    return x


_CONVERTERS = {
    "ts": _parse_seconds,
    "orig_h": _parse_ip,
    "dest_h": _parse_ip,
    "orig_p": _parse_port,
    "dest_p": _parse_port,
    "proto": str.lower,
    "duration": _parse_seconds,
    "orig_bytes": _parse_count,
    "resp_bytes": _parse_count,
    "orig_pkts": _parse_count,
    "resp_pkts": _parse_count,
    "conn_state": str,
}


def _decode_separator(value: str) -> str:
    if value.startswith("\\x"):
        return chr(int(value[2:], 16))
    if len(value) == 1:
        return value
    raise ConnLogError(f"invalid #separator directive {value!r}")


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        yield from source.splitlines()
        return
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line.rstrip("\r\n")


def _bind_columns(names: Sequence[str], field_map: Mapping[str, str]):
    bound: list[tuple[int, str]] = []
    unknown: list[str] = []
    seen: set[str] = set()
    for i, name in enumerate(names):
        target = field_map.get(name)
        if target is None:
            if name not in KNOWN_UNUSED_COLUMNS:
                unknown.append(name)
            continue
        if target in seen:
            raise ConnLogError(f"column {name!r} maps to {target!r}, which is already bound")
        seen.add(target)
        bound.append((i, target))
    absent = [f for f in MANDATORY_FIELDS if f not in seen]
    if absent:
        raise ConnLogError(f"#fields header lacks mandatory columns: {', '.join(absent)}")
    return bound, unknown


def parse_conn_log(source, field_map: Mapping[str, str] | None = None) -> ConnLog:
    """Parse a Zeek tab-separated connection log.

    Parameters
    ----------
    source : bytes, str, or iterable of lines
        Log contents. A ``#fields`` header must precede the first data line.
    field_map : mapping, optional
        Header column name to ConnRecord attribute. Defaults to
        :data:`DEFAULT_FIELD_MAP`.

    Returns
    -------
    ConnLog
        Records in file order. Unknown header columns are skipped and listed
        in ``unknown_columns``.
    """
    field_map = DEFAULT_FIELD_MAP if field_map is None else field_map
    sep = "\t"
    unset, empty = UNSET, EMPTY
    bound = None
    columns: tuple[str, ...] = ()
    unknown: list[str] = []
    records: list[ConnRecord] = []

    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#separator"):
                sep = _decode_separator(line[len("#separator"):].strip())
                continue
            directive, _, rest = line[1:].partition(sep)
            if directive == "unset_field":
                unset = rest
            elif directive == "empty_field":
                empty = rest
            elif directive == "fields":
                columns = tuple(rest.split(sep))
                bound, unknown = _bind_columns(columns, field_map)
                if unknown:
                    logger.warning("ignoring %d unknown conn.log column(s): %s",
                                   len(unknown), ", ".join(unknown))
            continue
        if bound is None:
            raise ConnLogError("data line before #fields header", line_no, line)
        parts = line.split(sep)
        if len(parts) != len(columns):
            raise ConnLogError(
                f"expected {len(columns)} columns, found {len(parts)}", line_no, line)
        values = {}
        missing = []
        for i, name in bound:
            raw = parts[i]
            if raw == unset or raw == empty or raw == "":
                if name in MANDATORY_FIELDS:
                    raise ConnLogError(f"mandatory field {name} is unset", line_no, line)
                missing.append(name)
                continue
            try:
                values[name] = _CONVERTERS[name](raw)
            except ValueError as exc:
                raise ConnLogError(f"bad {name} value ({exc})", line_no, line) from None
        for name in OPTIONAL_FIELDS:
            if name not in values and name not in missing:
                missing.append(name)
        try:
            records.append(ConnRecord(**values, missing=frozenset(missing)))
        except ValueError as exc:
            raise ConnLogError(str(exc), line_no, line) from None

    if bound is None:
        raise ConnLogError("no #fields header found")
    return ConnLog(records, columns, tuple(unknown))


def read_conn_log(path: Union[str, os.PathLike], field_map=None) -> ConnLog:
    with open(path, "rb") as fh:
        return parse_conn_log(fh, field_map)


def _format_float(x: float) -> str:
    return repr(float(x))


def format_record(record: ConnRecord, columns: Sequence[str] = DEFAULT_COLUMNS,
                  field_map: Mapping[str, str] | None = None, uid: str = UNSET) -> str:
    """Render one record as a TSV line (no trailing newline)."""
    field_map = DEFAULT_FIELD_MAP if field_map is None else field_map
    out = []
    for col in columns:
        name = field_map.get(col)
        if name is None:
            out.append(uid if col == "uid" else UNSET)
            continue
        if name in record.missing:
            out.append(UNSET)
            continue
        value = getattr(record, name)
        if value is None:
            out.append(UNSET)
        elif name in ("ts", "duration"):
            out.append(_format_float(value))
        else:
            out.append(str(value))
    return "\t".join(out)


def write_conn_log(records: Iterable[ConnRecord], fh: IO[str] | None = None,
                   columns: Sequence[str] = DEFAULT_COLUMNS,
                   field_map: Mapping[str, str] | None = None,
                   path: str = "conn") -> str | None:
    """Write records as a Zeek TSV log; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    buf.write("#separator \\x09\n")
    buf.write("#set_separator\t,\n")
    buf.write(f"#empty_field\t{EMPTY}\n")
    buf.write(f"#unset_field\t{UNSET}\n")
    buf.write(f"#path\t{path}\n")
    buf.write("#fields\t" + "\t".join(columns) + "\n")
    for i, rec in enumerate(records):
        buf.write(format_record(rec, columns, field_map, uid=f"C{i}") + "\n")
    if fh is None:
        return buf.getvalue()
    return None


# --------------------------------------------------------------------------
# Scenario manifests

@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    botnet_ips: frozenset
    internal_cidr: ipaddress.IPv4Network | ipaddress.IPv6Network
    t_start: float
    t_end: float
    victim_ips: frozenset = frozenset()
    attack_name: str = ""

    def __post_init__(self):
        if not self.botnet_ips:
            raise ManifestError("botnet_ips must not be empty")
        if not self.t_start < self.t_end:
            raise ManifestError(
                f"invalid time bounds: t_start={self.t_start} >= t_end={self.t_end}")

    def is_internal(self, ip: str) -> bool:
        return ipaddress.ip_address(ip) in self.internal_cidr

    def contains_time(self, ts: float) -> bool:
        return self.t_start <= ts < self.t_end


_MANIFEST_REQUIRED = ("scenario_id", "botnet_ips", "internal_cidr", "t_start", "t_end")
_MANIFEST_KEYS = _MANIFEST_REQUIRED + ("victim_ips", "attack_name")


def _parse_ip_list(key: str, value: str) -> frozenset:
    items = [v.strip() for v in value.split(",") if v.strip()]
    try:
        return frozenset(_parse_ip(v) for v in items)
    except ValueError as exc:
        raise ManifestError(f"{key}: {exc}") from None


def parse_scenario_spec(text: str) -> ScenarioSpec:
    """Parse a ``key: value`` manifest (``=`` also accepted; ``#`` comments)."""
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        positions = [p for p in (stripped.find(":"), stripped.find("=")) if p > 0]
        if not positions:
            raise ManifestError(f"line {n}: expected 'key: value', got {line!r}")
        cut = min(positions)
        key, value = stripped[:cut].strip(), stripped[cut + 1:].strip()
        if key not in _MANIFEST_KEYS:
            raise ManifestError(f"line {n}: unknown key {key!r}")
        if key in raw:
            raise ManifestError(f"line {n}: duplicate key {key!r}")
        raw[key] = value

    absent = [k for k in _MANIFEST_REQUIRED if k not in raw]
    if absent:
        raise ManifestError(f"missing required key(s): {', '.join(absent)}")
    try:
        cidr = ipaddress.ip_network(raw["internal_cidr"], strict=False)
    except ValueError as exc:
        raise ManifestError(f"internal_cidr: {exc}") from None
    try:
        t_start, t_end = float(raw["t_start"]), float(raw["t_end"])
    except ValueError as exc:
        raise ManifestError(f"time bounds: {exc}") from None
    if not (math.isfinite(t_start) and math.isfinite(t_end)):
        raise ManifestError("time bounds must be finite")
    return ScenarioSpec(
        scenario_id=raw["scenario_id"],
        botnet_ips=_parse_ip_list("botnet_ips", raw["botnet_ips"]),
        victim_ips=_parse_ip_list("victim_ips", raw.get("victim_ips", "")),
        internal_cidr=cidr,
        t_start=t_start,
        t_end=t_end,
        attack_name=raw.get("attack_name", ""),
    )


def read_scenario_spec(path: Union[str, os.PathLike]) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_spec(fh.read())


def format_scenario_spec(spec: ScenarioSpec) -> str:
    lines = [
        f"scenario_id: {spec.scenario_id}",
        f"attack_name: {spec.attack_name}",
        f"botnet_ips: {','.join(sorted(spec.botnet_ips))}",
    ]
    if spec.victim_ips:
        lines.append(f"victim_ips: {','.join(sorted(spec.victim_ips))}")
    lines += [
        f"internal_cidr: {spec.internal_cidr}",
        f"t_start: {_format_float(spec.t_start)}",
        f"t_end: {_format_float(spec.t_end)}",
    ]
    return "\n".join(lines) + "\n"


__all__ = [
    "CONN_STATES", "PROTOCOLS", "DEFAULT_FIELD_MAP", "DEFAULT_COLUMNS",
    "ConnRecord", "ConnLog", "ConnLogError", "ManifestError", "ScenarioSpec",
    "parse_conn_log", "read_conn_log", "write_conn_log", "format_record",
    "parse_scenario_spec", "read_scenario_spec", "format_scenario_spec",
]
