"""Deterministic synthetic botnet scenarios in Zeek conn.log form.

Two scenario kinds:

``spam``
    Bots run spam / click-fraud campaigns: minutes of activity separated by
    idle minutes. While active, a bot emits a burst of connections to random
    destinations spread over many /24 networks every 12 to 24 seconds. Every
    record (bot or background) draws its service and byte, packet, duration
    and state fields from one shared sampler, so a single record says nothing
    about its sender; only per-window aggregates (destination spread,
    connection count, burst timing) separate bots from background hosts.

``ddos``
    Bots behave like busy background hosts, and during attack episodes also
    flood one external victim with identical UDP/161 and ICMP echo records.
    Coarse labels mark every bot window malicious; fine labels only the
    windows holding flood records.

Background traffic has four parts. Ordinary hosts emit Poisson traffic to a
few favourite servers. Two internal servers receive sessions from outside.
NAT gateways carry many users' traffic at high rates to wide destination
pools, so bot windows sit between ordinary hosts and gateways on most volume
features. Crawler hosts load pages in short bursts to random destinations,
like bots but sparser; over long windows their totals approach those of
duty-cycled bots.

The number of ordinary hosts is derived from the requested malicious to
benign row ratio at 30-second windows, counted on the generated bot and
fixed-host traffic.
"""

from __future__ import annotations

import ipaddress
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.stats import norm

from .ingest import ConnRecord, ScenarioSpec, format_scenario_spec, write_conn_log

KINDS = ("spam", "ddos")
REFERENCE_WINDOW = 30.0
INTERNAL_CIDR = "147.32.0.0/16"
# Infected hosts listed for the CTU-13 captures; reused here as bot addresses.
BOT_ADDRESSES = (
    "147.32.84.165", "147.32.84.191", "147.32.84.192", "147.32.84.193",
    "147.32.84.204", "147.32.84.205", "147.32.84.206", "147.32.84.207",
    "147.32.84.208", "147.32.84.209",
)
INTERNAL_SERVERS = ("147.32.80.9", "147.32.80.13")
GATEWAYS = tuple(f"147.32.80.{20 + i}" for i in range(8))
CRAWLERS = tuple(f"147.32.80.{40 + i}" for i in range(8))
RESOLVERS = ("8.8.8.8", "8.8.4.4", "147.32.80.13")
MAX_BACKGROUND_HOSTS = 8000

# (name, proto, dest port, share). Shared by every host so that single-record
# marginals carry no class information.
SERVICES = (
    ("http", "tcp", 80, 0.34),
    ("https", "tcp", 443, 0.28),
    ("dns", "udp", 53, 0.14),
    ("smtp", "tcp", 25, 0.14),
    ("ntp", "udp", 123, 0.03),
    ("ssh", "tcp", 22, 0.02),
    ("imaps", "tcp", 993, 0.02),
    ("high", "tcp", None, 0.03),
)
_SERVICE_P = np.array([s[3] for s in SERVICES]) / sum(s[3] for s in SERVICES)


class SynthError(ValueError):
    pass


def _check_range(name: str, pair, positive: bool = True) -> None:
    lo, hi = pair
    if lo > hi or (positive and lo <= 0):
        raise SynthError(f"{name} must be an increasing pair of positive numbers, got {pair}")


@dataclass(frozen=True)
class SynthParams:
    """Generator settings for one scenario.

    ``imbalance`` is the target malicious:benign row ratio of the traffic
    representation at 30-second windows under coarse labels (every bot
    window malicious). When ``n_background_hosts`` is None the ordinary host
    count is derived from that target; when given, the target is checked for
    feasibility.
    """

    kind: str = "spam"
    scenario_id: str = "1"
    duration_s: float = 1800.0
    n_bots: int = 2
    imbalance: float = 1 / 134
    n_background_hosts: int | None = None
    seed: int = 0
    t_start: float = 1313388000.0
    # Ordinary host connection rates: log-normal, median and log-sd.
    bg_rate_median: float = 1 / 45
    bg_rate_sigma: float = 0.9
    n_gateways: int = 3
    gateway_rate: tuple[float, float] = (2.5, 5.0)
    n_crawlers: int = 4
    crawler_period: tuple[float, float] = (28.0, 45.0)
    crawler_burst: tuple[int, int] = (8, 14)
    # spam
    burst_period: tuple[float, float] = (12.0, 24.0)
    burst_size: tuple[int, int] = (18, 30)
    burst_gap: tuple[float, float] = (0.2, 0.35)
    campaign_active: tuple[float, float] = (60.0, 180.0)
    campaign_idle: tuple[float, float] = (180.0, 420.0)
    # ddos
    attack_fraction: float = 0.4
    attack_episode_windows: tuple[int, int] = (2, 4)
    flood_rate: float = 4.0
    bot_benign_rate: float = 0.25
    attack_name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SynthError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not self.duration_s > 0:
            raise SynthError("duration_s must be > 0")
        if not 1 <= self.n_bots <= len(BOT_ADDRESSES):
            raise SynthError(f"n_bots must be in 1..{len(BOT_ADDRESSES)}")
        if not 0 < self.imbalance < 1:
            raise SynthError("imbalance must be in (0, 1)")
        if self.n_background_hosts is not None and self.n_background_hosts < 0:
            raise SynthError("n_background_hosts must be >= 0")
        if not 0 <= self.n_gateways <= len(GATEWAYS):
            raise SynthError(f"n_gateways must be in 0..{len(GATEWAYS)}")
        if not 0 <= self.n_crawlers <= len(CRAWLERS):
            raise SynthError(f"n_crawlers must be in 0..{len(CRAWLERS)}")
        for name in ("gateway_rate", "crawler_period", "crawler_burst", "burst_period",
                     "burst_size", "burst_gap", "campaign_active", "campaign_idle",
                     "attack_episode_windows"):
            _check_range(name, getattr(self, name))
        if self.burst_period[1] > REFERENCE_WINDOW:
            raise SynthError("burst period must not exceed the 30 s reference window")
        if not 0 < self.attack_fraction <= 1:
            raise SynthError("attack_fraction must be in (0, 1]")

    @property
    def n_windows(self) -> int:
        return int(math.ceil(self.duration_s / REFERENCE_WINDOW))

    def to_dict(self) -> dict:
        return asdict(self)


# -- addresses and per-record fields ------------------------------------------

def random_public(rng: np.random.Generator) -> str:
    """A random routable IPv4 address outside the monitored network."""
    while True:
        a = int(rng.integers(1, 224))
        if a in (10, 100, 127, 147, 169, 172, 192, 198):
            continue
        b, c, d = (int(v) for v in rng.integers(0, 256, size=3))
        return f"{a}.{b}.{c}.{max(d, 1)}"


class _Pools:
    """External destination pools shared by all hosts of a scenario."""

    def __init__(self, rng: np.random.Generator):
        self.web = [random_public(rng) for _ in range(400)]
        self.mail = [random_public(rng) for _ in range(6)]
        self.ntp = [random_public(rng) for _ in range(3)]
        self.misc = [random_public(rng) for _ in range(60)]
        self.wide_web = [random_public(rng) for _ in range(3000)]
        self.wide_mail = [random_public(rng) for _ in range(40)]


def _ordinary_addresses(rng: np.random.Generator, n_hosts: int) -> list[str]:
    # Ordinary hosts live in 147.32.96.0/19, away from bots and servers.
    base = int(ipaddress.ip_address("147.32.96.0"))
    offsets = rng.choice(np.arange(1, 8191), size=n_hosts, replace=False)
    return [str(ipaddress.ip_address(base + int(o))) for o in offsets]


def _lognormal(rng, median: float, sigma: float) -> float:
    return float(median * math.exp(sigma * rng.standard_normal()))


def sample_service(rng: np.random.Generator) -> int:
    return int(rng.choice(len(SERVICES), p=_SERVICE_P))


def sample_fields(rng: np.random.Generator, service: int) -> dict:
    """Ports, counters, duration and state for one record of a service."""
    name, proto, port, _ = SERVICES[service]
    if port is None:
        port = int(rng.integers(1024, 65536))
    orig_p = int(rng.integers(1024, 65536))
    if proto == "udp":
        state = "SF" if rng.random() < 0.9 else "S0"
        dur = _lognormal(rng, 0.02, 1.0)
        ob, rb = int(40 + rng.integers(0, 40)), int(60 + rng.integers(0, 200))
        op, rp = 1, 1 if state == "SF" else 0
        if state == "S0":
            rb = 0
    else:
        u = rng.random()
        state = "SF" if u < 0.86 else "S0" if u < 0.93 else "REJ" if u < 0.97 else "RSTO"
        if state in ("S0", "REJ"):
            return {"proto": proto, "orig_p": orig_p, "dest_p": port, "conn_state": state,
                    "orig_pkts": 1 if state == "REJ" else int(rng.integers(1, 4)),
                    "resp_pkts": 1 if state == "REJ" else 0,
                    "missing": ("duration", "orig_bytes", "resp_bytes")}
        medians = {"http": (450, 9000), "https": (900, 14000), "smtp": (2500, 450),
                   "ssh": (3000, 5000), "imaps": (600, 20000), "high": (300, 800)}
        mo, mr = medians.get(name, (500, 2000))
        ob = int(_lognormal(rng, mo, 0.8))
        rb = int(_lognormal(rng, mr, 0.9))
        dur = _lognormal(rng, 0.9, 1.0)
        op = max(1, ob // 1200 + int(rng.integers(2, 6)))
        rp = max(1, rb // 1400 + int(rng.integers(2, 6)))
    return {"proto": proto, "orig_p": orig_p, "dest_p": port, "conn_state": state,
            "duration": round(dur, 6), "orig_bytes": ob, "resp_bytes": rb,
            "orig_pkts": op, "resp_pkts": rp, "missing": ()}


def _record(ts: float, orig_h: str, dest_h: str, fields: dict) -> ConnRecord:
    f = dict(fields)
    missing = frozenset(f.pop("missing", ()))
    return ConnRecord(ts=round(ts, 6), orig_h=orig_h, dest_h=dest_h, missing=missing, **f)


def _favourite_destination(rng, pools: _Pools, service: int, favourites: dict) -> str:
    name = SERVICES[service][0]
    if name == "dns":
        return RESOLVERS[int(rng.integers(0, 2))]
    if name == "ntp":
        return pools.ntp[int(rng.integers(0, len(pools.ntp)))]
    if name in ("smtp", "imaps"):
        return favourites["mail"]
    if name in ("ssh", "high"):
        return pools.misc[int(rng.integers(0, len(pools.misc)))]
    web = favourites["web"]
    return web[min(int(rng.geometric(0.35)) - 1, len(web) - 1)]


def _poisson_times(rng, rate: float, t0: float, t1: float) -> np.ndarray:
    n = int(rng.poisson(rate * (t1 - t0)))
    return np.sort(t0 + rng.random(n) * (t1 - t0))


def _burst(rng, host: str, ts: float, t1: float, size: int, gap, records: list) -> None:
    """``size`` connections to random destinations, ``gap`` seconds apart."""
    for _ in range(size):
        if ts >= t1:
            return
        svc = sample_service(rng)
        dest = RESOLVERS[0] if SERVICES[svc][0] == "dns" else random_public(rng)
        records.append(_record(ts, host, dest, sample_fields(rng, svc)))
        ts += float(rng.uniform(*gap))


# -- traffic sources -------------------------------------------------------------

def _ordinary(rng, pools: _Pools, host: str, rate: float, t0: float, t1: float,
              records: list) -> None:
    favourites = {
        "mail": pools.mail[int(rng.integers(0, len(pools.mail)))],
        "web": [pools.web[int(i)] for i in rng.choice(len(pools.web), size=8, replace=False)],
    }
    for ts in _poisson_times(rng, rate, t0, t1):
        svc = sample_service(rng)
        dest = _favourite_destination(rng, pools, svc, favourites)
        records.append(_record(float(ts), host, dest, sample_fields(rng, svc)))


def _internal_server(rng, server: str, t0: float, t1: float, records: list) -> None:
    """Externally reachable internal server: incoming web and mail sessions."""
    clients = [random_public(rng) for _ in range(150)]
    for ts in _poisson_times(rng, 0.5, t0, t1):
        svc = sample_service(rng)
        fields = sample_fields(rng, svc)
        client = clients[int(rng.integers(0, len(clients)))]
        records.append(_record(float(ts), client, server, fields))


def _gateway(rng, pools: _Pools, gateway: str, rate: float, t0: float, t1: float,
             records: list) -> None:
    """NAT gateway: many users, so destinations spread over wide pools."""
    for ts in _poisson_times(rng, rate, t0, t1):
        svc = sample_service(rng)
        name = SERVICES[svc][0]
        if name in ("smtp", "imaps"):
            dest = pools.wide_mail[int(rng.integers(0, len(pools.wide_mail)))]
        elif name in ("http", "https"):
            dest = pools.wide_web[int(rng.integers(0, len(pools.wide_web)))]
        else:
            dest = _favourite_destination(rng, pools, svc, None)
        records.append(_record(float(ts), gateway, dest, sample_fields(rng, svc)))


def _crawler(rng, params: SynthParams, crawler: str, t0: float, t1: float,
             records: list) -> None:
    """Page-load bursts to random destinations, sparser than bot bursts."""
    t = t0 + rng.random() * params.crawler_period[1]
    while t < t1:
        size = int(rng.integers(params.crawler_burst[0], params.crawler_burst[1] + 1))
        _burst(rng, crawler, t, t1, size, params.burst_gap, records)
        t += float(rng.uniform(*params.crawler_period))


def _campaigns(rng, params: SynthParams, t0: float, t1: float) -> list[tuple[float, float]]:
    """Alternating active / idle periods, starting active within the first minute."""
    periods = []
    t = t0 + rng.random() * 60.0
    while t < t1:
        end = min(t + float(rng.uniform(*params.campaign_active)), t1)
        periods.append((t, end))
        t = end + float(rng.uniform(*params.campaign_idle))
    return periods


def _spam_bot(rng, params: SynthParams, bot: str, t0: float, t1: float,
              records: list) -> None:
    for start, end in _campaigns(rng, params, t0, t1):
        t = start + rng.random() * params.burst_period[0]
        while t < end:
            size = int(rng.integers(params.burst_size[0], params.burst_size[1] + 1))
            _burst(rng, bot, t, t1, size, params.burst_gap, records)
            t += float(rng.uniform(*params.burst_period))


def _attack_windows(rng, params: SynthParams) -> list[int]:
    n = params.n_windows
    want = max(1, int(round(params.attack_fraction * n)))
    active = np.zeros(n, dtype=bool)
    guard = 0
    while active.sum() < want and guard < 10 * n:
        guard += 1
        length = int(rng.integers(params.attack_episode_windows[0],
                                  params.attack_episode_windows[1] + 1))
        start = int(rng.integers(0, max(1, n - length + 1)))
        active[start:start + length] = True
    return np.flatnonzero(active).tolist()


def _ddos_bot(rng, params: SynthParams, pools: _Pools, bot: str, victim: str,
              t0: float, t1: float, records: list) -> None:
    _ordinary(rng, pools, bot, params.bot_benign_rate, t0, t1, records)
    udp_sport = int(rng.integers(1024, 65536))
    for w in _attack_windows(rng, params):
        w0 = t0 + w * REFERENCE_WINDOW
        w1 = min(w0 + REFERENCE_WINDOW, t1)
        for ts in _poisson_times(rng, params.flood_rate, w0, w1):
            if rng.random() < 0.6:
                fields = {"proto": "udp", "orig_p": udp_sport, "dest_p": 161,
                          "conn_state": "S0", "orig_bytes": 1400, "resp_bytes": 0,
                          "orig_pkts": 1, "resp_pkts": 0, "missing": ("duration",)}
            else:
                fields = {"proto": "icmp", "orig_p": 8, "dest_p": 0, "conn_state": "OTH",
                          "orig_bytes": 1472, "resp_bytes": 0, "orig_pkts": 1,
                          "resp_pkts": 0, "missing": ("duration",)}
            records.append(_record(float(ts), bot, victim, fields))


# -- calibration -------------------------------------------------------------------

def _host_rates(params: SynthParams, n_hosts: int) -> np.ndarray:
    q = (np.arange(n_hosts) + 0.5) / n_hosts
    return params.bg_rate_median * np.exp(params.bg_rate_sigma * norm.ppf(q))


def expected_ordinary_rows(params: SynthParams, n_hosts: int) -> float:
    """Expected (host, 30 s window) rows produced by ``n_hosts`` ordinary hosts."""
    if n_hosts == 0:
        return 0.0
    full = params.duration_s / REFERENCE_WINDOW
    occupancy = 1.0 - np.exp(-_host_rates(params, n_hosts) * REFERENCE_WINDOW)
    return float(full * occupancy.sum())


def window_rows(records, hosts, t0: float) -> int:
    """Distinct (host, 30 s window) pairs among ``hosts`` in ``records``."""
    hosts = set(hosts)
    seen = set()
    for r in records:
        w = int((r.ts - t0) // REFERENCE_WINDOW)
        if r.orig_h in hosts:
            seen.add((r.orig_h, w))
        if r.dest_h in hosts:
            seen.add((r.dest_h, w))
    return len(seen)


def ordinary_host_count(params: SynthParams, bot_rows: int, fixed_rows: int) -> int:
    """Ordinary hosts needed so that benign rows are ``bot_rows / imbalance``."""
    target = bot_rows / params.imbalance
    need = target - fixed_rows
    if params.n_background_hosts is not None:
        n = params.n_background_hosts
        most = fixed_rows + params.n_windows * n
        if most < target:
            raise SynthError(
                f"imbalance 1:{1 / params.imbalance:.0f} needs ~{target:.0f} benign rows; "
                f"{n} hosts over {params.n_windows} windows give at most {most}")
        return n
    if need < 0:
        raise SynthError(
            f"imbalance 1:{1 / params.imbalance:.0f} infeasible: servers, gateways and "
            f"crawlers alone give {fixed_rows} benign rows for {bot_rows} bot rows")
    per_host = expected_ordinary_rows(params, 1000) / 1000
    n = int(round(need / per_host))
    best = n
    for cand in range(max(0, n - 20), n + 21):
        if abs(expected_ordinary_rows(params, cand) - need) < \
                abs(expected_ordinary_rows(params, best) - need):
            best = cand
    if best > MAX_BACKGROUND_HOSTS:
        raise SynthError(f"imbalance target needs {best} ordinary hosts "
                         f"(limit {MAX_BACKGROUND_HOSTS}); infeasible")
    return best


# -- entry points --------------------------------------------------------------------

def generate_records(params: SynthParams) -> tuple[list[ConnRecord], ScenarioSpec]:
    """Records in timestamp order and the matching ground-truth manifest."""
    # Independent streams so each traffic source is unaffected by the others.
    s_pools, s_bots, s_fixed, s_hosts, s_addr = (
        np.random.default_rng(s) for s in np.random.SeedSequence(int(params.seed)).spawn(5))
    pools = _Pools(s_pools)
    t0 = float(params.t_start)
    t1 = t0 + float(params.duration_s)
    bots = list(BOT_ADDRESSES[: params.n_bots])

    bot_records: list[ConnRecord] = []
    victims: frozenset = frozenset()
    if params.kind == "spam":
        for bot in bots:
            _spam_bot(s_bots, params, bot, t0, t1, bot_records)
        attack = params.attack_name or "Spam, click fraud"
    else:
        victim = random_public(s_bots)
        victims = frozenset({victim})
        for bot in bots:
            _ddos_bot(s_bots, params, pools, bot, victim, t0, t1, bot_records)
        attack = params.attack_name or "ICMP, UDP"

    fixed_records: list[ConnRecord] = []
    for server in INTERNAL_SERVERS:
        _internal_server(s_fixed, server, t0, t1, fixed_records)
    lo, hi = params.gateway_rate
    gateways = GATEWAYS[: params.n_gateways]
    crawlers = CRAWLERS[: params.n_crawlers]
    for gw in gateways:
        rate = float(np.exp(s_fixed.uniform(np.log(lo), np.log(hi))))
        _gateway(s_fixed, pools, gw, rate, t0, t1, fixed_records)
    for cr in crawlers:
        _crawler(s_fixed, params, cr, t0, t1, fixed_records)

    bot_rows = window_rows(bot_records, bots, t0)
    fixed_hosts = set(INTERNAL_SERVERS) | set(gateways) | set(crawlers)
    fixed_rows = window_rows(fixed_records, fixed_hosts, t0)
    n_hosts = ordinary_host_count(params, bot_rows, fixed_rows)
    hosts = _ordinary_addresses(s_addr, n_hosts)
    rates = _host_rates(params, n_hosts)[s_addr.permutation(n_hosts)] if n_hosts else []

    records = bot_records + fixed_records
    for host, rate in zip(hosts, rates):
        _ordinary(s_hosts, pools, host, float(rate), t0, t1, records)

    records = [r for r in records if r.ts < t1]
    records.sort(key=lambda r: (r.ts, r.orig_h, r.dest_h, r.orig_p, r.dest_p))
    spec = ScenarioSpec(
        scenario_id=params.scenario_id,
        botnet_ips=frozenset(bots),
        victim_ips=victims,
        internal_cidr=ipaddress.ip_network(INTERNAL_CIDR),
        t_start=t0,
        t_end=t1,
        attack_name=attack,
    )
    return records, spec


def gen_scenario(params: SynthParams) -> tuple[bytes, ScenarioSpec]:
    """conn.log bytes plus manifest for one synthetic scenario."""
    records, spec = generate_records(params)
    return write_conn_log(records).encode("utf-8"), spec


def write_scenario(params: SynthParams, directory) -> tuple[str, str]:
    """Write ``conn.log`` and ``manifest.txt`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    data, spec = gen_scenario(params)
    log_path = os.path.join(directory, "conn.log")
    manifest_path = os.path.join(directory, "manifest.txt")
    with open(log_path, "wb") as fh:
        fh.write(data)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(format_scenario_spec(spec))
    return log_path, manifest_path


# Frozen presets. Three scenarios per botnet kind, mirroring the leave-one-out
# layout of the CTU-13 Neris (1, 2, 9) and Rbot (4, 10, 11) captures.
PRESETS: dict[str, tuple[SynthParams, ...]] = {
    "spam": (
        SynthParams("spam", "1", duration_s=1800, n_bots=2, seed=101),
        SynthParams("spam", "2", duration_s=2400, n_bots=1, seed=202, t_start=1313999000.0),
        SynthParams("spam", "9", duration_s=1800, n_bots=3, seed=909, t_start=1314500000.0),
    ),
    "spam-imbalanced": (
        SynthParams("spam", "1", duration_s=1800, n_bots=2, imbalance=1 / 150, seed=111),
        SynthParams("spam", "2", duration_s=2400, n_bots=1, imbalance=1 / 150, seed=222,
                    t_start=1313999000.0),
        SynthParams("spam", "9", duration_s=1800, n_bots=3, imbalance=1 / 150, seed=999,
                    t_start=1314500000.0),
    ),
    "ddos": (
        SynthParams("ddos", "4", duration_s=900, n_bots=1, imbalance=1 / 401, seed=404),
        SynthParams("ddos", "10", duration_s=600, n_bots=2, imbalance=1 / 401, seed=1010,
                    t_start=1314000000.0),
        SynthParams("ddos", "11", duration_s=600, n_bots=1, imbalance=1 / 401, seed=1111,
                    t_start=1314600000.0),
    ),
}


def preset(name: str, seed_offset: int = 0) -> tuple[SynthParams, ...]:
    try:
        params = PRESETS[name]
    except KeyError:
        raise SynthError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if seed_offset:
        params = tuple(replace(p, seed=p.seed + seed_offset) for p in params)
    return params
