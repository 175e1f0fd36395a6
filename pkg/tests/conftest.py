import ipaddress
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from botdetect.ingest import CONN_STATES, ConnRecord, ScenarioSpec  # noqa: E402
from botdetect.synth import SynthParams, generate_records  # noqa: E402

INTERNAL = "10.0.0.0/16"
BOT = "10.0.0.5"
VICTIM = "203.0.113.7"
_HOSTS = ("10.0.0.5", "10.0.0.6", "10.0.0.7", "10.0.1.1")
_PEERS = ("198.51.100.1", "198.51.100.2", "198.51.101.9", "203.0.113.7", "10.0.0.6",
          "10.0.2.2")
_PORTS = (21, 22, 25, 53, 80, 123, 161, 443, 3389, 8080, 49152)


def random_records(seed: int, n: int, t0: float = 1000.0, span: float = 200.0):
    """Small random record sets with many collisions in hosts, ports and times."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        proto = ("tcp", "udp", "icmp")[int(rng.choice(3, p=[0.6, 0.3, 0.1]))]
        a = _HOSTS[int(rng.integers(len(_HOSTS)))]
        b = _PEERS[int(rng.integers(len(_PEERS)))]
        if rng.random() < 0.3:
            a, b = b, a
        if proto == "icmp":
            orig_p, dest_p = int(rng.choice([0, 3, 8, 11])), 0
        else:
            orig_p = int(rng.integers(1024, 1100))
            dest_p = int(_PORTS[int(rng.integers(len(_PORTS)))])
        # Coarse timestamps produce ties and repeated gaps.
        ts = t0 + round(float(rng.random() * span), int(rng.integers(0, 3)))
        out.append(ConnRecord(
            ts=ts, orig_h=a, orig_p=orig_p, dest_h=b, dest_p=dest_p, proto=proto,
            duration=round(float(rng.exponential(2.0)), 4),
            orig_bytes=int(rng.integers(0, 5000)), resp_bytes=int(rng.integers(0, 5000)),
            orig_pkts=int(rng.integers(0, 20)), resp_pkts=int(rng.integers(0, 20)),
            conn_state=CONN_STATES[int(rng.integers(len(CONN_STATES)))]))
    return out


def make_spec(t0: float = 1000.0, t_end: float = 1200.0, victims=(VICTIM,)) -> ScenarioSpec:
    return ScenarioSpec("r", frozenset({BOT}), ipaddress.ip_network(INTERNAL), t0, t_end,
                        frozenset(victims))


@pytest.fixture
def spec():
    return make_spec()


SMALL_SPAM = SynthParams("spam", "s1", duration_s=300, n_bots=1, n_background_hosts=40,
                         imbalance=0.05, seed=7)
SMALL_DDOS = SynthParams("ddos", "d1", duration_s=300, n_bots=1, n_background_hosts=40,
                         imbalance=0.05, seed=8)


@pytest.fixture(scope="session")
def small_spam():
    return generate_records(SMALL_SPAM)


@pytest.fixture(scope="session")
def small_ddos():
    return generate_records(SMALL_DDOS)
