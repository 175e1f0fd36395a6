import math

import numpy as np
import pytest
from conftest import BOT, make_spec, random_records
from hypothesis import given, settings
from hypothesis import strategies as st
from oracle import oracle_mismatches

from botdetect.features import (
    APPLICATION_PORTS,
    DEFAULT_BUCKETS,
    ICMP_TYPES,
    FeaturizeError,
    WindowConfig,
    WindowFeaturizer,
    aggregate_temporal,
    aggregate_traffic,
    assign_window,
    bucket_port,
    feature_schema,
    featurize_connection,
    featurize_dataset,
    gap_statistics,
)
from botdetect.ingest import ConnRecord


def rec(ts=0.0, orig="10.0.0.5", dest="10.1.2.4", dport=80, proto="tcp", **kw):
    return ConnRecord(ts=ts, orig_h=orig, orig_p=kw.pop("sport", 1025), dest_h=dest,
                      dest_p=dport, proto=proto, **kw)


@pytest.mark.parametrize("ts,expected", [(65.2, 2), (0.0, 0), (90.0, 3)])
def test_assign_window(ts, expected):
    assert assign_window(ts, WindowConfig(30.0, 0.0)) == expected


def test_assign_window_rejects_early_records():
    with pytest.raises(FeaturizeError):
        assign_window(-1.0, WindowConfig(30.0, 0.0))


@pytest.mark.parametrize("proto,port,name", [
    ("tcp", 25, "smtp-25"), ("udp", 161, "snmp-161"), ("tcp", 49152, "Other"),
    ("icmp", 8, "icmp-8"), ("icmp", 3, "icmp-3"), ("icmp", 25, "Other")])
def test_bucket_port(proto, port, name):
    assert bucket_port(proto, port) == name


def test_schema_sizes():
    n = len(DEFAULT_BUCKETS.names)
    assert n == 21
    assert len(feature_schema("traffic")) == 2 * n * 17 + 12
    assert len(feature_schema("traffic+temporal")) == 2 * n * 17 + 12 + 2 * n * 5
    assert len(set(feature_schema("traffic+temporal"))) == len(feature_schema("traffic+temporal"))


def test_connection_one_hot():
    cols = feature_schema("connection")
    v = featurize_connection(rec(conn_state="SF"))
    assert [v[cols.index(f"proto.{p}")] for p in ("tcp", "udp", "icmp")] == [1, 0, 0]
    states = [c for c in cols if c.startswith("conn_state.")]
    assert len(states) == 13
    assert sum(v[cols.index(c)] for c in states) == 1


def test_connection_locality():
    a = featurize_connection(rec(orig_bytes=10))
    b = featurize_connection(rec(orig_bytes=11))
    assert np.count_nonzero(a != b) == 1


def test_traffic_sum_min_max():
    recs = [rec(ts=i, dport=25, orig_bytes=b) for i, b in enumerate((100, 200, 300))]
    f = aggregate_traffic(recs, "10.0.0.5", "out")
    assert (f["out.smtp-25.orig_bytes.sum"], f["out.smtp-25.orig_bytes.min"],
            f["out.smtp-25.orig_bytes.max"]) == (600, 100, 300)


def test_traffic_distinct_ips_and_subnets():
    recs = [rec(dest=d) for d in ("10.1.2.4", "10.1.2.9", "10.1.3.1")]
    f = aggregate_traffic(recs, "10.0.0.5", "out")
    assert f["out.http-80.distinct_ips"] == 3
    assert f["out.http-80.distinct_subnets"] == 2


def test_no_incoming_records_gives_zeros():
    recs = [rec(dport=p) for p in (25, 80, 443)]
    f = aggregate_traffic(recs, "10.0.0.5", "in")
    assert all(v == 0 for v in f.values())
    t = aggregate_temporal(recs, "10.0.0.5", "in")
    assert all(v == 0 for v in t.values())


def test_gap_statistics():
    mean, std, median, lo, hi = gap_statistics([0, 1, 3, 6])
    assert (mean, median, lo, hi) == (2, 2, 1, 3)
    assert std == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    assert round(std, 4) == 0.8165
    assert gap_statistics([4.0]) == [0.0] * 5
    assert gap_statistics([0, 5]) == [5, 0, 5, 5, 5]


def test_temporal_per_bucket():
    recs = [rec(ts=t, dport=161, proto="udp") for t in (0, 1, 3, 6)]
    f = aggregate_temporal(recs, "10.0.0.5", "out")
    assert f["out.snmp-161.iat.max"] == 3
    assert f["out.http-80.iat.max"] == 0


def test_featurize_is_deterministic(spec):
    recs = random_records(3, 400)
    a = featurize_dataset(recs, spec, "traffic+temporal")
    b = featurize_dataset(recs, spec, "traffic+temporal")
    assert a.to_csv() == b.to_csv()


def test_connection_rows_follow_internal_records(spec):
    recs = random_records(4, 300)
    m = featurize_dataset(recs, spec, "connection")
    expected = sum(1 for r in recs if spec.contains_time(r.ts)
                   and (spec.is_internal(r.orig_h) or spec.is_internal(r.dest_h)))
    assert m.n_rows == expected


def test_window_labels_follow_botnet_host(spec):
    recs = random_records(5, 500)
    m = featurize_dataset(recs, spec, "traffic")
    for (_, ip, _), y in zip(m.keys, m.y):
        assert y == (ip == BOT)


def test_fine_labels_need_victim_traffic(spec):
    recs = random_records(6, 500)
    m = featurize_dataset(recs, spec, "traffic", labeling="fine")
    victims = {(r.orig_h, int((r.ts - spec.t_start) // 30)) for r in recs
               if r.orig_h == BOT and r.dest_h in spec.victim_ips}
    assert {(k[1], k[2]) for k, y in zip(m.keys, m.y) if y} == victims


def test_fine_labeling_without_victims_fails():
    with pytest.raises(ValueError, match="fine labeling unavailable"):
        featurize_dataset(random_records(0, 5), make_spec(victims=()), "traffic",
                          labeling="fine")


def test_window_featurizer_matches_function(spec):
    recs = random_records(7, 200)
    wf = WindowFeaturizer("traffic", 10.0).fit()
    assert wf.transform((recs, spec)).equals(
        featurize_dataset(recs, spec, "traffic", WindowConfig(10.0, spec.t_start)))
    assert len(wf.get_feature_names_out()) == wf.n_features_out_


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 120),
       T=st.sampled_from([1.0, 7.5, 30.0, 250.0]))
def test_matches_brute_force_oracle(seed, n, T):
    spec = make_spec()
    recs = random_records(seed, n)
    m = featurize_dataset(recs, spec, "traffic+temporal", WindowConfig(T, spec.t_start))
    assert oracle_mismatches(recs, spec, T, APPLICATION_PORTS, ICMP_TYPES, m) == []


def test_csv_round_trip(spec, tmp_path):
    m = featurize_dataset(random_records(8, 200), spec, "traffic")
    path = tmp_path / "m.csv"
    m.to_csv(path, metadata={"a": 1})
    assert type(m).read_csv(path).equals(m)
    m.save_npz(tmp_path / "m.npz")
    assert type(m).load_npz(tmp_path / "m.npz").equals(m)
