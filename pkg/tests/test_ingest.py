import ipaddress

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from botdetect.ingest import (
    ConnLogError,
    ConnRecord,
    ManifestError,
    ScenarioSpec,
    format_scenario_spec,
    parse_conn_log,
    parse_scenario_spec,
    write_conn_log,
)

HEADER = ("#separator \\x09\n#fields\tts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p"
          "\tproto\tduration\torig_bytes\tresp_bytes\torig_pkts\tresp_pkts\tconn_state\n")
LINE = "1313389279.1\tC1\t147.32.84.165\t1025\t77.75.73.9\t25\ttcp\t2.5\t1024\t512\t10\t8\tSF"


def test_direct_field_mapping():
    (rec,) = parse_conn_log(HEADER + LINE + "\n")
    assert rec == ConnRecord(ts=1313389279.1, orig_h="147.32.84.165", orig_p=1025,
                             dest_h="77.75.73.9", dest_p=25, proto="tcp", duration=2.5,
                             orig_bytes=1024, resp_bytes=512, orig_pkts=10, resp_pkts=8,
                             conn_state="SF")


def test_missing_duration_is_zero_and_flagged():
    (rec,) = parse_conn_log(HEADER + LINE.replace("\t2.5\t", "\t-\t") + "\n")
    assert rec.duration == 0.0
    assert rec.is_missing("duration")
    assert not rec.is_missing("orig_bytes")


def test_permuted_header_binds_by_name():
    cols = HEADER.split("\n")[1].split("\t")[1:]
    vals = LINE.split("\t")
    order = list(reversed(range(len(cols))))
    text = ("#fields\t" + "\t".join(cols[i] for i in order) + "\n"
            + "\t".join(vals[i] for i in order) + "\n")
    assert parse_conn_log(text)[0] == parse_conn_log(HEADER + LINE)[0]


def test_dest_alias_columns_accepted():
    text = HEADER.replace("id.resp_h", "id.dest_h").replace("id.resp_p", "id.dest_p") + LINE
    assert parse_conn_log(text)[0].dest_p == 25


def test_unknown_columns_are_reported():
    text = HEADER.replace("conn_state\n", "conn_state\tweird\n") + LINE + "\tx\n"
    log = parse_conn_log(text)
    assert log.unknown_columns == ("weird",)


@pytest.mark.parametrize("bad", [
    LINE.replace("\t1025\t", "\t70000\t"),
    LINE.replace("\ttcp\t", "\tsctp\t"),
    LINE.replace("\t1024\t", "\t-5\t"),
    LINE.rsplit("\t", 1)[0],
])
def test_malformed_lines_name_the_line(bad):
    with pytest.raises(ConnLogError, match="line 3"):
        parse_conn_log(HEADER + bad + "\n")


def test_data_before_header_is_rejected():
    with pytest.raises(ConnLogError):
        parse_conn_log(LINE + "\n")


def _spec(**kw):
    base = dict(scenario_id="1", botnet_ips=frozenset({"147.32.84.165"}),
                internal_cidr=ipaddress.ip_network("147.32.0.0/16"),
                t_start=0.0, t_end=10.0)
    base.update(kw)
    return ScenarioSpec(**base)


def test_manifest_round_trip():
    spec = _spec(victim_ips=frozenset({"1.2.3.4"}), attack_name="x")
    assert parse_scenario_spec(format_scenario_spec(spec)) == spec


def test_manifest_single_botnet_ip():
    spec = parse_scenario_spec("scenario_id: 1\nbotnet_ips: 147.32.84.165\n"
                               "internal_cidr: 147.32.0.0/16\nt_start: 0\nt_end: 5\n")
    assert spec.botnet_ips == {"147.32.84.165"}
    assert spec.victim_ips == frozenset()


def test_manifest_invalid_time_bounds():
    with pytest.raises(ManifestError, match="invalid time bounds"):
        parse_scenario_spec("scenario_id: 1\nbotnet_ips: 147.32.84.165\n"
                            "internal_cidr: 147.32.0.0/16\nt_start: 9\nt_end: 5\n")


def test_manifest_missing_key():
    with pytest.raises(ManifestError, match="botnet_ips"):
        parse_scenario_spec("scenario_id: 1\ninternal_cidr: 10.0.0.0/8\nt_start: 0\nt_end: 1\n")


_ip = st.builds(lambda a, b, c, d: f"{a}.{b}.{c}.{d}", st.integers(1, 223),
                st.integers(0, 255), st.integers(0, 255), st.integers(1, 254))


@st.composite
def records(draw):
    proto = draw(st.sampled_from(["tcp", "udp", "icmp"]))
    missing = draw(st.sets(st.sampled_from(["duration", "orig_bytes", "resp_pkts"])))
    vals = dict(
        ts=draw(st.floats(0, 2e9, allow_nan=False)),
        orig_h=draw(_ip), orig_p=draw(st.integers(0, 65535)),
        dest_h=draw(_ip), dest_p=draw(st.integers(0, 65535)), proto=proto,
        duration=draw(st.floats(0, 1e5, allow_nan=False)),
        orig_bytes=draw(st.integers(0, 10 ** 9)), resp_bytes=draw(st.integers(0, 10 ** 9)),
        orig_pkts=draw(st.integers(0, 10 ** 6)), resp_pkts=draw(st.integers(0, 10 ** 6)),
        conn_state=draw(st.sampled_from(["SF", "S0", "REJ", "OTH"])))
    for name in missing:
        vals[name] = 0
    return ConnRecord(**vals, missing=frozenset(missing))


@settings(max_examples=60, deadline=None)
@given(st.lists(records(), max_size=20))
def test_write_parse_round_trip(recs):
    parsed = list(parse_conn_log(write_conn_log(recs)))
    assert len(parsed) == len(recs)
    for a, b in zip(recs, parsed):
        assert (a.ts, a.orig_h, a.orig_p, a.dest_h, a.dest_p, a.proto, a.conn_state) == \
               (b.ts, b.orig_h, b.orig_p, b.dest_h, b.dest_p, b.proto, b.conn_state)
        for f in ("duration", "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts"):
            assert getattr(a, f) == getattr(b, f)
            assert a.is_missing(f) == b.is_missing(f)
