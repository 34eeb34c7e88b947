from __future__ import annotations

import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from ibgpconv.errors import IncompleteTraceError, MappingError, TraceFormatError
from ibgpconv.experiment import Experiment
from ibgpconv.scenario import load_scenario
from ibgpconv.traceio import (
    BGP,
    POST,
    PRE,
    PROBE,
    SUMMARY,
    UNDELAYED,
    WITHDRAW,
    HardwareMapping,
    MappedLink,
    TraceRecord,
    decode_record,
    load_trace,
    mapping_for,
    read_header,
    read_trace,
    sort_records,
    validate_trace,
    write_trace,
)

GOLDEN = FIXTURES / "path3-small.trace"
GOLDEN_MAPPING = FIXTURES / "path3-small.mapping.json"


def probe(ts, a, b, stage, seq=0, ttl=64, src="n01", prefix="p"):
    return TraceRecord(ts, PROBE, a, b, stage, src=src, prefix=prefix, seq=seq, ttl=ttl)


def bgp(ts, a, b, stage, mid=1, msg=WITHDRAW, prefix="p"):
    return TraceRecord(ts, BGP, a, b, stage, msg=msg, prefix=prefix, sess_from=a, sess_to=b, mid=mid)


def summary(ts, drops=0):
    return TraceRecord(ts, SUMMARY, drops=drops)


@pytest.fixture(scope="module")
def golden_mapping():
    return HardwareMapping.load(GOLDEN_MAPPING)


records_st = st.builds(
    probe,
    ts=st.integers(-10**9, 10**9),
    a=st.sampled_from(["n00", "n01", "prober"]),
    b=st.sampled_from(["n01", "x00"]),
    stage=st.sampled_from([PRE, POST, UNDELAYED]),
    seq=st.integers(0, 10**6),
    ttl=st.integers(1, 255),
    prefix=st.one_of(st.none(), st.sampled_from(["p00001", "10.0.0.0/8"])),
) | st.builds(
    bgp,
    ts=st.integers(-10**9, 10**9),
    a=st.sampled_from(["n00", "x00"]),
    b=st.sampled_from(["n01", "n02"]),
    stage=st.sampled_from([PRE, POST, UNDELAYED]),
    mid=st.integers(0, 10**9),
    msg=st.sampled_from(["update", "withdraw", "keepalive"]),
)


class TestRecords:
    @settings(max_examples=200, deadline=None)
    @given(records_st)
    def test_encode_decode_round_trip(self, rec):
        assert decode_record(rec.encode()) == rec

    def test_summary_round_trip(self):
        assert decode_record("ts=5 kind=summary drops=3") == summary(5, 3)

    @pytest.mark.parametrize("line", [
        "ts=1 kind=nope",
        "ts=1 kind=summary",
        "kind=summary ts=1 drops=0",
        "ts=x kind=summary drops=0",
        "ts=1 kind=summary drops",
        "ts=1 kind=probe from=a to=b stage=mid src=a prefix=p seq=0 ttl=1",
        "ts=1 kind=bgp from=a to=b stage=pre msg=open prefix=p sess_from=a sess_to=b mid=1",
    ])
    def test_malformed_lines(self, line):
        with pytest.raises(TraceFormatError):
            decode_record(line, 7)

    def test_error_carries_line_number(self):
        with pytest.raises(TraceFormatError) as info:
            decode_record("garbage", 7)
        assert info.value.line_no == 7

    def test_unencodable_value(self):
        with pytest.raises(TraceFormatError):
            probe(0, "a b", "c", PRE).encode()

    def test_sort_is_deterministic(self):
        recs = [probe(5, "n00", "n01", PRE, seq=s) for s in range(5)] + [probe(1, "n00", "n01", PRE, seq=9), summary(9)]
        shuffled = recs[:]
        random.Random(3).shuffle(shuffled)
        ordered = sort_records(shuffled)
        assert ordered == sort_records(recs)
        assert ordered[0].seq == 9 and ordered[-1].kind == SUMMARY


class TestFiles:
    def test_million_record_round_trip(self, tmp_path):
        rng = random.Random(1)
        recs = sorted(
            (probe(rng.randrange(10**8), "n00", "n01", rng.choice((PRE, POST)), seq=i, ttl=rng.randrange(1, 65))
             for i in range(10**6 - 1)),
            key=lambda r: r.ts,
        )
        recs.append(summary(10**8))
        path = tmp_path / "big.trace"
        write_trace(path, recs, {"rate_pps": 1000})
        assert load_trace(path) == recs

    def test_write_is_byte_stable(self, tmp_path):
        recs = load_trace(GOLDEN)
        write_trace(tmp_path / "a.trace", recs, _meta(GOLDEN))
        assert (tmp_path / "a.trace").read_bytes() == GOLDEN.read_bytes()

    def test_golden_trace_regenerates_identically(self, tmp_path):
        sc = load_scenario(FIXTURES / "path3-small.json")
        Experiment(sc).run(tmp_path)
        assert (tmp_path / "sample-000.trace").read_bytes() == GOLDEN.read_bytes()
        assert (tmp_path / "mapping.json").read_bytes() == GOLDEN_MAPPING.read_bytes()

    def test_truncated_trace(self, tmp_path):
        lines = GOLDEN.read_text().splitlines(keepends=True)
        path = tmp_path / "cut.trace"
        path.write_text("".join(lines[:-1]))
        with pytest.raises(IncompleteTraceError):
            load_trace(path)

    def test_truncated_mid_line(self, tmp_path):
        text = GOLDEN.read_text()
        path = tmp_path / "cut.trace"
        path.write_text(text[: len(text) // 2])
        with pytest.raises(TraceFormatError):
            load_trace(path)

    def test_records_after_summary(self, tmp_path):
        path = tmp_path / "t.trace"
        path.write_text(GOLDEN.read_text() + "ts=1 kind=summary drops=0\n")
        with pytest.raises(TraceFormatError):
            load_trace(path)

    @pytest.mark.parametrize("header", ["#other-format version=1", "#ibgpconv-trace version=2", "#ibgpconv-trace version=1 junk"])
    def test_bad_header(self, tmp_path, header):
        path = tmp_path / "t.trace"
        path.write_text(header + "\nts=0 kind=summary drops=0\n")
        with pytest.raises(TraceFormatError):
            load_trace(path)

    def test_reader_is_lazy(self, tmp_path):
        path = tmp_path / "t.trace"
        path.write_text(GOLDEN.read_text().splitlines()[0] + "\nts=0 kind=summary drops=0\nbroken\n")
        it = read_trace(path)
        assert next(it) == summary(0)
        with pytest.raises(TraceFormatError):
            next(it)

    def test_writer_requires_summary_last(self, tmp_path):
        with pytest.raises(IncompleteTraceError):
            write_trace(tmp_path / "t", [probe(0, "a", "b", PRE)])
        with pytest.raises(TraceFormatError):
            write_trace(tmp_path / "t", [summary(0), summary(1)])

    def test_writer_requires_time_order(self, tmp_path):
        with pytest.raises(TraceFormatError):
            write_trace(tmp_path / "t", [probe(5, "a", "b", PRE), probe(4, "a", "b", PRE), summary(6)])


def _meta(path: Path) -> dict:
    meta = read_header(path)
    meta.pop("version")
    return meta


class TestMapping:
    def test_round_trip(self, tmp_path, golden_mapping):
        golden_mapping.save(tmp_path / "m.json")
        assert HardwareMapping.load(tmp_path / "m.json").to_dict() == golden_mapping.to_dict()

    def test_path3_ids(self, golden_mapping):
        assert golden_mapping.routers == {"r1": "n00", "r2": "n01", "r3": "n02"}
        assert golden_mapping.peers == {"e1": "x00", "e3": "x01"}
        assert golden_mapping.link("n01", "n00").link_id == "L00"
        assert not golden_mapping.link("prober", "n01").delayed

    def test_unknown_lookups(self, golden_mapping):
        with pytest.raises(MappingError):
            golden_mapping.link("n00", "n02")
        with pytest.raises(MappingError):
            golden_mapping.name("zz")

    def test_duplicate_node_ids(self):
        with pytest.raises(MappingError):
            HardwareMapping({"a": "n0", "b": "n0"}, {}, {})

    def test_unresolved_link(self):
        with pytest.raises(MappingError):
            HardwareMapping({"a": "n0"}, {}, {"L": MappedLink("L", "n0", "n9", 1, True)})

    def test_duplicate_link(self):
        links = {"L0": MappedLink("L0", "n0", "n1", 1, True), "L1": MappedLink("L1", "n1", "n0", 1, True)}
        with pytest.raises(MappingError):
            HardwareMapping({"a": "n0", "b": "n1"}, {}, links)

    @pytest.mark.parametrize("text", ["{", '{"version": 2}', '{"version": 1}'])
    def test_malformed_file(self, tmp_path, text):
        path = tmp_path / "m.json"
        path.write_text(text)
        with pytest.raises(MappingError):
            HardwareMapping.load(path)

    def test_mapping_for_marks_zero_delay_peers_undelayed(self):
        m = mapping_for(load_scenario("abilene-withdraw").topology)
        assert len(m.routers) == 11
        assert all(not l.delayed for l in m.links.values() if l.link_id.startswith("E"))
        assert all(l.delayed for l in m.links.values() if l.link_id.startswith("L"))


class TestValidate:
    def codes(self, records, mapping):
        return [f.code for f in validate_trace(records, mapping)]

    def test_golden_is_clean(self, golden_mapping):
        assert validate_trace(load_trace(GOLDEN), golden_mapping) == []

    def test_missing_summary(self, golden_mapping):
        assert "summary" in self.codes(load_trace(GOLDEN)[:-1], golden_mapping)

    def test_unknown_node_and_link(self, golden_mapping):
        recs = [probe(0, "n00", "n77", PRE), probe(0, "n00", "n02", PRE), summary(1)]
        assert self.codes(recs, golden_mapping) == ["unknown-node", "unknown-link"]

    def test_stage_must_match_link(self, golden_mapping):
        recs = [probe(0, "prober", "n01", PRE), summary(1)]
        assert "stage" in self.codes(recs, golden_mapping)

    def test_non_monotone_lane(self, golden_mapping):
        recs = [probe(5, "n01", "n00", PRE, seq=0), probe(4, "n01", "n00", PRE, seq=1),
                probe(15, "n01", "n00", POST, seq=0), probe(14, "n01", "n00", POST, seq=1), summary(20)]
        assert self.codes(recs, golden_mapping).count("non-monotone") == 2

    def test_duplicate_and_twins(self, golden_mapping):
        recs = [probe(0, "n01", "n00", PRE), probe(0, "n01", "n00", PRE), probe(5, "n01", "n02", POST), summary(9)]
        assert sorted(self.codes(recs, golden_mapping)) == ["duplicate", "missing-twin", "orphan-post"]

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_deleting_one_delayed_record_is_caught(self, golden_mapping, data):
        recs = load_trace(GOLDEN)
        delayed = [i for i, r in enumerate(recs) if r.stage in (PRE, POST)]
        i = data.draw(st.sampled_from(delayed))
        assert validate_trace(recs[:i] + recs[i + 1:], golden_mapping) != []

    def test_bgp_records_validate(self, golden_mapping):
        recs = [bgp(0, "x00", "n00", PRE), bgp(10, "x00", "n00", POST), summary(20)]
        assert validate_trace(recs, golden_mapping) == []
