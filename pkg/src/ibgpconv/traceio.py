"""Line-oriented capture format and hardware mapping.

A trace file starts with one header line::

    #ibgpconv-trace version=1 rate_pps=1000 cutoff=peer

followed by one record per line as space-separated ``key=value`` pairs in a
fixed key order. Every trace ends with exactly one ``kind=summary`` record
carrying the capture drop counter. Timestamps are integer microseconds on a
single capture clock. See ``docs/formats.md`` for the full field list.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import IncompleteTraceError, MappingError, TraceFormatError

FORMAT_MAGIC = "#ibgpconv-trace"
FORMAT_VERSION = 1
MAPPING_VERSION = 1

PROBE = "probe"
BGP = "bgp"
SUMMARY = "summary"
KINDS = (PROBE, BGP, SUMMARY)

PRE = "pre"
POST = "post"
UNDELAYED = "undelayed"
STAGES = (PRE, POST, UNDELAYED)

UPDATE = "update"
WITHDRAW = "withdraw"
KEEPALIVE = "keepalive"
BGP_KINDS = (UPDATE, WITHDRAW, KEEPALIVE)

_FIELDS = {
    PROBE: ("ts", "kind", "from", "to", "stage", "src", "prefix", "seq", "ttl"),
    BGP: ("ts", "kind", "from", "to", "stage", "msg", "prefix", "sess_from", "sess_to", "mid"),
    SUMMARY: ("ts", "kind", "drops"),
}
_INT_FIELDS = {"ts", "seq", "ttl", "mid", "drops"}
_ATTR = {"from": "link_from", "to": "link_to"}


@dataclass(frozen=True, slots=True)
class TraceRecord:
    ts: int
    kind: str
    link_from: str | None = None
    link_to: str | None = None
    stage: str | None = None
    src: str | None = None
    prefix: str | None = None
    seq: int | None = None
    ttl: int | None = None
    msg: str | None = None
    sess_from: str | None = None
    sess_to: str | None = None
    mid: int | None = None
    drops: int | None = None

    @property
    def link(self) -> tuple[str, str]:
        return (self.link_from, self.link_to)

    def identity(self) -> tuple:
        """Packet identity; equal for the pre/post twins of one link traversal."""
        if self.kind == PROBE:
            return (PROBE, self.src, self.prefix, self.seq, self.ttl, self.link_from, self.link_to)
        if self.kind == BGP:
            return (BGP, self.mid, self.link_from, self.link_to)
        return (SUMMARY,)

    def encode(self) -> str:
        parts = []
        for key in _FIELDS[self.kind]:
            value = getattr(self, _ATTR.get(key, key))
            if value is None:
                if key == "prefix":
                    value = "-"
                else:
                    raise TraceFormatError(f"{self.kind} record misses field {key}")
            value = str(value)
            if not value or " " in value or "=" in value or "\n" in value:
                raise TraceFormatError(f"field {key} has an unencodable value {value!r}")
            parts.append(f"{key}={value}")
        return " ".join(parts)


def _line_pattern(kind: str) -> re.Pattern:
    parts = []
    for key in _FIELDS[kind]:
        if key == "kind":
            value = re.escape(kind)
        elif key in _INT_FIELDS:
            value = r"(-?[0-9]+)"
        else:
            value = r"([^ =]+)"
        parts.append(f"{key}={value}")
    return re.compile(" ".join(parts))


_PATTERNS = {kind: _line_pattern(kind) for kind in _FIELDS}
_KIND = re.compile(r"ts=[^ ]* kind=([^ ]+)")


def decode_record(line: str, line_no: int | None = None) -> TraceRecord:
    head = _KIND.match(line)
    kind = head.group(1) if head else None
    if kind not in _PATTERNS:
        raise TraceFormatError(f"unknown record kind {kind!r}", line_no)
    m = _PATTERNS[kind].fullmatch(line)
    if m is None:
        raise TraceFormatError(f"{kind} record must carry keys {' '.join(_FIELDS[kind])}", line_no)
    g = m.groups()
    if kind == PROBE:
        record = TraceRecord(int(g[0]), PROBE, g[1], g[2], g[3], src=g[4],
                             prefix=None if g[5] == "-" else g[5], seq=int(g[6]), ttl=int(g[7]))
    elif kind == BGP:
        record = TraceRecord(int(g[0]), BGP, g[1], g[2], g[3], msg=g[4], prefix=None if g[5] == "-" else g[5],
                             sess_from=g[6], sess_to=g[7], mid=int(g[8]))
    else:
        record = TraceRecord(int(g[0]), SUMMARY, drops=int(g[1]))
    if record.stage is not None and record.stage not in STAGES:
        raise TraceFormatError(f"unknown stage {record.stage!r}", line_no)
    if record.msg is not None and record.msg not in BGP_KINDS:
        raise TraceFormatError(f"unknown BGP message kind {record.msg!r}", line_no)
    return record


def _header(meta: dict) -> str:
    parts = [FORMAT_MAGIC, f"version={FORMAT_VERSION}"]
    for key in sorted(meta):
        value = str(meta[key])
        if not value or any(c in value for c in " =\n") or any(c in key for c in " =\n"):
            raise TraceFormatError(f"header item {key} has an unencodable value {value!r}")
        parts.append(f"{key}={value}")
    return " ".join(parts)


def write_trace(path: str | Path, records: Iterable[TraceRecord], meta: dict | None = None) -> None:
    """Write ``records`` (timestamp-ordered, Summary last) to ``path``."""
    records = list(records)
    if not records or records[-1].kind != SUMMARY:
        raise IncompleteTraceError("trace must end with a summary record")
    if sum(r.kind == SUMMARY for r in records) != 1:
        raise TraceFormatError("trace must contain exactly one summary record")
    last = None
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_header(meta or {}) + "\n")
        for record in records:
            if last is not None and record.ts < last:
                raise TraceFormatError("records must be timestamp-ordered")
            last = record.ts
            fh.write(record.encode() + "\n")


def read_header(path: str | Path) -> dict:
    with open(path, encoding="ascii") as fh:
        return _parse_header(fh.readline())


def _parse_header(line: str) -> dict:
    parts = line.rstrip("\n").split(" ")
    if not parts or parts[0] != FORMAT_MAGIC:
        raise TraceFormatError("missing trace header", 1)
    meta = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise TraceFormatError(f"bad header item {item!r}", 1)
        meta[key] = value
    if meta.get("version") != str(FORMAT_VERSION):
        raise TraceFormatError(f"unsupported trace version {meta.get('version')!r}", 1)
    return meta


def read_trace(path: str | Path) -> Iterator[TraceRecord]:
    """Yield records in file order; raises if the Summary record is missing."""
    with open(path, encoding="ascii") as fh:
        _parse_header(fh.readline())
        seen_summary = False
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                raise TraceFormatError("empty line", line_no)
            if seen_summary:
                raise TraceFormatError("records after the summary record", line_no)
            record = decode_record(line, line_no)
            seen_summary = record.kind == SUMMARY
            yield record
        if not seen_summary:
            raise IncompleteTraceError(f"{path}: trace has no summary record (truncated?)")


def load_trace(path: str | Path) -> list[TraceRecord]:
    return list(read_trace(path))


def sort_records(records: Iterable[TraceRecord]) -> list[TraceRecord]:
    """Deterministic capture order: by timestamp, then by encoded line; Summary last."""
    records = list(records)
    body = [r for r in records if r.kind != SUMMARY]
    summary = [r for r in records if r.kind == SUMMARY]
    keyed = sorted((r.ts, r.encode(), r) for r in body)
    return [r for _, _, r in keyed] + summary


@dataclass(frozen=True)
class MappedLink:
    link_id: str
    a: str
    b: str
    delay: int
    delayed: bool


@dataclass
class HardwareMapping:
    """Logical names to capture node ids, plus per-link configured delays."""

    routers: dict[str, str]
    peers: dict[str, str]
    links: dict[str, MappedLink]
    prober: str = "prober"
    _by_ends: dict = field(default_factory=dict, repr=False, compare=False)
    _names: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = list(self.routers.values()) + list(self.peers.values()) + [self.prober]
        if len(set(ids)) != len(ids):
            raise MappingError("node ids are not unique")
        known = set(ids)
        self._by_ends = {}
        for link in self.links.values():
            if link.a not in known or link.b not in known:
                raise MappingError(f"link {link.link_id} has an unresolved endpoint")
            ends = frozenset((link.a, link.b))
            if ends in self._by_ends:
                raise MappingError(f"duplicate link between {link.a} and {link.b}")
            self._by_ends[ends] = link
        self._names = {v: k for k, v in self.routers.items()}
        self._names.update({v: k for k, v in self.peers.items()})

    def link(self, a: str, b: str) -> MappedLink:
        try:
            return self._by_ends[frozenset((a, b))]
        except KeyError:
            raise MappingError(f"no link between {a} and {b}") from None

    def has_link(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._by_ends

    def name(self, node_id: str) -> str:
        try:
            return self._names[node_id]
        except KeyError:
            raise MappingError(f"unknown node id {node_id}") from None

    def knows(self, node_id: str) -> bool:
        return node_id in self._names or node_id == self.prober

    def is_peer_node(self, node_id: str) -> bool:
        return node_id in self._names and self._names[node_id] in self.peers

    def router_id(self, name: str) -> str:
        return self.routers[name]

    def node_id(self, name: str) -> str:
        return self.routers.get(name) or self.peers[name]

    def to_dict(self) -> dict:
        return {
            "version": MAPPING_VERSION,
            "prober": self.prober,
            "routers": dict(self.routers),
            "peers": dict(self.peers),
            "links": {
                lid: {"a": l.a, "b": l.b, "delay_us": l.delay, "delayed": l.delayed}
                for lid, l in sorted(self.links.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> HardwareMapping:
        if data.get("version") != MAPPING_VERSION:
            raise MappingError(f"unsupported mapping version {data.get('version')!r}")
        links = {
            lid: MappedLink(lid, v["a"], v["b"], int(v["delay_us"]), bool(v["delayed"]))
            for lid, v in data["links"].items()
        }
        return cls(dict(data["routers"]), dict(data["peers"]), links, data.get("prober", "prober"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> HardwareMapping:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise MappingError(f"{path}: malformed mapping ({exc})") from None


def mapping_for(topology) -> HardwareMapping:
    """Deterministic mapping for a simulated topology: routers r00.., peers x00.."""
    routers = {name: f"n{i:02d}" for i, name in enumerate(topology.routers)}
    peers = {ep.peer: f"x{i:02d}" for i, ep in enumerate(topology.external_peers)}
    links = {}
    for i, link in enumerate(topology.links):
        lid = f"L{i:02d}"
        links[lid] = MappedLink(lid, routers[link.a], routers[link.b], link.delay, True)
    for i, ep in enumerate(topology.external_peers):
        lid = f"E{i:02d}"
        links[lid] = MappedLink(lid, routers[ep.attached_to], peers[ep.peer], ep.delay, ep.delay > 0)
    for i, name in enumerate(topology.routers):
        lid = f"P{i:02d}"
        links[lid] = MappedLink(lid, "prober", routers[name], 0, False)
    return HardwareMapping(routers, peers, links)


@dataclass(frozen=True)
class Finding:
    index: int
    code: str
    message: str

    def as_dict(self) -> dict:
        return {"index": self.index, "code": self.code, "message": self.message}


def validate_trace(records: Iterable[TraceRecord], mapping: HardwareMapping) -> list[Finding]:
    """Structural checks; an empty list means the trace is valid.

    Checks node and link ids against the mapping, per-link timestamp
    monotonicity, duplicate observations, pre/post twinning on delayed links
    and summary placement.
    """
    records = list(records)
    findings: list[Finding] = []
    last_ts: dict[tuple, int] = {}
    seen: dict[tuple, int] = {}
    pre: dict[tuple, int] = {}
    post: dict[tuple, int] = {}
    summaries = [i for i, r in enumerate(records) if r.kind == SUMMARY]
    if len(summaries) != 1 or summaries[0] != len(records) - 1:
        findings.append(Finding(summaries[0] if summaries else len(records), "summary",
                                "trace must end with exactly one summary record"))
    for i, rec in enumerate(records):
        if rec.kind == SUMMARY:
            continue
        bad_node = [n for n in (rec.link_from, rec.link_to) if not mapping.knows(n)]
        if rec.kind == PROBE and not mapping.knows(rec.src):
            bad_node.append(rec.src)
        if rec.kind == BGP:
            bad_node += [n for n in (rec.sess_from, rec.sess_to) if not mapping.knows(n)]
        if bad_node:
            findings.append(Finding(i, "unknown-node", f"unknown node id(s) {sorted(set(bad_node))}"))
            continue
        if not mapping.has_link(rec.link_from, rec.link_to):
            findings.append(Finding(i, "unknown-link", f"no link {rec.link_from}-{rec.link_to}"))
            continue
        link = mapping.link(rec.link_from, rec.link_to)
        if link.delayed == (rec.stage == UNDELAYED):
            findings.append(Finding(i, "stage", f"stage {rec.stage} on link {link.link_id}"))
        lane = (rec.link_from, rec.link_to, rec.stage)
        if lane in last_ts and rec.ts < last_ts[lane]:
            findings.append(Finding(i, "non-monotone", f"timestamp goes backwards on {link.link_id}/{rec.stage}"))
        last_ts[lane] = max(rec.ts, last_ts.get(lane, rec.ts))
        key = (rec.identity(), rec.stage)
        if key in seen:
            findings.append(Finding(i, "duplicate", f"duplicate observation (first at record {seen[key]})"))
            continue
        seen[key] = i
        if rec.stage == PRE:
            pre[rec.identity()] = i
        elif rec.stage == POST:
            post[rec.identity()] = i
    for ident, i in pre.items():
        if ident not in post:
            findings.append(Finding(i, "missing-twin", "pre-delay record without post-delay twin"))
    for ident, i in post.items():
        if ident not in pre:
            findings.append(Finding(i, "orphan-post", "post-delay record without pre-delay twin"))
    findings.sort(key=lambda f: (f.index, f.code))
    return findings
