"""Offline pipeline from capture records to violation reports."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import (
    ContractViolation,
    IncompleteTraceError,
    InconclusiveConvergenceError,
    MalformedTraceError,
)
from .probe import PEER_CUTOFF, RECEIPT_CUTOFF, US_PER_S, ViolationReport
from .sim import PeerActivity
from .traceio import BGP, KEEPALIVE, POST, PRE, PROBE, SUMMARY, WITHDRAW, HardwareMapping, TraceRecord

DEFAULT_QUIET_WINDOW = 10 * US_PER_S
DEFAULT_DELAY_TOLERANCE = 50
_STAGE_ORDER = {PRE: 0, "undelayed": 0, POST: 1}


@dataclass(frozen=True)
class Observation:
    ts: int
    link_from: str
    link_to: str
    stage: str
    ttl: int


@dataclass
class Journey:
    """One probe packet, identified by (source router, prefix, sequence number)."""

    src: str
    prefix: str
    seq: int
    observations: list[Observation]
    delivered: bool = False
    node: str | None = None  # peer it reached, or router/link end where it vanished

    @property
    def departed_at(self) -> int:
        return self.observations[0].ts

    @property
    def dropped(self) -> bool:
        return not self.delivered


def peer_activity_from_records(records: Iterable[TraceRecord], mapping: HardwareMapping) -> PeerActivity:
    """Recover when each peer withdrew each prefix from its Withdraw messages.

    The first record of the withdraw on the peer link is the peer's own
    cut-off; the post-delay record (or the single undelayed one) is the
    instant the border router receives it.
    """
    activity = PeerActivity()
    for rec in records:
        if rec.kind != BGP or rec.msg != WITHDRAW or not mapping.is_peer_node(rec.sess_from):
            continue
        key = (mapping.name(rec.sess_from), rec.prefix)
        if rec.stage != POST:
            activity.inactive_from[key] = min(rec.ts, activity.inactive_from.get(key, rec.ts))
        if rec.stage != PRE:
            activity.receipt_at[key] = min(rec.ts, activity.receipt_at.get(key, rec.ts))
    return activity


def reconstruct_journeys(
    records: Iterable[TraceRecord],
    mapping: HardwareMapping,
    activity: PeerActivity | None = None,
    cutoff: str = PEER_CUTOFF,
) -> dict[tuple[str, str, int], Journey]:
    """Group probe records into journeys and classify each terminal.

    A journey is delivered iff its last observation is on a link to an
    external peer that is still active for the prefix: under the ``peer``
    cut-off the packet must reach the peer before the peer withdrew; under
    ``receipt`` it must be handed over before the border router received the
    withdraw. Otherwise the packet was dropped where it was last seen.
    """
    records = list(records)
    if activity is None:
        activity = peer_activity_from_records(records, mapping)
    grouped: dict[tuple[str, str, int], list[Observation]] = defaultdict(list)
    seen = set()
    for rec in records:
        if rec.kind != PROBE:
            continue
        mapping.link(rec.link_from, rec.link_to)
        ident = (rec.src, rec.prefix, rec.seq, rec.link_from, rec.link_to, rec.stage, rec.ttl)
        if ident in seen:
            raise MalformedTraceError(f"duplicate observation of probe {rec.src}/{rec.prefix}/{rec.seq} on {rec.link_from}->{rec.link_to}")
        seen.add(ident)
        grouped[(mapping.name(rec.src), rec.prefix, rec.seq)].append(
            Observation(rec.ts, rec.link_from, rec.link_to, rec.stage, rec.ttl)
        )
    journeys = {}
    for (src, prefix, seq), obs in sorted(grouped.items()):
        obs.sort(key=lambda o: (o.ts, -o.ttl, _STAGE_ORDER[o.stage]))
        journey = Journey(src, prefix, seq, obs)
        last = obs[-1]
        if mapping.is_peer_node(last.link_to):
            peer = mapping.name(last.link_to)
            handover = min(o.ts for o in obs if o.link_to == last.link_to)
            arrival = max(o.ts for o in obs if o.link_to == last.link_to)
            reached = last.stage != PRE or not mapping.link(last.link_from, last.link_to).delayed
            journey.delivered = reached and _peer_active(activity, (peer, prefix), handover, arrival, cutoff)
            journey.node = peer
        else:
            journey.node = last.link_to
        journeys[(src, prefix, seq)] = journey
    return journeys


def _peer_active(activity: PeerActivity, key, handover: int, arrival: int, cutoff: str) -> bool:
    start = activity.active_from.get(key)
    if start is not None and arrival < start:
        return False
    if cutoff == PEER_CUTOFF:
        stop = activity.inactive_from.get(key)
        return stop is None or arrival < stop
    if cutoff == RECEIPT_CUTOFF:
        stop = activity.receipt_at.get(key)
        return stop is None or handover < stop
    raise ContractViolation(f"unknown cutoff {cutoff!r}")


def detect_convergence(records: Iterable[TraceRecord], quiet_window: int = DEFAULT_QUIET_WINDOW) -> int:
    """Timestamp of the last BGP update/withdraw followed by ``quiet_window`` of silence.

    Keep-alives are ignored. Raises :class:`InconclusiveConvergenceError`
    if the capture ends before the quiet window has elapsed.
    """
    start = end = None
    times = []
    for rec in records:
        start = rec.ts if start is None else min(start, rec.ts)
        end = rec.ts if end is None else max(end, rec.ts)
        if rec.kind == BGP and rec.msg != KEEPALIVE:
            times.append(rec.ts)
    if start is None:
        raise ContractViolation("empty record stream")
    if not times:
        return start
    times.sort()
    for t, nxt in zip(times, times[1:]):
        if nxt - t > quiet_window:
            return t
    if end - times[-1] < quiet_window:
        raise InconclusiveConvergenceError(
            f"capture ends {end - times[-1]} us after the last update, inside the {quiet_window} us quiet window"
        )
    return times[-1]


def violation_from_journeys(
    journeys: Mapping[tuple[str, str, int], Journey] | Iterable[Journey],
    rate_pps: int,
    stable_ok: Callable[[str, str], bool] | None = None,
) -> dict[tuple[str, str], ViolationReport]:
    """Per (source, prefix): violating drops converted to microseconds.

    ``stable_ok`` tells whether a (source, prefix) pair is reachable in both
    stable states; by default every pair is (as in all shipped scenarios), so
    every drop counts as violating.
    """
    if isinstance(journeys, Mapping):
        journeys = journeys.values()
    counts: dict[tuple[str, str], int] = {}
    for j in journeys:
        key = (j.src, j.prefix)
        counts.setdefault(key, 0)
        if j.dropped and (stable_ok is None or stable_ok(j.src, j.prefix)):
            counts[key] += 1
    return {
        key: ViolationReport(
            src=key[0],
            prefix=key[1],
            exact_intervals=None,
            exact_total=None,
            probe_estimate=n * US_PER_S // rate_pps,
            dropped_count=n,
            rate_pps=rate_pps,
        )
        for key, n in sorted(counts.items())
    }


@dataclass
class SampleCheckResult:
    edges_ok: bool
    delayer_ok: bool
    drop_counters: int
    notes: list[str] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.edges_ok and self.delayer_ok and self.drop_counters == 0

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "edges_ok": self.edges_ok,
            "delayer_ok": self.delayer_ok,
            "drop_counters": self.drop_counters,
            "notes": list(self.notes),
        }


def check_sample(
    records: Iterable[TraceRecord],
    mapping: HardwareMapping,
    journeys: Mapping[tuple[str, str, int], Journey] | None = None,
    edge_span: int = US_PER_S,
    tolerance: int = DEFAULT_DELAY_TOLERANCE,
    cutoff: str = PEER_CUTOFF,
) -> SampleCheckResult:
    """Sample correctness: clean edges, faithful delayers, no capture drops.

    Edges: every probe of a (source, prefix) series that departed within
    ``edge_span`` of the series' first or last departure must be delivered.
    Delayers: every pre-delay record has exactly one post-delay twin whose
    timestamp is later by the configured link delay, within ``tolerance``.
    """
    records = list(records)
    summaries = [r for r in records if r.kind == SUMMARY]
    if not summaries:
        raise IncompleteTraceError("trace has no summary record")
    notes: list[str] = []

    pre: dict[tuple, list[TraceRecord]] = defaultdict(list)
    post: dict[tuple, list[TraceRecord]] = defaultdict(list)
    for rec in records:
        if rec.stage == PRE:
            pre[rec.identity()].append(rec)
        elif rec.stage == POST:
            post[rec.identity()].append(rec)
    delayer_ok = True
    for ident in sorted(set(pre) | set(post), key=repr):
        before, after = pre.get(ident, []), post.get(ident, [])
        if len(before) != 1 or len(after) != 1:
            delayer_ok = False
            notes.append(f"delayer: {len(before)} pre / {len(after)} post records for {ident}")
            continue
        a, b = before[0], after[0]
        expected = mapping.link(a.link_from, a.link_to).delay
        if abs((b.ts - a.ts) - expected) > tolerance:
            delayer_ok = False
            notes.append(f"delayer: {ident} delayed {b.ts - a.ts} us, expected {expected} us")

    if journeys is None:
        journeys = reconstruct_journeys(records, mapping, cutoff=cutoff)
    series: dict[tuple[str, str], list[Journey]] = defaultdict(list)
    for j in journeys.values():
        series[(j.src, j.prefix)].append(j)
    edges_ok = True
    for (src, prefix), items in sorted(series.items()):
        first = min(j.departed_at for j in items)
        last = max(j.departed_at for j in items)
        bad = [
            j.seq for j in items
            if j.dropped and (j.departed_at < first + edge_span or j.departed_at > last - edge_span)
        ]
        if bad:
            edges_ok = False
            notes.append(f"edges: {src}->{prefix} lost {len(bad)} probe(s) near the capture edges (seq {bad[0]})")

    drops = sum(r.drops for r in summaries)
    if drops:
        notes.append(f"capture dropped {drops} packet(s)")
    return SampleCheckResult(edges_ok, delayer_ok, drops, notes)


@dataclass(frozen=True)
class PercentileSummary:
    q5: int
    q25: int
    q50: int
    q75: int
    q95: int
    n: int

    def as_dict(self) -> dict:
        return {"n": self.n, "q5": self.q5, "q25": self.q25, "q50": self.q50, "q75": self.q75, "q95": self.q95}


def nearest_rank(sorted_values, q: int):
    """Nearest-rank percentile ``q`` (integer percent) of ascending ``sorted_values``."""
    n = len(sorted_values)
    rank = max(1, -(-q * n // 100))
    return sorted_values[rank - 1]


def summarize(values: Iterable[int]) -> PercentileSummary:
    data = sorted(values)
    if not data:
        raise ContractViolation("cannot summarize an empty list")
    q = {p: nearest_rank(data, p) for p in (5, 25, 50, 75, 95)}
    return PercentileSummary(q[5], q[25], q[50], q[75], q[95], len(data))
