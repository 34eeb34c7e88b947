"""Data-plane probing over time-varying FIBs.

Two independent routes to a router's violation time:

* :func:`exact_violation_intervals` sweeps departure time piece by piece. A
  walk at departure ``t`` crosses a fixed sequence of (router, FIB segment)
  pairs; the set of departures sharing that sequence is an interval, so one
  walk per piece classifies the whole piece.
* :func:`probe_series` injects probes at a fixed rate and counts violating
  drops, mirroring what a hardware prober observes.
"""

from __future__ import annotations

import warnings
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import SampleInvalidError
from .model import IgpState, Topology
from .sim import NEVER, BlackHole, DeliverExternal, FibTimeline, PeerActivity, SimulationResult

PEER_CUTOFF = "peer"
RECEIPT_CUTOFF = "receipt"
CUTOFFS = (PEER_CUTOFF, RECEIPT_CUTOFF)

DELIVERED = "delivered"
DROP_BLACK_HOLE = "blackhole"
DROP_RPF = "rpf"
DROP_TTL = "ttl"
DROP_INACTIVE_PEER = "inactive-peer"

# departure times at or beyond this are "after everything"
_HORIZON = 1 << 61
_EARLIEST = -(1 << 61)
_FINAL_DEPARTURE = 1 << 60
_INITIAL_DEPARTURE = -(1 << 60)

US_PER_S = 1_000_000


@dataclass(frozen=True)
class ProbeConfig:
    rate_pps: int = 1000
    sources: tuple[str, ...] = ()  # empty: every router
    prefixes: tuple[str, ...] = ()
    window: tuple[int, int] | None = None  # relative to t0; None: derived from the run
    ttl: int = 64
    rpf_drop: bool = True
    cutoff: str = PEER_CUTOFF
    edge_span: int = US_PER_S
    margin: int = 1_500_000
    min_signal_change: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "prefixes", tuple(self.prefixes))
        if self.rate_pps <= 0:
            raise ValueError("rate_pps must be positive")
        if self.ttl <= 0:
            raise ValueError("ttl must be positive")
        if self.cutoff not in CUTOFFS:
            raise ValueError(f"cutoff must be one of {CUTOFFS}")
        if self.window is not None and not self.window[0] < 0 < self.window[1]:
            raise ValueError("probe window must bracket the event: start < 0 < end")
        if US_PER_S / self.rate_pps > self.min_signal_change:
            warnings.warn(
                f"probing every {US_PER_S / self.rate_pps:.0f} us is slower than the "
                f"{self.min_signal_change} us signal resolution",
                stacklevel=2,
            )

    @property
    def interval(self) -> int:
        return US_PER_S // self.rate_pps


@dataclass(frozen=True)
class Hop:
    router: str
    arrived_at: int
    action: object


@dataclass(frozen=True)
class Terminal:
    kind: str
    node: str
    at: int

    @property
    def dropped(self) -> bool:
        return self.kind != DELIVERED


@dataclass(frozen=True)
class ProbeFate:
    src: str
    prefix: str
    seq: int
    departed_at: int
    hops: tuple[Hop, ...]
    terminal: Terminal
    violating: bool


@dataclass
class ViolationReport:
    src: str
    prefix: str
    exact_intervals: list[tuple[int, int]] | None
    exact_total: int | None
    probe_estimate: int | None
    dropped_count: int | None
    rate_pps: int
    metadata: dict = field(default_factory=dict)


class DataPlane:
    """Forwarding view over one simulation run, shared by every walk."""

    def __init__(
        self,
        topology: Topology,
        igp: IgpState,
        timelines: FibTimeline,
        activity: PeerActivity,
        ttl: int = 64,
        rpf_drop: bool = True,
        cutoff: str = PEER_CUTOFF,
    ):
        if cutoff not in CUTOFFS:
            raise ValueError(f"cutoff must be one of {CUTOFFS}")
        self.topology = topology
        self.igp = igp
        self.timelines = timelines
        self.activity = activity
        self.ttl = ttl
        self.rpf_drop = rpf_drop
        self.cutoff = cutoff
        self._stable: dict[tuple[str, str], bool] = {}

    @classmethod
    def from_result(cls, result: SimulationResult, topology: Topology, igp: IgpState, config: ProbeConfig):
        return cls(topology, igp, result.timelines, result.activity, config.ttl, config.rpf_drop, config.cutoff)

    def with_cutoff(self, cutoff: str) -> DataPlane:
        return DataPlane(self.topology, self.igp, self.timelines, self.activity, self.ttl, self.rpf_drop, cutoff)

    def _peer_inactive(self, peer: str, prefix: str, handover: int, ext: int):
        """(inactive?, boundary in handover time or None) for the peer hand-off."""
        key = (peer, prefix)
        activity = self.activity
        arrival = handover + ext
        bounds = []
        inactive = False
        start = activity.active_from.get(key)
        if start is not None:
            bounds.append(start - ext)
            if arrival < start:
                inactive = True
        if self.cutoff == PEER_CUTOFF:
            stop = activity.inactive_from.get(key)
            if stop is not None:
                bounds.append(stop - ext)
                if arrival >= stop:
                    inactive = True
        else:
            stop = activity.receipt_at.get(key)
            if stop is not None:
                bounds.append(stop)
                if handover >= stop:
                    inactive = True
        return inactive, bounds

    def _walk(self, src: str, prefix: str, depart: int, record: bool):
        """Core walk. Returns (terminal, hops, lo, hi) where [lo, hi) is the set of
        departures that follow exactly the same sequence of FIB segments."""
        tl_since = self.timelines._since
        tl_actions = self.timelines._actions
        next_hop = self.igp.next_hop
        topology = self.topology
        rpf = self.rpf_drop
        lo, hi = _EARLIEST, _HORIZON
        hops = [] if record else None
        router, prev, t = src, None, depart
        ttl = self.ttl
        while True:
            if ttl == 0:
                return Terminal(DROP_TTL, router, t), hops, lo, hi
            ttl -= 1
            since = tl_since[(router, prefix)]
            i = bisect_right(since, t) - 1
            action = tl_actions[(router, prefix)][i]
            offset = t - depart
            if since[i] - offset > lo:
                lo = since[i] - offset
            if i + 1 < len(since) and since[i + 1] - offset < hi:
                hi = since[i + 1] - offset
            if record:
                hops.append(Hop(router, t, action))
            if isinstance(action, BlackHole):
                return Terminal(DROP_BLACK_HOLE, router, t), hops, lo, hi
            if isinstance(action, DeliverExternal):
                ext = topology.peer(action.peer).delay
                inactive, bounds = self._peer_inactive(action.peer, prefix, t, ext)
                for b in bounds:
                    b -= offset
                    if b <= depart:
                        lo = max(lo, b)
                    else:
                        hi = min(hi, b)
                kind = DROP_INACTIVE_PEER if inactive else DELIVERED
                return Terminal(kind, action.peer, t + ext), hops, lo, hi
            nxt = next_hop[(router, action.egress)]
            if rpf and nxt == prev:
                return Terminal(DROP_RPF, router, t), hops, lo, hi
            t += topology.link_delay(router, nxt)
            prev, router = router, nxt

    def stable_ok(self, src: str, prefix: str) -> bool:
        """Delivered in both the initial and the final stable state."""
        key = (src, prefix)
        if key not in self._stable:
            first = self._walk(src, prefix, _INITIAL_DEPARTURE, False)[0]
            last = self._walk(src, prefix, _FINAL_DEPARTURE, False)[0]
            self._stable[key] = not first.dropped and not last.dropped
        return self._stable[key]

    def is_violating(self, src: str, prefix: str, terminal: Terminal) -> bool:
        return terminal.dropped and self.stable_ok(src, prefix)


def walk_packet(dp: DataPlane, src: str, prefix: str, depart_time: int, seq: int = 0) -> ProbeFate:
    terminal, hops, _, _ = dp._walk(src, prefix, depart_time, True)
    return ProbeFate(src, prefix, seq, depart_time, tuple(hops), terminal, dp.is_violating(src, prefix, terminal))


def fate_pieces(dp: DataPlane, src: str, prefix: str) -> Iterator[tuple[int, int, Terminal]]:
    """Partition of departure time into maximal-path pieces ``(lo, hi, terminal)``."""
    t = _EARLIEST + 1
    while True:
        terminal, _, lo, hi = dp._walk(src, prefix, t, False)
        if hi <= t:
            raise RuntimeError(f"piece sweep stalled at {t}")
        yield lo, hi, terminal
        if hi >= _HORIZON:
            return
        t = hi


def exact_violation_intervals(dp: DataPlane, src: str, prefix: str) -> list[tuple[int, int]]:
    """Maximal half-open intervals ``[start, end)`` of violating departure times."""
    if not dp.stable_ok(src, prefix):
        return []
    intervals: list[tuple[int, int]] = []
    for lo, hi, terminal in fate_pieces(dp, src, prefix):
        if not terminal.dropped:
            continue
        if hi >= _HORIZON or lo <= _EARLIEST:
            raise RuntimeError(f"unbounded violation for {src}/{prefix}")
        if intervals and intervals[-1][1] == lo:
            intervals[-1] = (intervals[-1][0], hi)
        else:
            intervals.append((lo, hi))
    return intervals


def probe_window(config: ProbeConfig, result: SimulationResult) -> tuple[int, int]:
    """Absolute ``[start, end)`` departure window for probing ``result``."""
    if config.window is not None:
        return result.t0 + config.window[0], result.t0 + config.window[1]
    settle = max(result.converged_at, result.last_fib_change or result.t0)
    return result.t0 - config.margin, settle + config.margin


@dataclass
class ProbeSeries:
    src: str
    prefix: str
    rate_pps: int
    window: tuple[int, int]
    sent: int
    dropped_count: int
    fates: list[ProbeFate] | None

    @property
    def probe_estimate(self) -> int:
        return self.dropped_count * US_PER_S // self.rate_pps


def probe_departures(window: tuple[int, int], rate_pps: int) -> range:
    interval = US_PER_S // rate_pps
    return range(window[0], window[1], interval)


def probe_series(
    dp: DataPlane,
    config: ProbeConfig,
    window: tuple[int, int],
    src: str,
    prefix: str,
    keep_fates: bool = False,
    check_edges: bool = True,
) -> ProbeSeries:
    """Inject probes at ``rate_pps`` from ``src`` toward ``prefix`` and count violating drops.

    Raises :class:`SampleInvalidError` if any probe departing in the first or
    last ``edge_span`` of the window is not delivered.
    """
    departures = probe_departures(window, config.rate_pps)
    stable = dp.stable_ok(src, prefix)
    head_end = window[0] + config.edge_span
    tail_start = window[1] - config.edge_span
    dropped = 0
    fates = [] if keep_fates else None
    for seq, t in enumerate(departures):
        terminal, hops, _, _ = dp._walk(src, prefix, t, keep_fates)
        bad = terminal.dropped
        if bad and stable:
            dropped += 1
        if check_edges and bad and (t < head_end or t >= tail_start):
            raise SampleInvalidError(
                f"probe {src}->{prefix} seq {seq} at {t} dropped inside the edge span"
            )
        if keep_fates:
            fates.append(ProbeFate(src, prefix, seq, t, tuple(hops), terminal, bad and stable))
    return ProbeSeries(src, prefix, config.rate_pps, window, len(departures), dropped, fates)


def violation_reports(
    dp: DataPlane,
    config: ProbeConfig,
    window: tuple[int, int],
    sources: Sequence[str],
    prefixes: Sequence[str],
    keep_fates: bool = False,
) -> tuple[list[ViolationReport], list[ProbeFate]]:
    """Exact and probe-based violation times for every (source, prefix)."""
    other = dp.with_cutoff(RECEIPT_CUTOFF if dp.cutoff == PEER_CUTOFF else PEER_CUTOFF)
    reports, fates = [], []
    for prefix in prefixes:
        for src in sources:
            intervals = exact_violation_intervals(dp, src, prefix)
            alt = exact_violation_intervals(other, src, prefix)
            series = probe_series(dp, config, window, src, prefix, keep_fates=keep_fates)
            if keep_fates:
                fates.extend(series.fates)
            reports.append(
                ViolationReport(
                    src=src,
                    prefix=prefix,
                    exact_intervals=intervals,
                    exact_total=sum(b - a for a, b in intervals),
                    probe_estimate=series.probe_estimate,
                    dropped_count=series.dropped_count,
                    rate_pps=config.rate_pps,
                    metadata={
                        "cutoff": dp.cutoff,
                        f"exact_total_{other.cutoff}": sum(b - a for a, b in alt),
                    },
                )
            )
    return reports, fates
