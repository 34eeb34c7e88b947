"""Turn a simulated run into the records a hardware capture would produce."""

from __future__ import annotations

from typing import Iterable

from .model import IgpState, Topology
from .probe import DROP_TTL, ProbeFate
from .sim import SimulationResult
from .traceio import BGP, POST, PRE, PROBE, SUMMARY, UNDELAYED, HardwareMapping, TraceRecord, sort_records


def _link_records(mapping: HardwareMapping, a: str, b: str, start: int, end: int, **fields) -> list[TraceRecord]:
    link = mapping.link(a, b)
    if not link.delayed:
        return [TraceRecord(start, link_from=a, link_to=b, stage=UNDELAYED, **fields)]
    return [
        TraceRecord(start, link_from=a, link_to=b, stage=PRE, **fields),
        TraceRecord(end, link_from=a, link_to=b, stage=POST, **fields),
    ]


def probe_records(fate: ProbeFate, mapping: HardwareMapping, ttl: int) -> list[TraceRecord]:
    """Records of one probe: the injection hop, every traversed link, and the
    final hand-off to an external peer if the probe got that far."""
    src = mapping.router_id(fate.src)
    base = dict(kind=PROBE, src=src, prefix=fate.prefix, seq=fate.seq)
    out = [TraceRecord(fate.departed_at, link_from=mapping.prober, link_to=src, stage=UNDELAYED, ttl=ttl, **base)]
    hops = fate.hops
    stops = [(h.router, h.arrived_at) for h in hops]
    if fate.terminal.kind == DROP_TTL and fate.terminal.node != hops[-1].router:
        stops.append((fate.terminal.node, fate.terminal.at))
    for i in range(len(stops) - 1):
        (a, ta), (b, tb) = stops[i], stops[i + 1]
        out += _link_records(mapping, mapping.router_id(a), mapping.router_id(b), ta, tb, ttl=ttl - i - 1, **base)
    terminal = fate.terminal
    if mapping.is_peer_node(mapping.peers.get(terminal.node, "")):
        last = hops[-1]
        out += _link_records(
            mapping, mapping.router_id(last.router), mapping.peers[terminal.node],
            last.arrived_at, terminal.at, ttl=ttl - len(hops), **base,
        )
    return out


def message_records(result: SimulationResult, topology: Topology, igp: IgpState, mapping: HardwareMapping) -> list[TraceRecord]:
    out = []
    for msg in result.messages:
        fields = dict(
            kind=BGP, msg=msg.kind, prefix=msg.prefix,
            sess_from=mapping.node_id(msg.sender), sess_to=mapping.node_id(msg.receiver), mid=msg.msg_id,
        )
        if topology.has_peer(msg.sender):
            out += _link_records(mapping, fields["sess_from"], fields["sess_to"], msg.sent_at, msg.arrives_at, **fields)
            continue
        t = msg.sent_at
        path = igp.path(msg.sender, msg.receiver)
        for a, b in zip(path, path[1:]):
            t_next = t + topology.link_delay(a, b)
            out += _link_records(mapping, mapping.router_id(a), mapping.router_id(b), t, t_next, **fields)
            t = t_next
    return out


def capture_records(
    result: SimulationResult,
    fates: Iterable[ProbeFate],
    topology: Topology,
    igp: IgpState,
    mapping: HardwareMapping,
    ttl: int,
    quiet_window: int,
) -> list[TraceRecord]:
    """All records of a run in capture order, ending with the Summary.

    The capture stays open until ``quiet_window`` after convergence so that the
    convergence detector can confirm the end of the BGP activity.
    """
    records = message_records(result, topology, igp, mapping)
    for fate in fates:
        records += probe_records(fate, mapping, ttl)
    end = result.converged_at + quiet_window
    if records:
        end = max(end, max(r.ts for r in records))
    records.append(TraceRecord(end, SUMMARY, drops=0))
    return sort_records(records)
