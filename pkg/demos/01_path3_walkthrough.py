"""
Transient violations on a three-router line
============================================

Three routers r1-r2-r3, every link 10 ms. r1 and r3 each have an external
peer; r1's route is preferred. At t0 = 0 the peer of r1 withdraws the
prefix and each router needs x ms to process one BGP message.
"""

from ibgpconv.model import ExternalPeer, IbgpConfig, Link, Route, Topology, compute_igp
from ibgpconv.probe import DataPlane, ProbeConfig, exact_violation_intervals, probe_series, probe_window
from ibgpconv.sim import WITHDRAW, EventSpec, ProcessingModel, build_initial_state, run_event

MS = 1000  # all times are integer microseconds

topology = Topology(
    ("r1", "r2", "r3"),
    (Link("r1", "r2", 10 * MS), Link("r2", "r3", 10 * MS)),
    (ExternalPeer("e1", "r1", 10 * MS), ExternalPeer("e3", "r3", 10 * MS)),
)
routes = [Route("p", "e1", "r1", 2), Route("p", "e3", "r3", 3)]
igp = compute_igp(topology)
initial = build_initial_state(topology, IbgpConfig.full_mesh(), routes, igp=igp)

#
# Run the control plane for x = 100 ms and look at the messages it exchanged.
#
x = 100 * MS
result = run_event(initial, EventSpec(WITHDRAW, "e1", ("p",)), ProcessingModel(x))
for m in result.messages:
    print(f"{m.sender:>3} -> {m.receiver:<3} {m.kind:<8} sent {m.sent_at / MS:6.0f} ms, arrives {m.arrives_at / MS:6.0f} ms")

#
# Each router's forwarding history: forward, black hole, then the new egress.
#
for r in topology.routers:
    print(r, [(t / MS if t > -10**9 else "start", a) for t, a in result.timelines.entries(r, "p")])

#
# Exact violation intervals: r2 loses traffic for 3x + 60 ms, starting 20 ms
# before the event because packets already on their way to e1 are lost too.
#
config = ProbeConfig()
dp = DataPlane.from_result(result, topology, igp, config)
for r in topology.routers:
    intervals = exact_violation_intervals(dp, r, "p")
    print(r, [(a / MS, b / MS) for a, b in intervals], "total", sum(b - a for a, b in intervals) / MS, "ms")

#
# A 1000 pps probe stream estimates the same number from its drop count.
#
series = probe_series(dp, config, probe_window(config, result), "r2", "p")
print("probe estimate for r2:", series.probe_estimate / MS, "ms from", series.dropped_count, "drops")
