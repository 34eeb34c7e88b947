from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ibgpconv.model import ExternalPeer, IbgpConfig, Link, Route, Topology, compute_igp  # noqa: E402
from ibgpconv.probe import DataPlane, ProbeConfig  # noqa: E402
from ibgpconv.sim import WITHDRAW, EventSpec, ProcessingModel, build_initial_state, run_event  # noqa: E402

MS = 1000
X_GRID = (1 * MS, 10 * MS, 100 * MS, 700 * MS)
FIXTURES = Path(__file__).parent / "fixtures"


def line_topology(backup_at: str, backup_peer: str) -> Topology:
    return Topology(
        ("r1", "r2", "r3"),
        (Link("r1", "r2", 10 * MS), Link("r2", "r3", 10 * MS)),
        (ExternalPeer("e1", "r1", 10 * MS), ExternalPeer(backup_peer, backup_at, 10 * MS)),
    )


class Run:
    """A simulated withdraw with everything the tests need to inspect it."""

    def __init__(self, topology, routes, event, x, ibgp=None, cutoff="peer", seed=0, jitter=0.0):
        self.topology = topology
        self.igp = compute_igp(topology)
        self.initial = build_initial_state(topology, ibgp or IbgpConfig.full_mesh(), routes, igp=self.igp)
        self.result = run_event(self.initial, event, ProcessingModel(x, jitter=jitter), seed=seed)
        self.config = ProbeConfig(cutoff=cutoff)
        self.dp = DataPlane.from_result(self.result, topology, self.igp, self.config)


def path3_run(x: int, **kw) -> Run:
    """e1-r1-r2-r3-e3, all links 10 ms, e1 withdraws at t0 = 0."""
    topo = line_topology("r3", "e3")
    routes = [Route("p", "e1", "r1", 2), Route("p", "e3", "r3", 3)]
    return Run(topo, routes, EventSpec(WITHDRAW, "e1", ("p",)), x, **kw)


def mid_backup_run(x: int, **kw) -> Run:
    """Like path3_run, but the backup peer e2 sits at r2 instead of r3."""
    topo = line_topology("r2", "e2")
    routes = [Route("p", "e1", "r1", 2), Route("p", "e2", "r2", 3)]
    return Run(topo, routes, EventSpec(WITHDRAW, "e1", ("p",)), x, **kw)


@pytest.fixture(scope="session")
def path3_100():
    return path3_run(100 * MS)


@pytest.fixture(scope="session")
def mid_backup_100():
    return mid_backup_run(100 * MS)
