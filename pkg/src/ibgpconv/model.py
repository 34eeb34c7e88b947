"""Static network model: topology, IGP shortest paths, iBGP sessions and the
BGP decision process.

All delays are integer microseconds. Router order inside a :class:`Topology`
doubles as the BGP router-id order used by the decision-process tie-break, so
scenario files control it simply by listing routers.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ContractViolation, ModelError

FULL_MESH = "full-mesh"
ROUTE_REFLECTION = "route-reflection"


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    delay: int
    igp_cost: int = 1

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class ExternalPeer:
    peer: str
    attached_to: str
    delay: int


@dataclass(frozen=True)
class Topology:
    routers: tuple[str, ...]
    links: tuple[Link, ...]
    external_peers: tuple[ExternalPeer, ...] = ()
    _adj: dict = field(init=False, repr=False, compare=False)
    _peers: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "routers", tuple(self.routers))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "external_peers", tuple(self.external_peers))
        if len(set(self.routers)) != len(self.routers):
            raise ModelError("duplicate router ids")
        if not self.routers:
            raise ModelError("topology has no routers")
        known = set(self.routers)
        adj: dict[str, dict[str, Link]] = {r: {} for r in self.routers}
        for link in self.links:
            if link.a not in known or link.b not in known:
                raise ModelError(f"link {link.a}-{link.b} references an unknown router")
            if link.a == link.b:
                raise ModelError(f"self-loop on {link.a}")
            if link.delay <= 0:
                raise ModelError(f"link {link.a}-{link.b}: propagation delay must be > 0")
            if link.igp_cost < 1:
                raise ModelError(f"link {link.a}-{link.b}: igp cost must be >= 1")
            if link.b in adj[link.a]:
                raise ModelError(f"parallel link {link.a}-{link.b}")
            adj[link.a][link.b] = link
            adj[link.b][link.a] = link
        peers: dict[str, ExternalPeer] = {}
        for ep in self.external_peers:
            if ep.peer in peers or ep.peer in known:
                raise ModelError(f"duplicate node id {ep.peer}")
            if ep.attached_to not in known:
                raise ModelError(f"peer {ep.peer} attaches to unknown router {ep.attached_to}")
            if ep.delay < 0:
                raise ModelError(f"peer {ep.peer}: negative delay")
            peers[ep.peer] = ep
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_peers", peers)

    def neighbors(self, router: str) -> dict[str, Link]:
        return self._adj[router]

    def link_delay(self, a: str, b: str) -> int:
        return self._adj[a][b].delay

    def peer(self, peer: str) -> ExternalPeer:
        try:
            return self._peers[peer]
        except KeyError:
            raise ModelError(f"unknown external peer {peer}") from None

    def has_peer(self, peer: str) -> bool:
        return peer in self._peers

    def rank(self) -> dict[str, int]:
        """Router-id order: position in the declared router list."""
        return {r: i for i, r in enumerate(self.routers)}

    def is_connected(self) -> bool:
        seen = {self.routers[0]}
        stack = [self.routers[0]]
        while stack:
            node = stack.pop()
            for nb in self._adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.routers)


@dataclass(frozen=True)
class IgpState:
    next_hop: Mapping[tuple[str, str], str]
    path_delay: Mapping[tuple[str, str], int]
    path_cost: Mapping[tuple[str, str], int]

    def path(self, src: str, dst: str) -> list[str]:
        hops = [src]
        while hops[-1] != dst:
            hops.append(self.next_hop[(hops[-1], dst)])
        return hops

    def delay(self, src: str, dst: str) -> int:
        return self.path_delay[(src, dst)]

    def cost(self, src: str, dst: str) -> int:
        return self.path_cost[(src, dst)]


def compute_igp(topology: Topology) -> IgpState:
    """All-pairs shortest paths by IGP cost.

    Ties are broken by smaller total propagation delay, then by the
    lexicographically smallest first hop. Labels ``(cost, delay, first_hop)``
    are compared lexicographically, which keeps every next-hop chain on an
    optimal path (sub-paths of optimal paths are optimal).
    """
    if not topology.is_connected():
        raise ModelError("topology is disconnected")
    next_hop: dict[tuple[str, str], str] = {}
    path_delay: dict[tuple[str, str], int] = {}
    path_cost: dict[tuple[str, str], int] = {}
    for src in topology.routers:
        best: dict[str, tuple[int, int, str]] = {src: (0, 0, src)}
        heap = [(0, 0, src, src)]
        done: set[str] = set()
        while heap:
            cost, delay, first, node = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            for nb, link in topology.neighbors(node).items():
                if nb in done:
                    continue
                label = (cost + link.igp_cost, delay + link.delay, nb if node == src else first)
                if nb not in best or label < best[nb]:
                    best[nb] = label
                    heapq.heappush(heap, (*label, nb))
        for dst, (cost, delay, first) in best.items():
            next_hop[(src, dst)] = first
            path_delay[(src, dst)] = delay
            path_cost[(src, dst)] = cost
    return IgpState(next_hop, path_delay, path_cost)


@dataclass(frozen=True)
class Route:
    """A BGP route as held by one router.

    ``learned_from`` is ``None`` for routes learned from the external peer and
    the sending router id for iBGP-learned routes. ``cluster_list`` records the
    reflectors a route passed through; it is used for loop prevention and as a
    late tie-break, never for forwarding.
    """

    prefix: str
    origin_peer: str
    egress: str
    as_path_len: int
    learned_from: str | None = None
    igp_cost_to_egress: int = 0
    cluster_list: tuple[str, ...] = ()

    @property
    def is_external(self) -> bool:
        return self.learned_from is None


def _preference_key(route: Route, order: Mapping[str, int] | None):
    def rid(name):
        return order.get(name, len(order)) if order is not None else name

    learned = (0, rid(route.egress)) if route.is_external else (1, rid(route.learned_from))
    return (
        route.as_path_len,
        0 if route.is_external else 1,
        route.igp_cost_to_egress,
        rid(route.egress),
        len(route.cluster_list),
        learned,
        route.origin_peer,
    )


def decide_best(candidates: Iterable[Route], order: Mapping[str, int] | None = None) -> Route | None:
    """Pick the best route.

    Compared in order: shorter AS path, external over iBGP, lower IGP cost to
    the egress, lower egress router id. Remaining ties (copies of the same
    route received over several sessions) go to the shorter cluster list and
    then the lower sending router id. ``order`` maps router ids to their rank;
    without it ids compare as strings.
    """
    routes = list(candidates)
    if not routes:
        return None
    prefixes = {r.prefix for r in routes}
    if len(prefixes) > 1:
        raise ContractViolation(f"candidates span several prefixes: {sorted(prefixes)}")
    return min(routes, key=lambda r: _preference_key(r, order))


@dataclass(frozen=True)
class IbgpConfig:
    mode: str = FULL_MESH
    reflectors: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "reflectors", frozenset(self.reflectors))
        if self.mode not in (FULL_MESH, ROUTE_REFLECTION):
            raise ModelError(f"unknown iBGP mode {self.mode!r}")
        if self.mode == FULL_MESH and self.reflectors:
            raise ModelError("full mesh takes no reflectors")
        if self.mode == ROUTE_REFLECTION and not self.reflectors:
            raise ModelError("route reflection needs at least one reflector")

    @classmethod
    def full_mesh(cls) -> IbgpConfig:
        return cls(FULL_MESH)

    @classmethod
    def route_reflection(cls, reflectors: Iterable[str]) -> IbgpConfig:
        return cls(ROUTE_REFLECTION, frozenset(reflectors))

    def validate(self, topology: Topology) -> None:
        unknown = self.reflectors - set(topology.routers)
        if unknown:
            raise ModelError(f"unknown reflectors: {sorted(unknown)}")

    def sessions(self, topology: Topology) -> set[frozenset[str]]:
        routers = topology.routers
        if self.mode == FULL_MESH:
            return {frozenset((a, b)) for i, a in enumerate(routers) for b in routers[i + 1:]}
        return {frozenset((c, rr)) for rr in self.reflectors for c in routers if c != rr}

    def is_reflector(self, router: str) -> bool:
        return router in self.reflectors


def ibgp_propagation_targets(
    config: IbgpConfig, topology: Topology, holder: str, learned_from: str | None
) -> set[str]:
    """Routers to which ``holder`` advertises a best route learned from ``learned_from``.

    ``learned_from`` is ``None`` for an externally learned route. A non-reflector
    never re-advertises an iBGP-learned route, in either mode.
    """
    if holder not in topology.routers:
        raise ModelError(f"unknown router {holder}")
    if config.mode == FULL_MESH:
        if learned_from is not None:
            return set()
        return {r for r in topology.routers if r != holder}
    if holder in config.reflectors:
        targets = {r for r in topology.routers if r != holder}
    elif learned_from is None:
        targets = set(config.reflectors)
    else:
        targets = set()
    targets.discard(holder)
    targets.discard(learned_from)
    return targets
