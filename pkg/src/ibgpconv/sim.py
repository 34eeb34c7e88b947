"""Discrete-event iBGP convergence.

A run starts from the converged fixed point of the initial external routes,
injects one BGP event at an external peer and replays the resulting message
cascade. Every router owns a single FIFO of per-prefix work items; processing
one item takes the router's per-prefix cost, after which the router re-runs
the decision process and, if its advertisements change, emits one message per
affected session. iBGP messages travel along the IGP path between the two
session endpoints.
"""

from __future__ import annotations

import heapq
import random
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import NonConvergenceError, RunawayError, ScenarioError
from .model import IbgpConfig, IgpState, Route, Topology, compute_igp, decide_best, ibgp_propagation_targets

ANNOUNCE = "announce"
UPDATE_WORSE = "update-worse"
WITHDRAW = "withdraw"
EVENT_KINDS = (ANNOUNCE, UPDATE_WORSE, WITHDRAW)

# Stand-in for -infinity: the `since` of every initial FIB entry.
BEGINNING = -(1 << 62)
NEVER = 1 << 62

DEFAULT_PER_PREFIX_COST = 95  # us; 100 prefixes ~ 9.5 ms
DEFAULT_QUEUE_BOUND = 10**8


@dataclass(frozen=True)
class Forward:
    egress: str


@dataclass(frozen=True)
class DeliverExternal:
    peer: str


@dataclass(frozen=True)
class BlackHole:
    pass


BLACK_HOLE = BlackHole()
Action = Forward | DeliverExternal | BlackHole


def action_of(best: Route | None) -> Action:
    if best is None:
        return BLACK_HOLE
    if best.is_external:
        return DeliverExternal(best.origin_peer)
    return Forward(best.egress)


@dataclass(frozen=True)
class EventSpec:
    kind: str
    at_peer: str
    prefixes: tuple[str, ...]
    time: int = 0
    prepend_delta: int = 1
    as_path_len: int | None = None  # announce only

    def __post_init__(self):
        object.__setattr__(self, "prefixes", tuple(self.prefixes))
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if not self.prefixes:
            raise ScenarioError("event affects no prefixes")
        if len(set(self.prefixes)) != len(self.prefixes):
            raise ScenarioError("duplicate prefixes in event")
        if self.kind == UPDATE_WORSE and self.prepend_delta < 0:
            raise ScenarioError("prepend_delta must be >= 0")
        if self.kind == ANNOUNCE and (self.as_path_len is None or self.as_path_len < 1):
            raise ScenarioError("announce needs a positive as_path_len")


@dataclass(frozen=True)
class ProcessingModel:
    """Per-prefix processing cost in microseconds, optionally per router."""

    default_cost: int = DEFAULT_PER_PREFIX_COST
    per_router: Mapping[str, int] = field(default_factory=dict)
    jitter: float = 0.0

    def __post_init__(self):
        if self.default_cost <= 0 or any(c <= 0 for c in self.per_router.values()):
            raise ScenarioError("per-prefix cost must be > 0")
        if not 0 <= self.jitter < 1:
            raise ScenarioError("jitter must be in [0, 1)")

    def cost(self, router: str) -> int:
        return self.per_router.get(router, self.default_cost)

    def spread(self, router: str) -> int:
        return int(self.cost(router) * self.jitter)


@dataclass(frozen=True)
class BgpMessage:
    msg_id: int
    sender: str
    receiver: str
    kind: str  # "update" | "withdraw"
    prefix: str
    route: Route | None
    sent_at: int
    arrives_at: int


class FibTimeline:
    """Forwarding action history per (router, prefix).

    An entry changes at its ``since`` instant: a packet arriving at exactly
    that time sees the new action.
    """

    def __init__(self):
        self._since: dict[tuple[str, str], list[int]] = {}
        self._actions: dict[tuple[str, str], list[Action]] = {}

    def start(self, router: str, prefix: str, action: Action) -> None:
        self._since[(router, prefix)] = [BEGINNING]
        self._actions[(router, prefix)] = [action]

    def record(self, router: str, prefix: str, at: int, action: Action) -> bool:
        since = self._since[(router, prefix)]
        actions = self._actions[(router, prefix)]
        if actions[-1] == action:
            return False
        if at <= since[-1]:
            raise ValueError(f"non-increasing FIB change for {(router, prefix)}")
        since.append(at)
        actions.append(action)
        return True

    def keys(self):
        return self._since.keys()

    def entries(self, router: str, prefix: str) -> list[tuple[int, Action]]:
        return list(zip(self._since[(router, prefix)], self._actions[(router, prefix)]))

    def action_at(self, router: str, prefix: str, t: int) -> Action:
        i = bisect_right(self._since[(router, prefix)], t) - 1
        return self._actions[(router, prefix)][i]

    def segment(self, router: str, prefix: str, t: int) -> tuple[int, int, Action]:
        """``(start, end, action)`` of the constant piece containing ``t``."""
        since = self._since[(router, prefix)]
        i = bisect_right(since, t) - 1
        end = since[i + 1] if i + 1 < len(since) else NEVER
        return since[i], end, self._actions[(router, prefix)][i]

    def initial(self, router: str, prefix: str) -> Action:
        return self._actions[(router, prefix)][0]

    def final(self, router: str, prefix: str) -> Action:
        return self._actions[(router, prefix)][-1]

    def change_count(self, router: str, prefix: str) -> int:
        return len(self._since[(router, prefix)]) - 1

    def last_change(self) -> int | None:
        times = [s[-1] for s in self._since.values() if len(s) > 1]
        return max(times) if times else None

    def raw(self, router: str, prefix: str) -> tuple[list[int], list[Action]]:
        return self._since[(router, prefix)], self._actions[(router, prefix)]


@dataclass
class PeerActivity:
    """When external peers stop (or start) accepting traffic per prefix.

    ``inactive_from`` is the instant the peer itself drops traffic; ``receipt_at``
    is when the attached border router receives the withdraw, which is the
    alternative attribution cut-off measured at the border.
    """

    inactive_from: dict[tuple[str, str], int] = field(default_factory=dict)
    receipt_at: dict[tuple[str, str], int] = field(default_factory=dict)
    active_from: dict[tuple[str, str], int] = field(default_factory=dict)


class BgpNetwork:
    """Mutable RIB state of every router: Adj-RIB-In, Loc-RIB and Adj-RIB-Out."""

    def __init__(self, topology: Topology, ibgp: IbgpConfig, igp: IgpState):
        ibgp.validate(topology)
        self.topology = topology
        self.ibgp = ibgp
        self.igp = igp
        self.order = topology.rank()
        self.rib_in: dict[str, dict[str, dict[str, Route]]] = {r: {} for r in topology.routers}
        self.best: dict[str, dict[str, Route | None]] = {r: {} for r in topology.routers}
        self.rib_out: dict[str, dict[str, dict[str, Route]]] = {r: {} for r in topology.routers}

    def copy(self) -> BgpNetwork:
        other = BgpNetwork.__new__(BgpNetwork)
        other.topology, other.ibgp, other.igp, other.order = self.topology, self.ibgp, self.igp, self.order
        other.rib_in = {r: {p: dict(s) for p, s in d.items()} for r, d in self.rib_in.items()}
        other.best = {r: dict(d) for r, d in self.best.items()}
        other.rib_out = {r: {p: dict(s) for p, s in d.items()} for r, d in self.rib_out.items()}
        return other

    def set_external(self, route: Route) -> None:
        self.rib_in[route.egress].setdefault(route.prefix, {})[route.origin_peer] = route

    def remove_external(self, router: str, peer: str, prefix: str) -> None:
        self.rib_in[router].get(prefix, {}).pop(peer, None)

    def receive(self, router: str, sender: str, prefix: str, wire: Route | None) -> None:
        """Install an iBGP advertisement (``None`` = withdraw) from ``sender``."""
        table = self.rib_in[router].setdefault(prefix, {})
        if wire is None or wire.egress == router or router in wire.cluster_list:
            # withdraw, or looped route (originator / cluster-list check)
            table.pop(sender, None)
            return
        table[sender] = replace(wire, igp_cost_to_egress=self.igp.cost(router, wire.egress))

    def reselect(self, router: str, prefix: str) -> bool:
        new = decide_best(self.rib_in[router].get(prefix, {}).values(), self.order)
        old = self.best[router].get(prefix)
        self.best[router][prefix] = new
        return new != old

    def advertisement_diff(self, router: str, prefix: str) -> list[tuple[str, Route | None]]:
        """Sessions whose advertised route changes, in router-id order; updates Adj-RIB-Out."""
        best = self.best[router].get(prefix)
        wire = None
        targets: set[str] = set()
        if best is not None:
            targets = ibgp_propagation_targets(self.ibgp, self.topology, router, best.learned_from)
            clusters = best.cluster_list
            if self.ibgp.is_reflector(router) and not best.is_external:
                clusters = (router,) + clusters
            wire = replace(best, learned_from=router, igp_cost_to_egress=0, cluster_list=clusters)
        out = self.rib_out[router].setdefault(prefix, {})
        diff = []
        for target in self.topology.routers:
            want = wire if target in targets else None
            have = out.get(target)
            if want == have:
                continue
            if want is None:
                del out[target]
            else:
                out[target] = want
            diff.append((target, want))
        return diff


@dataclass
class InitialState:
    topology: Topology
    ibgp: IbgpConfig
    igp: IgpState
    prefixes: tuple[str, ...]
    external_routes: dict[tuple[str, str], Route]
    network: BgpNetwork

    def action(self, router: str, prefix: str) -> Action:
        return action_of(self.network.best[router].get(prefix))


def _converge(network: BgpNetwork, prefixes: Iterable[str]) -> None:
    routers = network.topology.routers
    limit = max(len(routers) ** 2, 4)
    for prefix in prefixes:
        for _ in range(limit):
            changed = False
            for router in routers:
                if network.reselect(router, prefix):
                    changed = True
                for target, wire in network.advertisement_diff(router, prefix):
                    network.receive(target, router, prefix, wire)
                    changed = True
            if not changed:
                break
        else:
            raise NonConvergenceError(f"prefix {prefix} did not converge within {limit} sweeps")


def _external_route(topology: Topology, peer: str, prefix: str, as_path_len: int) -> Route:
    return Route(prefix, peer, topology.peer(peer).attached_to, as_path_len)


def build_initial_state(
    topology: Topology,
    ibgp: IbgpConfig,
    external_routes: Iterable[Route],
    prefixes: Iterable[str] | None = None,
    igp: IgpState | None = None,
) -> InitialState:
    """Converged RIBs for the given external routes (deterministic Gauss-Seidel sweeps)."""
    igp = igp or compute_igp(topology)
    routes = {}
    for route in external_routes:
        if not route.is_external:
            raise ScenarioError("initial routes must be external")
        if topology.peer(route.origin_peer).attached_to != route.egress:
            raise ScenarioError(f"route from {route.origin_peer} has wrong egress {route.egress}")
        routes[(route.origin_peer, route.prefix)] = route
    if prefixes is None:
        prefixes = sorted({r.prefix for r in routes.values()})
    prefixes = tuple(prefixes)
    network = BgpNetwork(topology, ibgp, igp)
    for route in routes.values():
        network.set_external(route)
    _converge(network, prefixes)
    return InitialState(topology, ibgp, igp, prefixes, routes, network)


def apply_event_to_peer(
    event: EventSpec, topology: Topology, external_routes: Mapping[tuple[str, str], Route]
) -> tuple[dict[tuple[str, str], Route], PeerActivity, list[tuple[str, Route | None]]]:
    """New external routes, peer activity and the per-prefix peer messages of ``event``.

    The returned messages list holds ``(prefix, route)`` pairs (``None`` for a
    withdraw) in event prefix order; an empty list means the event is a no-op.
    """
    peer = topology.peer(event.at_peer)
    routes = dict(external_routes)
    activity = PeerActivity()
    messages: list[tuple[str, Route | None]] = []
    for prefix in event.prefixes:
        key = (event.at_peer, prefix)
        current = routes.get(key)
        if event.kind == WITHDRAW:
            if current is None:
                raise ScenarioError(f"{event.at_peer} never announced {prefix}")
            del routes[key]
            activity.inactive_from[key] = event.time
            activity.receipt_at[key] = event.time + peer.delay
            messages.append((prefix, None))
        elif event.kind == UPDATE_WORSE:
            if current is None:
                raise ScenarioError(f"{event.at_peer} never announced {prefix}")
            if event.prepend_delta == 0:
                continue
            new = replace(current, as_path_len=current.as_path_len + event.prepend_delta)
            routes[key] = new
            messages.append((prefix, new))
        else:
            new = _external_route(topology, event.at_peer, prefix, event.as_path_len)
            routes[key] = new
            if current is None:
                activity.active_from[key] = event.time
            messages.append((prefix, new))
    return routes, activity, messages


@dataclass
class SimulationResult:
    t0: int
    event: EventSpec
    timelines: FibTimeline
    messages: list[BgpMessage]
    activity: PeerActivity
    converged_at: int
    last_fib_change: int | None
    network: BgpNetwork
    processed_items: int


def run_event(
    initial: InitialState,
    event: EventSpec,
    processing: ProcessingModel | None = None,
    seed: int = 0,
    queue_bound: int = DEFAULT_QUEUE_BOUND,
) -> SimulationResult:
    """Replay ``event`` from ``initial`` and record FIB timelines and messages.

    ``converged_at`` is the arrival instant of the last BGP message, i.e. the
    last control-plane observation; ``last_fib_change`` is reported separately
    because the final FIB update happens one processing step later.
    """
    processing = processing or ProcessingModel()
    topology, igp = initial.topology, initial.igp
    unknown = set(event.prefixes) - set(initial.prefixes)
    if unknown and event.kind != ANNOUNCE:
        raise ScenarioError(f"event prefixes not in the scenario: {sorted(unknown)}")
    prefixes = initial.prefixes + tuple(p for p in event.prefixes if p not in set(initial.prefixes))
    prefix_index = {p: i for i, p in enumerate(prefixes)}
    _, activity, peer_messages = apply_event_to_peer(event, topology, initial.external_routes)

    network = initial.network.copy()
    timelines = FibTimeline()
    for router in topology.routers:
        for prefix in prefixes:
            timelines.start(router, prefix, action_of(network.best[router].get(prefix)))

    rng = random.Random(seed)
    order = network.order
    peer_rank = len(order)
    heap: list = []
    seq = 0
    messages: list[BgpMessage] = []
    queues: dict[str, deque] = {r: deque() for r in topology.routers}
    busy: dict[str, bool] = {r: False for r in topology.routers}
    processed = 0

    def send(sender, receiver, prefix, route, now, delay, sender_rank):
        nonlocal seq
        kind = "withdraw" if route is None else "update"
        msg = BgpMessage(len(messages), sender, receiver, kind, prefix, route, now, now + delay)
        messages.append(msg)
        # completions (class 0) run before arrivals (class 1) at the same instant
        heapq.heappush(heap, (msg.arrives_at, 1, sender_rank, prefix_index[prefix], seq, msg))
        seq += 1

    def start_next(router, now):
        nonlocal seq
        if not queues[router]:
            busy[router] = False
            return
        busy[router] = True
        msg = queues[router].popleft()
        cost = processing.cost(router)
        spread = processing.spread(router)
        if spread:
            cost = max(1, cost + rng.randint(-spread, spread))
        heapq.heappush(heap, (now + cost, 0, order[router], 0, seq, msg))
        seq += 1

    border = topology.peer(event.at_peer).attached_to
    ext_delay = topology.peer(event.at_peer).delay
    for prefix, route in peer_messages:
        send(event.at_peer, border, prefix, route, event.time, ext_delay, peer_rank)

    while heap:
        now, cls, _, _, _, msg = heapq.heappop(heap)
        router = msg.receiver
        if cls == 1:
            queues[router].append(msg)
            if len(queues[router]) > queue_bound:
                raise RunawayError(f"queue at {router} exceeded {queue_bound} items")
            if not busy[router]:
                start_next(router, now)
            continue
        processed += 1
        prefix = msg.prefix
        if topology.has_peer(msg.sender):
            if msg.route is None:
                network.remove_external(router, msg.sender, prefix)
            else:
                network.set_external(msg.route)
        else:
            network.receive(router, msg.sender, prefix, msg.route)
        if network.reselect(router, prefix):
            timelines.record(router, prefix, now, action_of(network.best[router][prefix]))
            for target, wire in network.advertisement_diff(router, prefix):
                send(router, target, prefix, wire, now, igp.delay(router, target), order[router])
        start_next(router, now)

    converged_at = max(m.arrives_at for m in messages) if messages else event.time
    return SimulationResult(
        t0=event.time,
        event=event,
        timelines=timelines,
        messages=messages,
        activity=activity,
        converged_at=converged_at,
        last_fib_change=timelines.last_change(),
        network=network,
        processed_items=processed,
    )


def is_fixed_point(network: BgpNetwork, prefixes: Iterable[str]) -> bool:
    """True if re-running the decision process everywhere changes nothing."""
    probe = network.copy()
    for prefix in prefixes:
        for router in probe.topology.routers:
            if probe.reselect(router, prefix) or probe.advertisement_diff(router, prefix):
                return False
    return True
