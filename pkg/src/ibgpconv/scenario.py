"""Scenario documents: loading, validation and shipped presets.

A scenario is a JSON document (``schema_version`` 1). The topology may be
inline or a reference to a shipped topology preset. Every route and the event
apply to all prefixes of the scenario. See ``docs/formats.md``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ModelError, ScenarioError
from .model import IbgpConfig, Link, ExternalPeer, Route, Topology
from .probe import CUTOFFS, ProbeConfig
from .sim import ANNOUNCE, EVENT_KINDS, EventSpec, ProcessingModel

SCENARIO_SCHEMA_VERSION = 1
SELECTIONS = ("random", "stratified", "all")
_PRESETS = "presets"


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Topology
    ibgp: IbgpConfig
    prefixes: tuple[str, ...]
    routes: tuple[Route, ...]
    event: EventSpec
    processing: ProcessingModel
    probe: ProbeConfig
    probed_prefixes: int = 10
    selection: str = "random"
    samples: int = 1
    seed: int = 0
    quiet_window: int = 10_000_000
    document: dict = field(default_factory=dict, compare=False, repr=False)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the scenario document."""
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **changes) -> Scenario:
        """Copy with top-level document fields replaced; ``probe`` keys are merged."""
        doc = dict(self.document)
        probe = dict(doc.get("probe", {}))
        for key, value in changes.items():
            if value is None:
                continue
            if key == "rate_pps":
                probe["rate_pps"] = value
            elif key == "probe":
                probe.update(value)
            elif key == "quiet_window":
                doc["quiet_window_us"] = value
            else:
                doc[key] = value
        doc["probe"] = probe
        return parse_scenario(doc)


def preset_names() -> list[str]:
    root = resources.files(__package__) / _PRESETS
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and not p.name.startswith("topology-"))


def _preset_text(name: str) -> str:
    path = resources.files(__package__) / _PRESETS / f"{name}.json"
    if not path.is_file():
        raise ScenarioError(f"unknown preset {name!r}")
    return path.read_text()


def load_topology_preset(name: str) -> dict:
    return json.loads(_preset_text(f"topology-{name}"))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a JSON file, or a shipped preset by name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in preset_names():
        text = _preset_text(str(source))
    else:
        raise ScenarioError(f"no scenario file or preset named {str(source)!r}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: invalid JSON ({exc})") from None
    return parse_scenario(doc)


def _int(doc: dict, key: str, default=None, minimum=None) -> int:
    value = doc.get(key, default)
    if value is None:
        raise ScenarioError(f"missing field {key}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"field {key} must be an integer")
    if minimum is not None and value < minimum:
        raise ScenarioError(f"field {key} must be >= {minimum}")
    return value


def parse_topology(doc: dict) -> Topology:
    try:
        links = [Link(l["a"], l["b"], _int(l, "delay_us", minimum=1), _int(l, "igp_cost", 1, 1)) for l in doc["links"]]
        peers = [ExternalPeer(p["peer"], p["router"], _int(p, "delay_us", 0, 0)) for p in doc.get("external_peers", [])]
        return Topology(tuple(doc["routers"]), tuple(links), tuple(peers))
    except KeyError as exc:
        raise ScenarioError(f"topology misses field {exc}") from None
    except ModelError as exc:
        raise ScenarioError(f"invalid topology: {exc}") from None


def _prefix_names(doc) -> tuple[str, ...]:
    if isinstance(doc, list):
        names = tuple(str(p) for p in doc)
    else:
        count = _int(doc, "count", minimum=1)
        width = max(5, len(str(count - 1)))
        names = tuple(f"p{i:0{width}d}" for i in range(count))
    if not names or len(set(names)) != len(names):
        raise ScenarioError("prefixes must be a non-empty list of unique names")
    return names


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    if doc.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema_version {doc.get('schema_version')!r}")
    topo_doc = doc.get("topology")
    if isinstance(topo_doc, str):
        topo_doc = load_topology_preset(topo_doc)
    if not isinstance(topo_doc, dict):
        raise ScenarioError("topology must be an object or a preset name")
    topology = parse_topology(topo_doc)

    ibgp_doc = doc.get("ibgp", {"mode": "full-mesh"})
    try:
        ibgp = IbgpConfig(ibgp_doc.get("mode", "full-mesh"), frozenset(ibgp_doc.get("reflectors", ())))
        ibgp.validate(topology)
    except ModelError as exc:
        raise ScenarioError(f"invalid ibgp config: {exc}") from None

    prefixes = _prefix_names(doc.get("prefixes", {"count": 1}))
    routes = []
    for r in doc.get("routes", []):
        peer = r.get("peer")
        if not topology.has_peer(peer):
            raise ScenarioError(f"route from unknown peer {peer!r}")
        length = _int(r, "as_path_len", minimum=1)
        egress = topology.peer(peer).attached_to
        routes += [Route(p, peer, egress, length) for p in prefixes]

    ev = doc.get("event")
    if not isinstance(ev, dict):
        raise ScenarioError("missing event")
    kind = ev.get("kind")
    if kind not in EVENT_KINDS:
        raise ScenarioError(f"event kind must be one of {EVENT_KINDS}")
    if not topology.has_peer(ev.get("peer")):
        raise ScenarioError(f"event at unknown peer {ev.get('peer')!r}")
    announced = {r.origin_peer for r in routes}
    if kind != ANNOUNCE and ev["peer"] not in announced:
        raise ScenarioError(f"{kind} at {ev['peer']}, which announces nothing")
    event = EventSpec(
        kind,
        ev["peer"],
        prefixes,
        time=_int(ev, "time_us", 0),
        prepend_delta=_int(ev, "prepend", 1, 0),
        as_path_len=ev.get("as_path_len"),
    )

    proc = doc.get("processing", {})
    per_router = {k: int(v) for k, v in proc.get("per_router_us", {}).items()}
    unknown = set(per_router) - set(topology.routers)
    if unknown:
        raise ScenarioError(f"processing cost for unknown routers {sorted(unknown)}")
    processing = ProcessingModel(_int(proc, "per_prefix_cost_us", 95, 1), per_router, float(proc.get("jitter", 0.0)))

    pd = doc.get("probe", {})
    sources = tuple(pd.get("sources", ()))
    if set(sources) - set(topology.routers):
        raise ScenarioError("probe sources must be routers")
    if pd.get("cutoff", "peer") not in CUTOFFS:
        raise ScenarioError(f"probe cutoff must be one of {CUTOFFS}")
    selection = pd.get("selection", "random")
    if selection not in SELECTIONS:
        raise ScenarioError(f"probe selection must be one of {SELECTIONS}")
    window = pd.get("window_us")
    try:
        probe = ProbeConfig(
            rate_pps=_int(pd, "rate_pps", 1000, 1),
            sources=sources,
            window=tuple(window) if window is not None else None,
            ttl=_int(pd, "ttl", 64, 1),
            rpf_drop=bool(pd.get("rpf_drop", True)),
            cutoff=pd.get("cutoff", "peer"),
            edge_span=_int(pd, "edge_span_us", 1_000_000, 0),
            margin=_int(pd, "margin_us", 1_500_000, 0),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    if probe.margin < probe.edge_span and probe.window is None:
        raise ScenarioError("margin_us must be at least edge_span_us")

    return Scenario(
        name=str(doc.get("name", "scenario")),
        topology=topology,
        ibgp=ibgp,
        prefixes=prefixes,
        routes=tuple(routes),
        event=event,
        processing=processing,
        probe=probe,
        probed_prefixes=_int(pd, "probed_prefixes", 10, 1),
        selection=selection,
        samples=_int(doc, "samples", 1, 1),
        seed=_int(doc, "seed", 0, 0),
        quiet_window=_int(doc, "quiet_window_us", 10_000_000, 0),
        document=doc,
    )
