"""Experiment orchestration: simulate samples, emit traces, analyze traces and
assemble reports."""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .analyzer import (
    check_sample,
    detect_convergence,
    reconstruct_journeys,
    summarize,
    violation_from_journeys,
)
from .capture import capture_records
from .errors import ContractViolation, SampleInvalidError, ScenarioError
from .model import compute_igp
from .probe import DataPlane, US_PER_S, probe_window, violation_reports
from .scenario import Scenario
from .sim import ANNOUNCE, apply_event_to_peer, build_initial_state, run_event
from .traceio import HardwareMapping, load_trace, mapping_for, read_header, write_trace

REPORT_SCHEMA_VERSION = 1
VIOLATIONS_HEADER = ("sample", "src", "prefix", "probe_estimate_us", "dropped_count", "exact_total_us", "intervals_us")
SUMMARY_HEADER = ("scenario", "group", "n", "q5_ms", "q25_ms", "q50_ms", "q75_ms", "q95_ms")
PROPAGATION_HEADER = ("router", "total_propagation_us", "total_propagation_ms")


def format_ms(us: int) -> str:
    """Render integer microseconds as milliseconds without floating point."""
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // 1000}.{us % 1000:03d}"


def sample_seeds(seed: int, samples: int) -> list[int]:
    rng = random.Random(seed)
    return [rng.getrandbits(63) for _ in range(samples)]


def select_prefixes(scenario: Scenario, sample_seed: int) -> tuple[str, ...]:
    """Seeded choice of the probed prefixes for one sample.

    ``random`` draws uniformly without replacement; ``stratified`` draws one
    prefix from each of ``k`` equal slices of the event's prefix order, so
    early, middle and late prefixes are all represented.
    """
    population = scenario.event.prefixes
    k = min(scenario.probed_prefixes, len(population))
    if scenario.selection == "all" or k == len(population):
        return population
    rng = random.Random(sample_seed)
    if scenario.selection == "random":
        picked = rng.sample(range(len(population)), k)
    else:
        n = len(population)
        picked = [i * n // k + rng.randrange((i + 1) * n // k - i * n // k) for i in range(k)]
    return tuple(population[i] for i in sorted(picked))


def total_propagation_delays(scenario: Scenario) -> dict[str, int]:
    """Per-router total propagation delay of the event.

    Router to initial egress, initial egress to backup egress, backup back to
    the router. With the ``peer`` cut-off the external link is crossed twice
    (in-flight traffic reaching the peer, and the withdraw coming back).
    """
    topology = scenario.topology
    igp = compute_igp(topology)
    prefix = scenario.event.prefixes[0]
    single = replace_prefixes(scenario, (prefix,))
    before = build_initial_state(topology, scenario.ibgp, single.routes, (prefix,), igp)
    routes, _, _ = apply_event_to_peer(single.event, topology, before.external_routes)
    after = build_initial_state(topology, scenario.ibgp, routes.values(), (prefix,), igp)

    def egresses(state):
        found = set()
        for r in topology.routers:
            best = state.network.best[r].get(prefix)
            if best is None:
                raise ScenarioError(f"{r} has no route for {prefix}")
            found.add(best.egress)
        return found

    initial, backup = egresses(before), egresses(after)
    if len(initial) != 1 or len(backup) != 1 or initial == backup:
        raise ScenarioError(
            f"ambiguous egresses: initial {sorted(initial)}, backup {sorted(backup)}"
        )
    e, b = initial.pop(), backup.pop()
    ext = 0
    if scenario.probe.cutoff == "peer" and scenario.event.kind != ANNOUNCE:
        ext = 2 * topology.peer(scenario.event.at_peer).delay
    return {r: igp.delay(r, e) + igp.delay(e, b) + igp.delay(b, r) + ext for r in topology.routers}


def replace_prefixes(scenario: Scenario, prefixes: Sequence[str]) -> Scenario:
    doc = dict(scenario.document)
    doc["prefixes"] = list(prefixes)
    from .scenario import parse_scenario

    return parse_scenario(doc)


@dataclass
class SampleOutcome:
    index: int
    seed: int
    probed_prefixes: tuple[str, ...]
    converged_at: int
    last_fib_change: int | None
    valid: bool
    violations: list[dict]
    exact: list[dict] = field(default_factory=list)
    check: dict | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {
            "index": self.index,
            "seed": self.seed,
            "valid": self.valid,
            "notes": list(self.notes),
            "converged_at_us": self.converged_at,
            "probed_prefixes": list(self.probed_prefixes),
            "violations": self.violations,
        }
        if self.check is not None:
            out["check"] = self.check
        if self.last_fib_change is not None:
            out["last_fib_change_us"] = self.last_fib_change
        if self.exact:
            out["exact"] = self.exact
        return out


class Experiment:
    """Runs the samples of one scenario, optionally writing a trace per sample."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.igp = compute_igp(scenario.topology)
        self.initial = build_initial_state(
            scenario.topology, scenario.ibgp, scenario.routes, scenario.prefixes, self.igp
        )
        self.mapping = mapping_for(scenario.topology)
        self._cached_run = None

    def _run(self, seed: int):
        if self.scenario.processing.jitter == 0:
            if self._cached_run is None:
                self._cached_run = run_event(self.initial, self.scenario.event, self.scenario.processing, seed=0)
            return self._cached_run
        return run_event(self.initial, self.scenario.event, self.scenario.processing, seed=seed)

    def trace_header(self, index: int, seed: int) -> dict:
        sc = self.scenario
        return {
            "scenario": sc.name,
            "scenario_sha256": sc.digest(),
            "sample": index,
            "seed": seed,
            "rate_pps": sc.probe.rate_pps,
            "cutoff": sc.probe.cutoff,
            "edge_span_us": sc.probe.edge_span,
        }

    def run_sample(self, index: int, seed: int, trace_path: Path | None = None) -> SampleOutcome:
        sc = self.scenario
        result = self._run(seed)
        probed = select_prefixes(sc, seed)
        sources = sc.probe.sources or sc.topology.routers
        dp = DataPlane.from_result(result, sc.topology, self.igp, sc.probe)
        window = probe_window(sc.probe, result)
        notes = []
        valid = True
        try:
            reports, fates = violation_reports(dp, sc.probe, window, sources, probed, keep_fates=trace_path is not None)
        except SampleInvalidError as exc:
            valid = False
            notes.append(str(exc))
            reports, fates = [], []
        violations = [
            {"src": r.src, "prefix": r.prefix, "probe_estimate_us": r.probe_estimate, "dropped_count": r.dropped_count}
            for r in sorted(reports, key=lambda r: (r.src, r.prefix))
        ]
        exact = []
        for r in sorted(reports, key=lambda r: (r.src, r.prefix)):
            row = {"src": r.src, "prefix": r.prefix, "exact_total_us": r.exact_total,
                   "intervals_us": [list(iv) for iv in r.exact_intervals]}
            row.update({f"{k}_us": v for k, v in r.metadata.items() if k.startswith("exact_total_")})
            exact.append(row)
        if trace_path is not None and valid:
            records = capture_records(result, fates, sc.topology, self.igp, self.mapping, sc.probe.ttl, sc.quiet_window)
            write_trace(trace_path, records, self.trace_header(index, seed))
        return SampleOutcome(index, seed, tuple(sorted(probed)), result.converged_at, result.last_fib_change, valid, violations, exact, notes=notes)

    def run(self, out_dir: Path | None = None, write_traces: bool = True) -> dict:
        sc = self.scenario
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            if write_traces:
                self.mapping.save(out_dir / "mapping.json")
        outcomes = []
        for index, seed in enumerate(sample_seeds(sc.seed, sc.samples)):
            path = out_dir / trace_name(index) if out_dir is not None and write_traces else None
            outcomes.append(self.run_sample(index, seed, path))
        try:
            propagation = total_propagation_delays(sc)
        except ScenarioError:
            propagation = None
        metadata = {
            "scenario": sc.name,
            "scenario_sha256": sc.digest(),
            "seed": sc.seed,
            "rate_pps": sc.probe.rate_pps,
            "cutoff": sc.probe.cutoff,
            "package_version": __version__,
        }
        report = assemble_report(metadata, outcomes, sc.topology.routers, propagation)
        if out_dir is not None:
            write_report_files(report, out_dir)
        return report


def trace_name(index: int) -> str:
    return f"sample-{index:03d}.trace"


def assemble_report(metadata: dict, outcomes: Iterable[SampleOutcome], routers: Sequence[str] | None,
                    propagation: dict | None = None) -> dict:
    outcomes = sorted(outcomes, key=lambda o: o.index)
    valid = [o for o in outcomes if o.valid]
    pooled = [v["probe_estimate_us"] for o in valid for v in o.violations]
    per_router: dict[str, list[int]] = {}
    for o in valid:
        for v in o.violations:
            per_router.setdefault(v["src"], []).append(v["probe_estimate_us"])
    order = list(routers) if routers else sorted(per_router)
    summaries = {
        "pooled": summarize(pooled).as_dict() if pooled else None,
        "per_router": {r: summarize(per_router[r]).as_dict() for r in order if r in per_router},
    }
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "metadata": metadata,
        "samples": [o.as_dict() for o in outcomes],
        "excluded_samples": [o.index for o in outcomes if not o.valid],
        "summaries": summaries,
    }
    if propagation is not None:
        report["propagation_us"] = propagation
    return report


def pipeline_view(report: dict) -> dict:
    """The part of a report that trace analysis can reproduce."""
    keep = ("scenario", "scenario_sha256", "rate_pps", "cutoff")
    return {
        "metadata": {k: report["metadata"].get(k) for k in keep},
        "samples": [
            {k: s[k] for k in ("index", "seed", "valid", "converged_at_us", "probed_prefixes", "violations")}
            for s in report["samples"]
        ],
        "excluded_samples": report["excluded_samples"],
        "summaries": report["summaries"],
    }


def analyze_trace(path: Path, mapping: HardwareMapping, quiet_window: int) -> SampleOutcome:
    """Run validation, journey reconstruction, convergence detection and
    violation counting on one trace file."""
    from .traceio import validate_trace

    header = read_header(path)
    records = load_trace(path)
    findings = validate_trace(records, mapping)
    if findings:
        raise SampleInvalidError(f"{path}: {len(findings)} trace finding(s), first: {findings[0].message}", findings)
    rate = int(header["rate_pps"])
    cutoff = header.get("cutoff", "peer")
    journeys = reconstruct_journeys(records, mapping, cutoff=cutoff)
    check = check_sample(records, mapping, journeys, edge_span=int(header.get("edge_span_us", US_PER_S)), cutoff=cutoff)
    converged = detect_convergence(records, quiet_window)
    reports = violation_from_journeys(journeys, rate)
    violations = [
        {"src": r.src, "prefix": r.prefix, "probe_estimate_us": r.probe_estimate, "dropped_count": r.dropped_count}
        for r in reports.values()
    ]
    probed = tuple(sorted({p for _, p in reports}))
    return SampleOutcome(
        index=int(header.get("sample", 0)),
        seed=int(header.get("seed", 0)),
        probed_prefixes=probed,
        converged_at=converged,
        last_fib_change=None,
        valid=check.accepted,
        violations=violations if check.accepted else [],
        check=check.as_dict(),
        notes=list(check.notes),
    )


def analyze_traces(paths: Sequence[Path], mapping_path: Path, quiet_window: int = 10 * US_PER_S) -> dict:
    mapping = HardwareMapping.load(mapping_path)
    outcomes = [analyze_trace(Path(p), mapping, quiet_window) for p in paths]
    if not outcomes:
        raise ContractViolation("no traces to analyze")
    header = read_header(paths[0])
    metadata = {
        "scenario": header.get("scenario"),
        "scenario_sha256": header.get("scenario_sha256"),
        "rate_pps": int(header["rate_pps"]),
        "cutoff": header.get("cutoff", "peer"),
        "package_version": __version__,
    }
    routers = list(mapping.routers)
    report = assemble_report(metadata, outcomes, routers)
    for sample in report["samples"]:
        sample.pop("exact", None)
    return report


def dump_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def violations_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VIOLATIONS_HEADER)
    for s in report["samples"]:
        exact = {(e["src"], e["prefix"]): e for e in s.get("exact", [])}
        for v in s["violations"]:
            e = exact.get((v["src"], v["prefix"]))
            intervals = ";".join(f"{a}:{b}" for a, b in e["intervals_us"]) if e else ""
            w.writerow((s["index"], v["src"], v["prefix"], v["probe_estimate_us"], v["dropped_count"],
                        e["exact_total_us"] if e else "", intervals))
    return buf.getvalue()


def summary_rows(scenario: str, values_by_group: dict[str, list[int]]) -> list[tuple]:
    rows = []
    for group, values in values_by_group.items():
        if not values:
            continue
        s = summarize(values)
        rows.append((scenario, group, s.n, *(format_ms(q) for q in (s.q5, s.q25, s.q50, s.q75, s.q95))))
    return rows


def report_values(report: dict) -> dict[str, list[int]]:
    """Pooled and per-router probe estimates of the valid samples."""
    groups: dict[str, list[int]] = {"pooled": []}
    for s in report["samples"]:
        if not s["valid"]:
            continue
        for v in s["violations"]:
            groups["pooled"].append(v["probe_estimate_us"])
            groups.setdefault(v["src"], []).append(v["probe_estimate_us"])
    return groups


def summary_csv(reports: Sequence[dict]) -> str:
    """Plot-ready percentile rows, pooled across reports of the same scenario."""
    versions = {r.get("schema_version") for r in reports}
    if len(versions) != 1:
        raise ScenarioError(f"reports mix schema versions {sorted(map(str, versions))}")
    if versions != {REPORT_SCHEMA_VERSION}:
        raise ScenarioError(f"unsupported report schema version {versions.pop()!r}")
    merged: dict[str, dict[str, list[int]]] = {}
    for report in reports:
        name = report["metadata"].get("scenario") or "scenario"
        target = merged.setdefault(name, {"pooled": []})
        for group, values in report_values(report).items():
            target.setdefault(group, []).extend(values)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for name, groups in merged.items():
        w.writerows(summary_rows(name, groups))
    return buf.getvalue()


def propagation_csv(delays: dict[str, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROPAGATION_HEADER)
    for router, d in delays.items():
        w.writerow((router, d, format_ms(d)))
    return buf.getvalue()


def write_report_files(report: dict, out_dir: Path) -> None:
    (out_dir / "report.json").write_text(dump_json(report))
    (out_dir / "violations.csv").write_text(violations_csv(report))
    (out_dir / "summary.csv").write_text(summary_csv([report]))
