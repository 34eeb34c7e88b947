"""
From simulated capture to report
================================

The simulator writes the same line-oriented traces a hardware capture would
produce. The analyzer rebuilds every probe's journey from them and must
arrive at the same violation estimates; damaged traces are rejected.
"""

import tempfile
from pathlib import Path

from ibgpconv.analyzer import check_sample
from ibgpconv.experiment import Experiment, analyze_traces, pipeline_view
from ibgpconv.scenario import load_scenario
from ibgpconv.traceio import POST, HardwareMapping, load_trace, validate_trace

out = Path(tempfile.mkdtemp())
scenario = load_scenario("path-3-variant").with_overrides(
    processing={"per_prefix_cost_us": 1000, "jitter": 0.0},
    probe={"window_us": [-40000, 80000], "edge_span_us": 5000},
    quiet_window=50000,
)

#
# Simulate one sample: this writes mapping.json, a trace and the reports.
#
direct = Experiment(scenario).run(out)
trace = out / "sample-000.trace"
print(trace.read_text().splitlines()[0])
print(*trace.read_text().splitlines()[1:6], sep="\n")

#
# Analyze the trace and compare with what the simulator reported.
#
analyzed = analyze_traces([trace], out / "mapping.json", scenario.quiet_window)
print("reports agree:", pipeline_view(analyzed) == pipeline_view(direct))
print("converged at", analyzed["samples"][0]["converged_at_us"], "us")

#
# Remove one post-delay record: the validator reports the missing twin and
# the sample check rejects the trace.
#
records = load_trace(trace)
mapping = HardwareMapping.load(out / "mapping.json")
i = next(i for i, r in enumerate(records) if r.stage == POST)
print("findings:", [f.code for f in validate_trace(records[:i] + records[i + 1:], mapping)])
print("accepted with the record missing:", check_sample(records[:i] + records[i + 1:], mapping, edge_span=5000).accepted)
