"""
Violation time grows with the number of prefixes
=================================================

Routers process BGP messages one prefix at a time, so the last prefixes of a
large withdraw wait behind the first ones. The median violation becomes
affine in the number of withdrawn prefixes.
"""

import time

from ibgpconv.experiment import Experiment
from ibgpconv.scenario import load_scenario

base = load_scenario("abilene-withdraw")
for n in (1, 10, 100, 1000, 10000):
    sc = base.with_overrides(
        prefixes={"count": n}, samples=1,
        processing={"per_prefix_cost_us": 95, "jitter": 0.0},
        probe={"selection": "stratified"},
    )
    t = time.perf_counter()
    median = Experiment(sc).run()["summaries"]["pooled"]["q50"]
    print(f"N={n:>5}: median {median / 1000:8.1f} ms  ({time.perf_counter() - t:.1f} s)")
