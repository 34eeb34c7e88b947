from __future__ import annotations

import json
from importlib import resources

import pytest

from conftest import MS
from ibgpconv.errors import ScenarioError
from ibgpconv.experiment import select_prefixes, total_propagation_delays
from ibgpconv.scenario import load_scenario, parse_scenario, preset_names


def star_doc(ext_delay=0):
    d = 4 * MS
    return {
        "schema_version": 1,
        "name": "star",
        "topology": {
            "routers": ["c", "a", "b", "d"],
            "links": [{"a": "c", "b": leaf, "delay_us": d} for leaf in ("a", "b", "d")],
            "external_peers": [{"peer": "xc", "router": "c", "delay_us": ext_delay},
                               {"peer": "xb", "router": "b", "delay_us": ext_delay}],
        },
        "routes": [{"peer": "xc", "as_path_len": 2}, {"peer": "xb", "as_path_len": 3}],
        "event": {"kind": "withdraw", "peer": "xc"},
    }


class TestPresets:
    def test_names_match_files(self):
        root = resources.files("ibgpconv") / "presets"
        for name in preset_names():
            assert json.loads((root / f"{name}.json").read_text())["name"] == name

    @pytest.mark.parametrize("name", preset_names())
    def test_every_preset_loads(self, name):
        sc = load_scenario(name)
        assert sc.name == name
        assert len(sc.digest()) == 64

    def test_reflector_placements(self):
        assert load_scenario("abilene-withdraw-rr1").ibgp.reflectors == {"SE"}
        assert load_scenario("abilene-withdraw-rr2").ibgp.reflectors == {"SE", "NY"}
        assert load_scenario("abilene-withdraw-rr3").ibgp.reflectors == {"SE", "NY", "AT"}

    def test_prefix_sweep_sizes(self):
        for n in (1, 10, 100, 1000, 10000):
            assert len(load_scenario(f"abilene-prefixes-{n}").prefixes) == n

    def test_unknown_preset(self):
        with pytest.raises(ScenarioError):
            load_scenario("no-such-preset")

    def test_overrides_keep_the_rest(self):
        sc = load_scenario("path-3").with_overrides(seed=9, rate_pps=2000, quiet_window=5)
        assert (sc.seed, sc.probe.rate_pps, sc.quiet_window) == (9, 2000, 5)
        assert sc.topology == load_scenario("path-3").topology
        assert sc.digest() != load_scenario("path-3").digest()


class TestValidation:
    @pytest.mark.parametrize("patch", [
        {"schema_version": 2},
        {"topology": "nowhere"},
        {"topology": {"routers": ["a"], "links": [{"a": "a", "b": "z", "delay_us": 1}]}},
        {"ibgp": {"mode": "route-reflection", "reflectors": ["zz"]}},
        {"routes": [{"peer": "nobody", "as_path_len": 2}]},
        {"routes": [{"peer": "xc", "as_path_len": 0}]},
        {"event": {"kind": "explode", "peer": "xc"}},
        {"event": {"kind": "withdraw", "peer": "zz"}},
        {"prefixes": ["p", "p"]},
        {"prefixes": {"count": 0}},
        {"processing": {"per_prefix_cost_us": 0}},
        {"processing": {"per_router_us": {"zz": 5}}},
        {"probe": {"sources": ["zz"]}},
        {"probe": {"cutoff": "later"}},
        {"probe": {"selection": "best"}},
        {"probe": {"rate_pps": 0}},
        {"probe": {"window_us": [5, 10]}},
        {"samples": 0},
        {"seed": "one"},
    ])
    def test_rejects(self, patch):
        with pytest.raises(ScenarioError):
            parse_scenario({**star_doc(), **patch})

    def test_withdraw_needs_an_announcing_peer(self):
        doc = star_doc()
        doc["routes"] = doc["routes"][1:]
        with pytest.raises(ScenarioError):
            parse_scenario(doc)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text("{")
        with pytest.raises(ScenarioError):
            load_scenario(path)

    def test_not_an_object(self):
        with pytest.raises(ScenarioError):
            parse_scenario([])


class TestSelection:
    def test_deterministic(self):
        sc = load_scenario("abilene-withdraw")
        assert select_prefixes(sc, 42) == select_prefixes(sc, 42)
        assert select_prefixes(sc, 42) != select_prefixes(sc, 43)
        assert len(select_prefixes(sc, 42)) == 10

    def test_stratified_covers_each_tenth(self):
        sc = load_scenario("abilene-withdraw").with_overrides(probe={"selection": "stratified", "probed_prefixes": 10})
        picked = select_prefixes(sc, 7)
        slices = sorted(sc.prefixes.index(p) * 10 // len(sc.prefixes) for p in picked)
        assert slices == list(range(10))

    def test_all(self):
        sc = load_scenario("path-3")
        assert select_prefixes(sc, 1) == sc.prefixes


class TestPropagation:
    def test_path3(self):
        delays = total_propagation_delays(load_scenario("path-3"))
        # r -> r1 -> r3 -> r plus the 10 ms external link twice
        assert delays == {"r1": 60 * MS, "r2": 60 * MS, "r3": 60 * MS}

    def test_star(self):
        delays = total_propagation_delays(parse_scenario(star_doc()))
        assert delays == {"c": 8 * MS, "a": 16 * MS, "b": 8 * MS, "d": 16 * MS}

    def test_receipt_cutoff_drops_external_term(self):
        doc = star_doc(ext_delay=MS)
        doc["probe"] = {"cutoff": "receipt"}
        assert total_propagation_delays(parse_scenario(doc))["a"] == 16 * MS
        doc["probe"] = {"cutoff": "peer"}
        assert total_propagation_delays(parse_scenario(doc))["a"] == 18 * MS

    def test_visible_backup_is_ambiguous(self):
        with pytest.raises(ScenarioError):
            total_propagation_delays(load_scenario("abilene-withdraw-visible"))
