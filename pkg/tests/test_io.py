import copy
import csv
import dataclasses
import json

import numpy as np
import pytest

from gridmpc import run
from gridmpc.io import (BUNDLED, PtdfOverrideWarning, ScenarioError, load_json, load_scenario,
                        parse_scenario, read_document, run_table, scenario_to_dict,
                        write_run_csv)


@pytest.fixture(scope="module")
def doc():
    return read_document("one_overload")[0]


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    scen = load_scenario(name)
    again = parse_scenario(json.loads(json.dumps(scenario_to_dict(scen))))
    np.testing.assert_array_equal(again.zone.ptdf, scen.zone.ptdf)
    np.testing.assert_array_equal(again.disturbances[:scen.duration],
                                  scen.disturbances[:scen.duration])
    assert again.duration == scen.duration and again.events == scen.events
    assert again.controller.get_params() == scen.controller.get_params()
    np.testing.assert_array_equal(again.initial_state.to_vector(), scen.initial_state.to_vector())
    assert scenario_to_dict(again) == scenario_to_dict(scen)


def errors_of(data):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(data)
    return info.value.messages


def test_unknown_keys_reported_with_paths(doc):
    bad = copy.deepcopy(doc)
    bad["devices"]["batteries"][0]["colour"] = "red"
    bad["extra"] = 1
    msgs = errors_of(bad)
    assert any(m.startswith("$.extra: unknown key") for m in msgs)
    bad = copy.deepcopy(doc)
    bad["devices"]["batteries"][0]["colour"] = "red"
    assert errors_of(bad) == ["devices.batteries[0].colour: unknown key"]


def test_bad_values_reported_with_paths(doc):
    bad = copy.deepcopy(doc)
    bad["devices"]["curtailable"][1]["node"] = "n99"
    bad["controller"]["dt_s"] = -2
    msgs = errors_of(bad)
    assert "devices.curtailable[1].node: unknown node 'n99'" in msgs
    assert any(m.startswith("controller.dt_s: must be > 0") for m in msgs)
    bad = copy.deepcopy(doc)
    bad["timeline"]["disturbances"][3] = [0.0, 1.0]
    assert errors_of(bad) == ["timeline.disturbances[3]: expected 6 values, got 2"]
    bad = copy.deepcopy(doc)
    bad["controller"]["horizon"] = 10
    assert any("controller.horizon" in m for m in errors_of(bad))
    bad = copy.deepcopy(doc)
    bad["timeline"]["events"][0]["line"] = "L7"
    assert any(m.startswith("timeline.events[0].line") for m in errors_of(bad))


def test_syntax_errors_and_duplicates():
    with pytest.raises(ScenarioError, match="line 3, column"):
        load_json('{\n  "a": 1,\n  "b": }\n')
    with pytest.raises(ScenarioError, match="duplicate key 'a'"):
        load_json('{"a": 1, "a": 2}')


def test_random_walk_seed_override():
    base = load_scenario("volatile")
    other = load_scenario("volatile", seed=base.seed + 1)
    again = load_scenario("volatile", seed=base.seed)
    np.testing.assert_array_equal(again.disturbances, base.disturbances)
    assert not np.array_equal(other.disturbances, base.disturbances)
    assert other.seed == base.seed + 1


def test_reactances_with_explicit_rows_warn():
    data = read_document("ring8")[0]
    assert "ptdf" not in data["network"]
    scen = parse_scenario(data)
    data = copy.deepcopy(data)
    data["network"]["ptdf"] = {line.name: [0.0] * scen.zone.n_nodes for line in scen.zone.lines}
    with pytest.warns(PtdfOverrideWarning):
        parsed = parse_scenario(data)
    np.testing.assert_array_equal(parsed.zone.ptdf, 0.0)


def test_run_csv_rows(tmp_path):
    scen = dataclasses.replace(load_scenario("one_overload"), duration=5,
                               controller_enabled=False)
    log = run(scen)
    path = tmp_path / "run.csv"
    write_run_csv(log, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert header[:2] == ["step", "t_s"] and header[-1] == "solver_status"
    assert "L1:flow_MW" in header and "n1:e_MWh" in header and "n2:order_MW" in header
    assert len(body) == 5
    assert [r[0] for r in body] == ["1", "2", "3", "4", "5"]
    assert [float(r[1]) for r in body] == [2.0, 4.0, 6.0, 8.0, 10.0]
    col = header.index("L1:flow_MW")
    np.testing.assert_allclose([float(r[col]) for r in body], log.flows[:, 0], rtol=1e-9)
    assert run_table(log) == (header, body)
