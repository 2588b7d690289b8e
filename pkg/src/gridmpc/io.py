"""Scenario files (JSON) and run outputs (CSV, plain text).

A scenario file has five top-level blocks::

    {
      "name": "...",                       optional
      "network": {"nodes", "lines", "slack", "ptdf"?},
      "devices": {"batteries", "curtailable"},
      "controller": {"dt_s", "tau_curt_s", "tau_batt_s", "horizon", "weights", "e_ref"?},
      "timeline": {"duration_steps", "disturbances", "events"},
      "initial_flows": {"<line name>": MW, ...}
    }

Unknown keys anywhere are errors. Diagnostics carry the JSON path of the
offending value (``devices.batteries[0].node``); syntax errors carry the line
and column.
"""

import csv
import io as _io
import json
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import DelayConfig, SystemState
from .limits import DeviceBounds, LimitProfile
from .mpc import MPCController
from .simulator import IncidentEvent, Scenario, random_walk
from .zone import Line, NetworkError, Zone, compute_ptdf, validate_zone

BUNDLED = ("one_overload", "two_overloads", "volatile", "ring8")


class ScenarioError(ValueError):
    """A scenario file that cannot be turned into a valid :class:`Scenario`."""

    def __init__(self, messages, source=None):
        self.messages = list(messages)
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__("\n".join(prefix + m for m in self.messages))


class PtdfOverrideWarning(UserWarning):
    """Explicit PTDF rows were given together with reactances; the rows win."""


@dataclass
class _Ctx:
    errors: list

    def fail(self, path, message):
        self.errors.append(f"{path}: {message}")


def _keys(ctx, obj, path, required, optional=()):
    if not isinstance(obj, dict):
        ctx.fail(path, f"expected an object, got {type(obj).__name__}")
        return False
    for key in obj:
        if key not in required and key not in optional:
            ctx.fail(f"{path}.{key}", "unknown key")
    ok = True
    for key in required:
        if key not in obj:
            ctx.fail(path, f"missing required key {key!r}")
            ok = False
    return ok


def _num(ctx, value, path, positive=False, nonneg=False, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        ctx.fail(path, f"expected a number, got {json.dumps(value)}")
        return math.nan
    if integer and not float(value).is_integer():
        ctx.fail(path, f"expected an integer, got {value}")
    value = int(value) if integer else float(value)
    if not math.isfinite(value):
        ctx.fail(path, "must be finite")
    elif positive and not value > 0:
        ctx.fail(path, f"must be > 0, got {value}")
    elif nonneg and value < 0:
        ctx.fail(path, f"must be >= 0, got {value}")
    return value


def _str(ctx, value, path):
    if not isinstance(value, str) or not value:
        ctx.fail(path, f"expected a non-empty string, got {json.dumps(value)}")
        return None
    return value


def _list(ctx, value, path):
    if not isinstance(value, list):
        ctx.fail(path, f"expected a list, got {type(value).__name__}")
        return []
    return value


def _table(ctx, value, path, width):
    rows = _list(ctx, value, path)
    out = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        row = _list(ctx, row, f"{path}[{i}]")
        if len(row) != width:
            ctx.fail(f"{path}[{i}]", f"expected {width} values, got {len(row)}")
            continue
        out[i] = [_num(ctx, v, f"{path}[{i}][{j}]") for j, v in enumerate(row)]
    return out


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen[key] = value
    return seen


def load_json(text, source=None):
    try:
        return json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], source) from exc
    except ValueError as exc:
        raise ScenarioError([str(exc)], source) from exc


def _parse_network(ctx, net):
    if not _keys(ctx, net, "network", ("nodes", "lines", "slack"), ("ptdf",)):
        return None
    nodes = [_str(ctx, n, f"network.nodes[{i}]")
             for i, n in enumerate(_list(ctx, net["nodes"], "network.nodes"))]
    lines = []
    for i, raw in enumerate(_list(ctx, net["lines"], "network.lines")):
        path = f"network.lines[{i}]"
        if not _keys(ctx, raw, path, ("from", "to", "thermal_limit"),
                     ("name", "reactance", "margin")):
            continue
        line = Line(_str(ctx, raw["from"], f"{path}.from"), _str(ctx, raw["to"], f"{path}.to"),
                    _num(ctx, raw["thermal_limit"], f"{path}.thermal_limit", positive=True),
                    _num(ctx, raw.get("reactance"), f"{path}.reactance", positive=True,
                         allow_none=True),
                    _str(ctx, raw["name"], f"{path}.name") if "name" in raw else None)
        margin = _num(ctx, raw.get("margin"), f"{path}.margin", nonneg=True, allow_none=True)
        lines.append((line, margin))
    slack = _str(ctx, net["slack"], "network.slack")
    if ctx.errors:
        return None
    ptdf = None
    explicit = "ptdf" in net
    names = [line.name for line, _ in lines]
    if explicit:
        rows = net["ptdf"]
        if not isinstance(rows, dict):
            ctx.fail("network.ptdf", "expected an object keyed by line name")
            return None
        if len(rows) != len(lines):
            ctx.fail("network.ptdf", f"has {len(rows)} rows, network has {len(lines)} lines")
        for key in rows:
            if key not in names:
                ctx.fail(f"network.ptdf.{key}", "unknown line")
        for name in names:
            if name not in rows:
                ctx.fail("network.ptdf", f"missing row for line {name!r}")
        if ctx.errors:
            return None
        ptdf = np.vstack([_table(ctx, [rows[name]], f"network.ptdf.{name}", len(nodes))
                          for name in names])
        if all(line.reactance is not None for line, _ in lines):
            warnings.warn("network has both reactances and explicit ptdf rows; "
                          "using the explicit rows", PtdfOverrideWarning, stacklevel=3)
    if ctx.errors:
        return None
    return nodes, lines, slack, ptdf, explicit


def _parse_devices(ctx, dev, nodes):
    if not _keys(ctx, dev, "devices", ("batteries", "curtailable")):
        return None
    batt = {"node": [], "e_min": [], "e_max": [], "p_min": [], "p_max": [], "e0": []}
    for i, raw in enumerate(_list(ctx, dev["batteries"], "devices.batteries")):
        path = f"devices.batteries[{i}]"
        if not _keys(ctx, raw, path, tuple(batt)):
            continue
        node = _str(ctx, raw["node"], f"{path}.node")
        if node is not None and node not in nodes:
            ctx.fail(f"{path}.node", f"unknown node {node!r}")
        batt["node"].append(node)
        for key in ("e_min", "e_max", "p_min", "p_max", "e0"):
            batt[key].append(_num(ctx, raw[key], f"{path}.{key}"))
    curt_nodes, curt_max = [], []
    for i, raw in enumerate(_list(ctx, dev["curtailable"], "devices.curtailable")):
        path = f"devices.curtailable[{i}]"
        if not _keys(ctx, raw, path, ("node", "p_max")):
            continue
        node = _str(ctx, raw["node"], f"{path}.node")
        if node is not None and node not in nodes:
            ctx.fail(f"{path}.node", f"unknown node {node!r}")
        curt_nodes.append(node)
        curt_max.append(_num(ctx, raw["p_max"], f"{path}.p_max", nonneg=True))
    return batt, curt_nodes, curt_max


_WEIGHTS = ("battery", "curtailment", "energy_ref", "slack")
_EXTRA_WEIGHTS = ("curtailment_level", "slack_linear")
_WEIGHT_PARAMS = {"battery": "battery_weight", "curtailment": "curtailment_weight",
                  "energy_ref": "energy_ref_weight", "slack": "slack_weight",
                  "curtailment_level": "curtailment_level_weight",
                  "slack_linear": "slack_linear_weight"}


def _parse_controller(ctx, con, n_batteries):
    if not _keys(ctx, con, "controller", ("dt_s", "tau_curt_s", "tau_batt_s", "horizon",
                                          "weights"), ("e_ref",)):
        return None
    dt = _num(ctx, con["dt_s"], "controller.dt_s", positive=True)
    tau_c = _num(ctx, con["tau_curt_s"], "controller.tau_curt_s", positive=True)
    tau_b = _num(ctx, con["tau_batt_s"], "controller.tau_batt_s", positive=True)
    horizon = _num(ctx, con["horizon"], "controller.horizon", positive=True, integer=True)
    params = {}
    if _keys(ctx, con["weights"], "controller.weights", _WEIGHTS, _EXTRA_WEIGHTS):
        for key, value in con["weights"].items():
            if key in _WEIGHT_PARAMS:
                params[_WEIGHT_PARAMS[key]] = _num(ctx, value, f"controller.weights.{key}",
                                                   nonneg=True)
    e_ref = None
    if "e_ref" in con:
        e_ref = [_num(ctx, v, f"controller.e_ref[{i}]")
                 for i, v in enumerate(_list(ctx, con["e_ref"], "controller.e_ref"))]
        if len(e_ref) != n_batteries:
            ctx.fail("controller.e_ref", f"expected {n_batteries} values, got {len(e_ref)}")
    if ctx.errors:
        return None
    try:
        delays = DelayConfig(dt, tau_c, tau_b)
    except ValueError as exc:
        ctx.fail("controller", str(exc))
        return None
    if horizon < max(delays.d_curt, delays.d_batt, 1):
        ctx.fail("controller.horizon", f"{horizon} is shorter than the curtailment delay "
                                       f"({delays.d_curt} steps)")
    return delays, horizon, params, e_ref


def _parse_disturbances(ctx, value, n_steps, nodes, seed):
    path = "timeline.disturbances"
    if isinstance(value, list):
        return _table(ctx, value, path, len(nodes)), None
    if not _keys(ctx, value, path, ("random_walk",), ("base",)):
        return None, None
    gen = value["random_walk"]
    if not _keys(ctx, gen, f"{path}.random_walk", ("seed", "sigma"), ("nodes",)):
        return None, None
    file_seed = _num(ctx, gen["seed"], f"{path}.random_walk.seed", nonneg=True, integer=True)
    sigma = _num(ctx, gen["sigma"], f"{path}.random_walk.sigma", nonneg=True)
    mask = None
    if "nodes" in gen:
        chosen = [_str(ctx, n, f"{path}.random_walk.nodes[{i}]")
                  for i, n in enumerate(_list(ctx, gen["nodes"], f"{path}.random_walk.nodes"))]
        for i, node in enumerate(chosen):
            if node is not None and node not in nodes:
                ctx.fail(f"{path}.random_walk.nodes[{i}]", f"unknown node {node!r}")
        mask = [node in chosen for node in nodes]
    base = None
    if "base" in value:
        base = _table(ctx, value["base"], f"{path}.base", len(nodes))
    if ctx.errors:
        return None, None
    used_seed = file_seed if seed is None else int(seed)
    w = random_walk(n_steps, len(nodes), sigma, used_seed, mask)
    if base is not None:
        if base.shape[0] < n_steps:
            ctx.fail(f"{path}.base", f"has {base.shape[0]} rows, duration is {n_steps}")
            return None, None
        w = w + base[:n_steps]
    return w, used_seed


def _parse_events(ctx, value, line_names):
    events = []
    for i, raw in enumerate(_list(ctx, value, "timeline.events")):
        path = f"timeline.events[{i}]"
        if not _keys(ctx, raw, path, ("t_s", "line", "stairway")):
            continue
        t = _num(ctx, raw["t_s"], f"{path}.t_s", nonneg=True)
        line = _str(ctx, raw["line"], f"{path}.line")
        if line is not None and line not in line_names:
            ctx.fail(f"{path}.line", f"unknown line {line!r}")
        steps = []
        for j, step in enumerate(_list(ctx, raw["stairway"], f"{path}.stairway")):
            step = _list(ctx, step, f"{path}.stairway[{j}]")
            if len(step) != 2:
                ctx.fail(f"{path}.stairway[{j}]", "expected [duration_s, overload_mw]")
                continue
            steps.append((_num(ctx, step[0], f"{path}.stairway[{j}][0]", positive=True,
                               allow_none=True),
                          _num(ctx, step[1], f"{path}.stairway[{j}][1]", nonneg=True)))
        events.append(IncidentEvent(t, line, tuple(steps)))
    return events


def parse_network(data, source=None):
    """Nodes, lines and slack of the ``network`` block alone."""
    ctx = _Ctx([])
    if not isinstance(data, dict) or "network" not in data:
        raise ScenarioError(["$: missing required key 'network'"], source)
    net = _parse_network(ctx, data["network"])
    if net is None:
        raise ScenarioError(ctx.errors, source)
    nodes, lines, slack, _, _ = net
    return nodes, [line for line, _ in lines], slack


def parse_scenario(data, seed=None, source=None, controller_enabled=True):
    """Build a :class:`Scenario` from a decoded scenario document.

    ``seed`` overrides the random-walk seed of a generated disturbance block.
    """
    ctx = _Ctx([])
    if not _keys(ctx, data, "$", ("network", "devices", "controller", "timeline",
                                  "initial_flows"), ("name",)):
        raise ScenarioError(ctx.errors, source)
    name = _str(ctx, data.get("name", "scenario"), "name") or "scenario"
    net = _parse_network(ctx, data["network"])
    if net is None:
        raise ScenarioError(ctx.errors, source)
    nodes, lines, slack, ptdf, explicit = net
    try:
        zone_lines = tuple(line for line, _ in lines)
        if ptdf is None:
            ptdf = compute_ptdf(nodes, zone_lines, slack)
    except NetworkError as exc:
        raise ScenarioError([f"network: {exc}"], source) from exc

    dev = _parse_devices(ctx, data["devices"], nodes)
    con = _parse_controller(ctx, data["controller"], len(dev[0]["node"]) if dev else 0)
    if dev is None or con is None or ctx.errors:
        raise ScenarioError(ctx.errors, source)
    batt, curt_nodes, curt_max = dev
    zone = Zone(nodes, zone_lines, tuple(batt["node"]), tuple(curt_nodes), slack, ptdf)
    problems = validate_zone(zone)
    if problems:
        raise ScenarioError([f"network: {p}" for p in problems], source)
    try:
        bounds = DeviceBounds(batt["e_min"], batt["e_max"], batt["p_min"], batt["p_max"],
                              curt_max)
    except ValueError as exc:
        raise ScenarioError([f"devices: {exc}"], source) from exc
    delays, horizon, params, e_ref = con

    tl = data["timeline"]
    if not _keys(ctx, tl, "timeline", ("duration_steps", "disturbances"), ("events",)):
        raise ScenarioError(ctx.errors, source)
    duration = _num(ctx, tl["duration_steps"], "timeline.duration_steps", nonneg=True,
                     integer=True)
    if ctx.errors:
        raise ScenarioError(ctx.errors, source)
    w, used_seed = _parse_disturbances(ctx, tl["disturbances"], duration, nodes, seed)
    events = _parse_events(ctx, tl.get("events", []), zone.line_names)

    flows_raw = data["initial_flows"]
    flows = np.zeros(zone.n_lines)
    if _keys(ctx, flows_raw, "initial_flows", tuple(zone.line_names)):
        for i, line_name in enumerate(zone.line_names):
            flows[i] = _num(ctx, flows_raw[line_name], f"initial_flows.{line_name}")
    if ctx.errors:
        raise ScenarioError(ctx.errors, source)

    profiles = []
    try:
        for line, margin in lines:
            profiles.append(LimitProfile(line.thermal_limit, margin))
    except ValueError as exc:
        raise ScenarioError([f"network.lines: {exc}"], source) from exc
    controller = MPCController(horizon=horizon, **params)
    try:
        controller.fit(zone, delays, bounds, energy_target=e_ref if e_ref else None)
    except ValueError as exc:
        raise ScenarioError([f"controller: {exc}"], source) from exc
    for ev in events:
        try:
            LimitProfile(1.0, 0.0, ev.stairway)
        except ValueError as exc:
            raise ScenarioError([f"timeline.events: line {ev.line}: {exc}"], source) from exc

    scenario = Scenario(
        zone=zone, delays=delays, bounds=bounds, controller=controller,
        initial_state=SystemState.initial(flows, batt["e0"], zone.n_curtailable),
        disturbances=w, profiles=tuple(profiles), events=tuple(events), duration=duration,
        controller_enabled=controller_enabled,
        energy_ref=None if e_ref is None else np.asarray(e_ref, dtype=float),
        name=name, explicit_ptdf=explicit, seed=used_seed)
    problems = scenario.problems()
    if problems:
        raise ScenarioError(problems, source)
    return scenario


def bundled_path(name):
    """Path of a scenario shipped with the package (``one_overload`` etc.)."""
    stem = name[:-5] if name.endswith(".json") else name
    ref = resources.files("gridmpc") / "scenarios" / f"{stem}.json"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}; "
                                f"available: {', '.join(BUNDLED)}")
    return Path(str(ref))


def resolve(path_or_name):
    path = Path(path_or_name)
    if path.exists():
        return path
    if path.suffix in ("", ".json") and path.parent == Path("."):
        try:
            return bundled_path(path.name)
        except FileNotFoundError:
            pass
    raise FileNotFoundError(f"scenario file not found: {path_or_name}")


def read_document(path_or_name):
    path = resolve(path_or_name)
    return load_json(path.read_text(encoding="utf-8"), str(path)), str(path)


def load_scenario(path_or_name, seed=None, controller_enabled=True):
    data, source = read_document(path_or_name)
    return parse_scenario(data, seed=seed, source=source, controller_enabled=controller_enabled)


def _floats(arr):
    return [float(v) for v in np.ravel(arr)]


def scenario_to_dict(scenario):
    """Canonical document for ``scenario``; disturbances are written out densely."""
    zone = scenario.zone
    lines = []
    for line, profile in zip(zone.lines, scenario.profiles):
        entry = {"name": line.name, "from": line.from_node, "to": line.to_node,
                 "thermal_limit": float(line.thermal_limit)}
        if line.reactance is not None:
            entry["reactance"] = float(line.reactance)
        entry["margin"] = float(profile.margin)
        lines.append(entry)
    network = {"nodes": list(zone.nodes), "lines": lines, "slack": zone.slack_node}
    if scenario.explicit_ptdf:
        network["ptdf"] = {name: _floats(row) for name, row in zip(zone.line_names, zone.ptdf)}
    b = scenario.bounds
    e0 = scenario.initial_state.battery_energy
    batteries = [{"node": node, "e_min": float(b.e_min[i]), "e_max": float(b.e_max[i]),
                  "p_min": float(b.p_min[i]), "p_max": float(b.p_max[i]), "e0": float(e0[i])}
                 for i, node in enumerate(zone.battery_nodes)]
    curtailable = [{"node": node, "p_max": float(b.p_curt_max[i])}
                   for i, node in enumerate(zone.curtailable_nodes)]
    c = scenario.controller
    weights = {key: float(getattr(c, param)) for key, param in _WEIGHT_PARAMS.items()}
    controller = {"dt_s": float(scenario.delays.dt), "tau_curt_s": float(scenario.delays.tau_curt),
                  "tau_batt_s": float(scenario.delays.tau_batt), "horizon": int(c.horizon),
                  "weights": weights}
    if scenario.energy_ref is not None:
        controller["e_ref"] = _floats(scenario.energy_ref)
    events = [{"t_s": float(ev.t_s), "line": ev.line,
               "stairway": [[None if d is None or math.isinf(d) else float(d), float(o)]
                            for d, o in ev.stairway]}
              for ev in scenario.events]
    w = np.asarray(scenario.disturbances)[:scenario.duration]
    timeline = {"duration_steps": int(scenario.duration),
                "disturbances": [_floats(row) for row in w], "events": events}
    flows = {name: float(f) for name, f in zip(zone.line_names, scenario.initial_state.flows)}
    return {"name": scenario.name, "network": network,
            "devices": {"batteries": batteries, "curtailable": curtailable},
            "controller": controller, "timeline": timeline, "initial_flows": flows}


def _compact(obj, indent=0):
    """JSON with two-space indentation; lists of scalars stay on one line."""
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        flat = "{" + ", ".join(f"{json.dumps(k)}: {json.dumps(v)}" for k, v in obj.items()) + "}"
        if all(not isinstance(v, (dict, list)) for v in obj.values()) and len(flat) <= 100:
            return flat
        items = [f"{pad}{json.dumps(k)}: {_compact(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, list):
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(json.dumps(v) for v in obj) + "]"
        items = [pad + _compact(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]"
    return json.dumps(obj)


def dumps_document(document):
    return _compact(document) + "\n"


def dumps_scenario(scenario):
    return dumps_document(scenario_to_dict(scenario))


def _fmt(x):
    x = float(x)
    if x == 0.0:
        return "0"
    return format(x, ".10g")


def run_table(log):
    """Header and rows of ``run.csv``.

    Row ``s`` describes step ``s`` (time ``s dt``): the state reached there,
    its limits and violation, the slack predicted for it, the orders issued
    at step ``s - 1`` and the status of that solve.
    """
    header = ["step", "t_s"]
    for name in log.line_names:
        header += [f"{name}:flow_MW", f"{name}:limit_MW", f"{name}:violation_MW",
                   f"{name}:slack_MW"]
    for node in log.battery_nodes:
        header += [f"{node}:p_MW", f"{node}:e_MWh"]
    for node in log.curtailable_nodes:
        header += [f"{node}:p_curt_MW", f"{node}:order_MW"]
    header.append("solver_status")
    rows = []
    for k in range(log.duration):
        row = [str(k + 1), _fmt((k + 1) * log.dt)]
        for i in range(len(log.line_names)):
            row += [_fmt(log.flows[k, i]), _fmt(log.limits[k, i]), _fmt(log.violation[k, i]),
                    _fmt(log.slack[k, i])]
        for i in range(len(log.battery_nodes)):
            row += [_fmt(log.battery_power[k, i]), _fmt(log.battery_energy[k, i])]
        for i in range(len(log.curtailable_nodes)):
            row += [_fmt(log.curtailment[k, i]), _fmt(log.orders_curt[k, i])]
        row.append(log.status[k])
        rows.append(row)
    return header, rows


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_run_csv(log, path):
    _write_csv(path, *run_table(log))


def summary_text(log, name="scenario", reference=None):
    s = log.summary()
    lines = [f"scenario: {name}", f"steps: {log.duration}", f"dt_s: {_fmt(log.dt)}",
             f"curtailed_energy_MWh: {_fmt(s.curtailed_energy_mwh)}",
             f"battery_throughput_MWh: {_fmt(s.battery_throughput_mwh)}",
             f"max_violation_MW: {_fmt(s.max_violation_mw)}",
             f"violation_steps: {s.violation_steps}",
             f"violation_duration_s: {_fmt(s.violation_seconds)}",
             f"solver_failures: {s.solver_failures}"]
    if reference is not None:
        r = reference.summary()
        lines += [f"reference_max_violation_MW: {_fmt(r.max_violation_mw)}",
                  f"reference_violation_steps: {r.violation_steps}",
                  f"reference_violation_duration_s: {_fmt(r.violation_seconds)}"]
    return "\n".join(lines) + "\n"


def _long(series):
    """Long-format rows ``(series, t_s, value)`` from ``{label: (times, values)}``."""
    rows = []
    for label, (times, values) in series.items():
        rows += [[label, _fmt(t), _fmt(v)] for t, v in zip(times, values)]
    return rows


def write_plotdata(log, directory, reference=None):
    """Per-figure long tables: flows, battery, curtailment and, with a
    reference run, the controlled-minus-reference comparison."""
    from .simulator import compare

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t = log.times
    header = ["series", "t_s", "value"]
    flows = {}
    for i, name in enumerate(log.line_names):
        flows[f"{name}:flow_MW"] = (t, log.flows[:, i])
        flows[f"{name}:limit_MW"] = (t, log.limits[:, i])
        if reference is not None:
            flows[f"{name}:reference_flow_MW"] = (t, reference.flows[:, i])
    _write_csv(directory / "flows.csv", header, _long(flows))
    battery = {}
    for i, node in enumerate(log.battery_nodes):
        battery[f"{node}:p_MW"] = (t, log.battery_power[:, i])
        battery[f"{node}:e_MWh"] = (t, log.battery_energy[:, i])
        battery[f"{node}:order_MW"] = (t, log.orders_batt[:, i])
    _write_csv(directory / "battery.csv", header, _long(battery))
    curt = {}
    for i, node in enumerate(log.curtailable_nodes):
        curt[f"{node}:p_curt_MW"] = (t, log.curtailment[:, i])
        curt[f"{node}:order_MW"] = (t, log.orders_curt[:, i])
        curt[f"{node}:effective_MW"] = (t, log.effective_curt[:, i])
    _write_csv(directory / "curtailment.csv", header, _long(curt))
    if reference is not None:
        diff = compare(log, reference)
        table = {f"{name}:flow_difference_MW": (diff.times, diff.flows[:, i])
                 for i, name in enumerate(diff.line_names)}
        _write_csv(directory / "comparison.csv", header, _long(table))
