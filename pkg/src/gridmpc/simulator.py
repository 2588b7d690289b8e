"""Closed-loop scenario runs: plant, order buffers, incidents, controller and scoring."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from ._validation import check_series
from .dynamics import OrderBuffer, build_model, push_order, step
from .limits import limit_at, trigger_incident
from .mpc import MPCController, MpcSolveError
from .zone import validate_zone

logger = logging.getLogger(__name__)

VIOLATION_TOL = 1e-6


@dataclass(frozen=True)
class IncidentEvent:
    t_s: float
    line: str
    stairway: tuple


def random_walk(n_steps, n_nodes, sigma, seed, nodes=None):
    """Injection increments of a seeded Gaussian random walk, shape (n_steps, n_nodes).

    ``nodes`` is an optional boolean mask restricting which columns move.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, sigma, size=(n_steps, n_nodes))
    if nodes is not None:
        w *= np.asarray(nodes, dtype=bool)[None, :]
    return w


@dataclass(eq=False)
class Scenario:
    """Everything a run needs.

    ``disturbances[k]`` is the per-node injection change applied by the plant
    between steps ``k`` and ``k+1``; the controller sees it at step ``k`` and
    holds it over its horizon. ``energy_ref`` defaults to the initial battery
    energy. ``name``, ``explicit_ptdf`` and ``seed`` record where the scenario
    came from so that it can be written back out.
    """

    zone: object
    delays: object
    bounds: object
    controller: MPCController
    initial_state: object
    disturbances: np.ndarray
    profiles: tuple
    events: tuple = ()
    duration: int = 0
    controller_enabled: bool = True
    energy_ref: np.ndarray | None = None
    name: str = "scenario"
    explicit_ptdf: bool = True
    seed: int | None = None

    def problems(self):
        out = list(validate_zone(self.zone))
        z = self.zone
        if self.duration < 0:
            out.append("duration must be >= 0")
        w = np.asarray(self.disturbances)
        if w.ndim != 2 or w.shape[1] != z.n_nodes:
            out.append(f"disturbances must have {z.n_nodes} columns, got shape {w.shape}")
        elif w.shape[0] < self.duration:
            out.append(f"disturbance series has {w.shape[0]} rows, duration is {self.duration}")
        if self.initial_state.flows.size != z.n_lines:
            out.append(f"initial flows have {self.initial_state.flows.size} entries, "
                       f"zone has {z.n_lines} lines")
        if len(self.profiles) != z.n_lines:
            out.append("one limit profile per line is required")
        if self.bounds.n_batteries != z.n_batteries:
            out.append("battery bounds do not match battery nodes")
        if self.bounds.n_curtailable != z.n_curtailable:
            out.append("curtailment caps do not match curtailable nodes")
        else:
            e0 = self.initial_state.battery_energy
            if e0.size == self.bounds.n_batteries:
                for i in np.flatnonzero((e0 < self.bounds.e_min) | (e0 > self.bounds.e_max)):
                    out.append(f"battery at {z.battery_nodes[i]}: e0 {e0[i]} outside "
                               f"[{self.bounds.e_min[i]}, {self.bounds.e_max[i]}]")
        end = self.duration * self.delays.dt
        names = set(z.line_names)
        seen = set()
        for ev in self.events:
            if ev.line not in names:
                out.append(f"event at t={ev.t_s} s names unknown line {ev.line!r}")
            if not 0 <= ev.t_s < end:
                out.append(f"event on {ev.line} at t={ev.t_s} s is outside the run [0, {end})")
            if ev.line in seen:
                out.append(f"second incident on line {ev.line}; one per line per run")
            seen.add(ev.line)
        return out


@dataclass
class Summary:
    curtailed_energy_mwh: float
    battery_throughput_mwh: float
    max_violation_mw: float
    violation_steps: int
    violation_seconds: float
    solver_failures: int

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(eq=False)
class RunLog:
    """Per-step record. Row ``k`` holds the orders decided at step ``k`` and the
    state reached at step ``k+1`` (time ``(k+1) dt``), with the line limits,
    actual violations and the slack the controller predicted for that state.
    ``clipping[k]`` is the largest adjustment (MW) the plant had to make to
    the delayed inputs to keep devices within their physical ranges.
    """

    dt: float
    line_names: list
    battery_nodes: list
    curtailable_nodes: list
    initial_state: object
    flows: np.ndarray
    limits: np.ndarray
    violation: np.ndarray
    slack: np.ndarray
    battery_power: np.ndarray
    battery_energy: np.ndarray
    curtailment: np.ndarray
    orders_curt: np.ndarray
    orders_batt: np.ndarray
    effective_curt: np.ndarray
    effective_batt: np.ndarray
    status: list = field(default_factory=list)
    iterations: np.ndarray = None
    clipping: np.ndarray = None

    @property
    def duration(self):
        return self.flows.shape[0]

    @property
    def times(self):
        return self.dt * np.arange(1, self.duration + 1)

    def summary(self):
        return score(self)


def _plant_inputs(state, eff_c, eff_b, bounds, dt_h):
    """Clip the effective inputs so the plant never leaves its physical ranges."""
    curt = np.clip(state.curtailment + eff_c, 0.0, bounds.p_curt_max)
    lo = np.maximum(bounds.p_min, (bounds.e_min - state.battery_energy) / dt_h)
    hi = np.minimum(bounds.p_max, (bounds.e_max - state.battery_energy) / dt_h)
    power = np.minimum(np.maximum(state.battery_power + eff_b, lo), hi)
    return curt - state.curtailment, power - state.battery_power


def run(scenario):
    """Simulate ``scenario`` in closed loop and return its :class:`RunLog`."""
    problems = scenario.problems()
    if problems:
        raise ValueError("invalid scenario: " + "; ".join(problems))
    zone, delays, bounds = scenario.zone, scenario.delays, scenario.bounds
    T, dt = scenario.duration, delays.dt
    model = build_model(zone, delays)
    w_series = check_series(scenario.disturbances, T, zone.n_nodes, "disturbances")
    energy_ref = scenario.energy_ref
    if energy_ref is None:
        energy_ref = scenario.initial_state.battery_energy
    controller = None
    if scenario.controller_enabled:
        controller = clone(scenario.controller).fit(zone, delays, bounds, energy_target=energy_ref)

    n_l, n_b, n_c = zone.n_lines, zone.n_batteries, zone.n_curtailable
    rec = {name: np.zeros((T, width)) for name, width in (
        ("flows", n_l), ("limits", n_l), ("violation", n_l), ("slack", n_l),
        ("battery_power", n_b), ("battery_energy", n_b), ("curtailment", n_c),
        ("orders_curt", n_c), ("orders_batt", n_b), ("effective_curt", n_c),
        ("effective_batt", n_b))}
    status = []
    iterations = np.zeros(T, dtype=int)
    clipping = np.zeros(T)

    profiles = list(scenario.profiles)
    pending_events = sorted(scenario.events, key=lambda ev: ev.t_s)
    state = scenario.initial_state.copy()
    buffer = OrderBuffer.for_model(model)
    fallback_plan = None
    zeros_c, zeros_b = np.zeros(n_c), np.zeros(n_b)

    for k in range(T):
        t = k * dt
        while pending_events and pending_events[0].t_s <= t + 1e-9:
            ev = pending_events.pop(0)
            i = zone.line_index(ev.line)
            profiles[i] = trigger_incident(profiles[i], ev.t_s, ev.stairway)
            logger.info("incident on %s at t=%.1f s", ev.line, ev.t_s)
        w = w_series[k]

        move_c, move_b, slack, label = zeros_c, zeros_b, np.zeros(n_l), "disabled"
        if controller is not None:
            cs = controller.build_constraints(profiles, k)
            if __debug__:
                for j in range(cs.horizon + 1):
                    expected = [limit_at(p, (k + j) * dt) for p in profiles]
                    assert np.array_equal(cs.line_limits(j), expected)
            try:
                sol = controller.solve(state, w, buffer.curt_matrix(), buffer.batt_matrix(), cs)
                move_c, move_b = sol.first_move
                slack = sol.slacks[0]
                label = sol.status.value
                iterations[k] = sol.iterations
                fallback_plan = (sol.plan_curt[1:], sol.plan_batt[1:])
            except MpcSolveError as exc:
                logger.warning("step %d: %s; following the previous plan", k, exc)
                label = exc.result.status.value
                iterations[k] = exc.result.iterations
                if fallback_plan is not None and len(fallback_plan[0]):
                    move_c, move_b = fallback_plan[0][0], fallback_plan[1][0]
                    fallback_plan = (fallback_plan[0][1:], fallback_plan[1][1:])

        eff_c, eff_b = push_order(buffer, move_c, move_b)
        applied_c, applied_b = _plant_inputs(state, eff_c, eff_b, bounds, delays.dt_hours)
        clipping[k] = max(np.abs(applied_c - eff_c).max(initial=0.0),
                          np.abs(applied_b - eff_b).max(initial=0.0))
        state = step(model, state, applied_c, applied_b, w)

        limits = np.array([limit_at(p, (k + 1) * dt) for p in profiles])
        rec["flows"][k] = state.flows
        rec["limits"][k] = limits
        rec["violation"][k] = np.maximum(np.abs(state.flows) - limits, 0.0)
        rec["slack"][k] = slack
        rec["battery_power"][k] = state.battery_power
        rec["battery_energy"][k] = state.battery_energy
        rec["curtailment"][k] = state.curtailment
        rec["orders_curt"][k] = move_c
        rec["orders_batt"][k] = move_b
        rec["effective_curt"][k] = applied_c
        rec["effective_batt"][k] = applied_b
        status.append(label)

    return RunLog(dt=dt, line_names=zone.line_names, battery_nodes=list(zone.battery_nodes),
                  curtailable_nodes=list(zone.curtailable_nodes),
                  initial_state=scenario.initial_state.copy(), status=status,
                  iterations=iterations, clipping=clipping, **rec)


def score(log):
    dt_h = log.dt / 3600.0
    violated = (log.violation > VIOLATION_TOL).any(axis=1) if log.duration else np.zeros(0, bool)
    failures = sum(1 for s in log.status if s not in ("optimal", "disabled"))
    return Summary(
        curtailed_energy_mwh=float(log.curtailment.sum() * dt_h),
        battery_throughput_mwh=float(np.abs(log.battery_power).sum() * dt_h),
        max_violation_mw=float(log.violation.max(initial=0.0)),
        violation_steps=int(violated.sum()),
        violation_seconds=float(violated.sum() * log.dt),
        solver_failures=failures,
    )


@dataclass
class Comparison:
    """Step-aligned differences ``a - b`` between two runs of the same zone."""

    times: np.ndarray
    line_names: list
    flows: np.ndarray
    limits: np.ndarray
    orders_curt: np.ndarray
    orders_batt: np.ndarray
    effective_curt: np.ndarray
    effective_batt: np.ndarray


def compare(run_a, run_b):
    if run_a.duration != run_b.duration or run_a.dt != run_b.dt:
        raise ValueError(f"runs differ in length or sampling: {run_a.duration} x {run_a.dt} s "
                         f"vs {run_b.duration} x {run_b.dt} s")
    if (run_a.line_names != run_b.line_names or run_a.battery_nodes != run_b.battery_nodes
            or run_a.curtailable_nodes != run_b.curtailable_nodes):
        raise ValueError("runs were made on different zones")
    return Comparison(
        times=run_a.times,
        line_names=list(run_a.line_names),
        flows=run_a.flows - run_b.flows,
        limits=run_a.limits - run_b.limits,
        orders_curt=run_a.orders_curt - run_b.orders_curt,
        orders_batt=run_a.orders_batt - run_b.orders_batt,
        effective_curt=run_a.effective_curt - run_b.effective_curt,
        effective_batt=run_a.effective_batt - run_b.effective_batt,
    )
