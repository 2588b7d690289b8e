"""Time-varying line limits and the polyhedral constraint data.

A line in normal operation must stay below ``thermal_limit - margin``. After an
incident it may follow a stairway of tolerated overloads that decreases back
to the thermal limit. Stairway edges are right-continuous: at the exact edge
instant the next (tighter) step already applies.
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_vector

DEFAULT_MARGIN_FRACTION = 0.02


class LimitMode(str, enum.Enum):
    NORMAL = "normal"
    INCIDENT = "incident"


class IncidentError(RuntimeError):
    pass


def normalize_stairway(stairway):
    """Validate ``[(duration_s, overload_mw), ...]`` and close it with ``(inf, 0)``."""
    steps = []
    for duration, overload in stairway:
        duration = math.inf if duration is None else float(duration)
        overload = float(overload)
        if not duration > 0:
            raise ValueError(f"stairway step duration must be > 0, got {duration}")
        if overload < 0:
            raise ValueError(f"stairway overload must be >= 0, got {overload}")
        if steps and overload > steps[-1][1]:
            raise ValueError("stairway overloads must be nonincreasing")
        if steps and math.isinf(steps[-1][0]):
            raise ValueError("only the last stairway step may be unbounded")
        steps.append((duration, overload))
    if not steps or steps[-1][1] != 0.0:
        if steps and math.isinf(steps[-1][0]):
            raise ValueError("an unbounded stairway step must allow zero overload")
        steps.append((math.inf, 0.0))
    return tuple(steps)


@dataclass(frozen=True)
class LimitProfile:
    thermal_limit: float
    margin: float | None = None
    stairway: tuple = ()
    mode: LimitMode = LimitMode.NORMAL
    incident_time: float | None = None

    def __post_init__(self):
        if not self.thermal_limit > 0:
            raise ValueError(f"thermal_limit must be > 0, got {self.thermal_limit}")
        if self.margin is None:
            object.__setattr__(self, "margin", DEFAULT_MARGIN_FRACTION * self.thermal_limit)
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if not self.thermal_limit - self.margin > 0:
            raise ValueError("margin must leave a positive normal-mode bound")
        if self.stairway:
            object.__setattr__(self, "stairway", normalize_stairway(self.stairway))
        if self.mode is LimitMode.INCIDENT and self.incident_time is None:
            raise ValueError("incident profiles need an incident_time")

    @property
    def normal_bound(self):
        return self.thermal_limit - self.margin


def limit_at(profile, t):
    """Permitted flow magnitude (MW) at absolute time ``t`` (s)."""
    if profile.mode is LimitMode.NORMAL or t < profile.incident_time:
        return profile.normal_bound
    elapsed = t - profile.incident_time
    start = 0.0
    for duration, overload in profile.stairway:
        if elapsed < start + duration:
            return profile.thermal_limit + overload
        start += duration
    return profile.thermal_limit


def trigger_incident(profile, t, stairway=None):
    """Switch a normal profile to its post-incident stairway starting at ``t``.

    The normal-mode margin no longer applies once the stairway is active.
    """
    if profile.mode is LimitMode.INCIDENT:
        raise IncidentError(f"incident already triggered at t={profile.incident_time} s")
    steps = normalize_stairway(stairway if stairway is not None else profile.stairway)
    return replace(profile, stairway=steps, mode=LimitMode.INCIDENT, incident_time=float(t))


@dataclass(frozen=True)
class DeviceBounds:
    """Battery energy (MWh) and power (MW) ranges plus curtailment caps (MW)."""

    e_min: np.ndarray
    e_max: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    p_curt_max: np.ndarray

    def __post_init__(self):
        n_b = np.size(self.e_min)
        for name in ("e_min", "e_max", "p_min", "p_max"):
            object.__setattr__(self, name, check_vector(getattr(self, name), n_b, name))
        object.__setattr__(self, "p_curt_max", check_vector(self.p_curt_max, name="p_curt_max"))
        problems = []
        for i in np.flatnonzero(self.e_min > self.e_max):
            problems.append(f"battery {i}: e_min {self.e_min[i]} > e_max {self.e_max[i]}")
        for i in np.flatnonzero(self.p_min > self.p_max):
            problems.append(f"battery {i}: p_min {self.p_min[i]} > p_max {self.p_max[i]}")
        for i in np.flatnonzero(self.p_curt_max < 0):
            problems.append(f"curtailable {i}: p_max {self.p_curt_max[i]} < 0")
        if problems:
            raise ValueError("infeasible device bounds: " + "; ".join(problems))

    @property
    def n_batteries(self):
        return self.e_min.size

    @property
    def n_curtailable(self):
        return self.p_curt_max.size


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """One-step constraint rows over the horizon ``k .. k+N``.

    Rows read ``H_x x + H_u_curt u_curt + H_u_batt u_batt <= h0[t]`` where ``x``
    is the state at step ``k+t`` and the inputs are the effective ones applied
    at that step. Flow rows (the first ``2 nL``) have no input terms and bound
    the flows of ``x`` itself; the device rows bound the device state after
    the inputs act.
    """

    H_x: np.ndarray
    H_u_curt: np.ndarray
    H_u_batt: np.ndarray
    h0: np.ndarray
    n_lines: int
    k: int
    dt: float
    bounds: DeviceBounds
    has_curtailment_floor: bool = True

    @property
    def n_rows(self):
        return self.H_x.shape[0]

    @property
    def horizon(self):
        return self.h0.shape[0] - 1

    @property
    def flow_rows(self):
        return slice(0, 2 * self.n_lines)

    @property
    def device_rows(self):
        return slice(2 * self.n_lines, self.n_rows)

    def h0_of_t(self, t):
        return self.h0[t]

    def line_limits(self, t):
        return self.h0[t, :self.n_lines]


def build_constraints(zone, profiles, bounds, k, horizon, dt, curtailment_floor=True):
    """Constraint data for steps ``k .. k+horizon``; line bounds use ``limit_at((k+t) dt)``."""
    if len(profiles) != zone.n_lines:
        raise ValueError(f"need one limit profile per line ({zone.n_lines}), got {len(profiles)}")
    if bounds.n_batteries != zone.n_batteries or bounds.n_curtailable != zone.n_curtailable:
        raise ValueError("device bounds do not match the zone's batteries/curtailable nodes")
    n_l, n_b, n_c = zone.n_lines, zone.n_batteries, zone.n_curtailable
    n = n_l + n_b + n_c + n_b
    dt_h = dt / 3600.0
    I_l, I_b, I_c = np.eye(n_l), np.eye(n_b), np.eye(n_c)
    e = slice(n_l, n_l + n_b)
    c = slice(n_l + n_b, n_l + n_b + n_c)
    p = slice(n_l + n_b + n_c, n)

    blocks = []  # (H_x rows, H_u_curt rows, H_u_batt rows, rhs or None for flows)

    def add(x_block, uc, ub, rhs):
        blocks.append((x_block, uc, ub, rhs))

    fx = np.zeros((n_l, n))
    fx[:, :n_l] = I_l
    add(fx, np.zeros((n_l, n_c)), np.zeros((n_l, n_b)), None)
    add(-fx, np.zeros((n_l, n_c)), np.zeros((n_l, n_b)), None)

    # battery energy after the step: E + dt_h (P + u)
    ex = np.zeros((n_b, n))
    ex[:, e] = I_b
    ex[:, p] = dt_h * I_b
    add(-ex, np.zeros((n_b, n_c)), -dt_h * I_b, -bounds.e_min)
    add(ex, np.zeros((n_b, n_c)), dt_h * I_b, bounds.e_max)

    cx = np.zeros((n_c, n))
    cx[:, c] = I_c
    add(cx, I_c, np.zeros((n_c, n_b)), bounds.p_curt_max)
    if curtailment_floor:
        add(-cx, -I_c, np.zeros((n_c, n_b)), np.zeros(n_c))

    px = np.zeros((n_b, n))
    px[:, p] = I_b
    add(-px, np.zeros((n_b, n_c)), -I_b, -bounds.p_min)
    add(px, np.zeros((n_b, n_c)), I_b, bounds.p_max)

    H_x = np.vstack([b[0] for b in blocks])
    H_uc = np.vstack([b[1] for b in blocks])
    H_ub = np.vstack([b[2] for b in blocks])
    device_rhs = np.concatenate([b[3] for b in blocks[2:]])

    h0 = np.empty((horizon + 1, H_x.shape[0]))
    for t in range(horizon + 1):
        lim = np.array([limit_at(prof, (k + t) * dt) for prof in profiles])
        h0[t] = np.concatenate([lim, lim, device_rhs])
    return ConstraintSet(H_x, H_uc, H_ub, h0, n_l, k, dt, bounds, curtailment_floor)
