"""Delayed-input state-space model of the zone.

State layout (length ``n = nL + nB + nC + nB``)::

    x = [flows (MW) | battery energy (MWh) | curtailment (MW) | battery power (MW)]

Orders are deltas. A curtailment order withdraws generation, a positive
battery order increases charging; both reduce the injection at their node, so
the flow blocks of the input matrices are the negated PTDF columns. Energy is
integrated in MWh, hence the ``dt / 3600`` coupling.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ._validation import check_vector, frozen

SECONDS_PER_HOUR = 3600.0


def delay_steps(tau, dt):
    """Discrete delay ``ceil(tau / dt) - 1``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not tau > 0:
        raise ValueError(f"delay must be > 0 s, got {tau}")
    # round first so 45 / 2.0000000001 style noise cannot bump the ceiling
    return math.ceil(round(tau / dt, 9)) - 1


@dataclass(frozen=True)
class DelayConfig:
    dt: float
    tau_curt: float
    tau_batt: float

    def __post_init__(self):
        if self.d_curt < self.d_batt:
            raise ValueError(f"curtailment delay ({self.d_curt} steps) shorter than "
                             f"battery delay ({self.d_batt} steps)")

    @property
    def d_curt(self):
        return delay_steps(self.tau_curt, self.dt)

    @property
    def d_batt(self):
        return delay_steps(self.tau_batt, self.dt)

    @property
    def dt_hours(self):
        return self.dt / SECONDS_PER_HOUR


@dataclass
class SystemState:
    flows: np.ndarray
    battery_energy: np.ndarray
    curtailment: np.ndarray
    battery_power: np.ndarray

    def __post_init__(self):
        self.flows = check_vector(self.flows, name="flows")
        self.battery_energy = check_vector(self.battery_energy, name="battery_energy")
        self.curtailment = check_vector(self.curtailment, name="curtailment")
        self.battery_power = check_vector(self.battery_power, self.battery_energy.size,
                                          "battery_power")

    @classmethod
    def initial(cls, flows, battery_energy, n_curtailable):
        energy = check_vector(battery_energy, name="battery_energy")
        return cls(flows, energy, np.zeros(n_curtailable), np.zeros(energy.size))

    def to_vector(self):
        return np.concatenate([self.flows, self.battery_energy, self.curtailment,
                               self.battery_power])

    @classmethod
    def from_vector(cls, x, n_lines, n_batteries, n_curtailable):
        x = check_vector(x, n_lines + 2 * n_batteries + n_curtailable, "x")
        a = n_lines
        b = a + n_batteries
        c = b + n_curtailable
        return cls(x[:a].copy(), x[a:b].copy(), x[b:c].copy(), x[c:].copy())

    def copy(self):
        return SystemState(self.flows.copy(), self.battery_energy.copy(),
                           self.curtailment.copy(), self.battery_power.copy())


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """``x+ = A x + B_curt u_curt + B_batt u_batt + B_w w``."""

    A: np.ndarray
    B_curt: np.ndarray
    B_batt: np.ndarray
    B_w: np.ndarray
    n_lines: int
    n_batteries: int
    n_curtailable: int
    n_nodes: int
    delays: DelayConfig

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def flows(self):
        return slice(0, self.n_lines)

    @property
    def energy(self):
        return slice(self.n_lines, self.n_lines + self.n_batteries)

    @property
    def curtailment(self):
        start = self.n_lines + self.n_batteries
        return slice(start, start + self.n_curtailable)

    @property
    def battery_power(self):
        start = self.n_lines + self.n_batteries + self.n_curtailable
        return slice(start, start + self.n_batteries)

    def unpack(self, x):
        return SystemState.from_vector(x, self.n_lines, self.n_batteries, self.n_curtailable)


def build_model(zone, delays):
    n_l, n_b, n_c, n_n = zone.n_lines, zone.n_batteries, zone.n_curtailable, zone.n_nodes
    n = n_l + n_b + n_c + n_b
    dt_h = delays.dt_hours
    e = slice(n_l, n_l + n_b)
    c = slice(n_l + n_b, n_l + n_b + n_c)
    p = slice(n_l + n_b + n_c, n)

    A = np.eye(n)
    A[e, p] = dt_h * np.eye(n_b)

    B_curt = np.zeros((n, n_c))
    B_curt[:n_l] = -zone.columns(zone.curtailable_nodes)
    B_curt[c] = np.eye(n_c)

    B_batt = np.zeros((n, n_b))
    B_batt[:n_l] = -zone.columns(zone.battery_nodes)
    B_batt[e] = dt_h * np.eye(n_b)
    B_batt[p] = np.eye(n_b)

    B_w = np.zeros((n, n_n))
    B_w[:n_l] = zone.ptdf

    return StateSpaceModel(frozen(A), frozen(B_curt), frozen(B_batt), frozen(B_w),
                           n_l, n_b, n_c, n_n, delays)


def step(model, state, u_curt, u_batt, w):
    """Advance one sample with the effective (already delayed) inputs."""
    x = state.to_vector() if isinstance(state, SystemState) else check_vector(
        state, model.n_states, "state")
    if x.size != model.n_states:
        raise ValueError(f"state has {x.size} entries, model expects {model.n_states}")
    u_curt = check_vector(u_curt, model.n_curtailable, "u_curt")
    u_batt = check_vector(u_batt, model.n_batteries, "u_batt")
    w = check_vector(w, model.n_nodes, "w")
    x_next = model.A @ x + model.B_curt @ u_curt + model.B_batt @ u_batt + model.B_w @ w
    return model.unpack(x_next)


class OrderBuffer:
    """FIFO of issued-but-not-yet-effective orders, pre-filled with zeros."""

    def __init__(self, d_curt, d_batt, n_curtailable, n_batteries):
        self.d_curt = int(d_curt)
        self.d_batt = int(d_batt)
        self.pending_curt = deque(np.zeros(n_curtailable) for _ in range(self.d_curt))
        self.pending_batt = deque(np.zeros(n_batteries) for _ in range(self.d_batt))
        self._n_c = n_curtailable
        self._n_b = n_batteries

    @classmethod
    def for_model(cls, model):
        d = model.delays
        return cls(d.d_curt, d.d_batt, model.n_curtailable, model.n_batteries)

    def curt_matrix(self):
        """Pending curtailment orders, oldest first, shape (d_curt, nC)."""
        return np.array(self.pending_curt).reshape(self.d_curt, self._n_c)

    def batt_matrix(self):
        return np.array(self.pending_batt).reshape(self.d_batt, self._n_b)


def push_order(buffer, u_curt, u_batt):
    """Queue new orders; return the ones issued ``d`` steps ago (now effective)."""
    u_curt = check_vector(u_curt, buffer._n_c, "u_curt").copy()
    u_batt = check_vector(u_batt, buffer._n_b, "u_batt").copy()
    buffer.pending_curt.append(u_curt)
    buffer.pending_batt.append(u_batt)
    return buffer.pending_curt.popleft(), buffer.pending_batt.popleft()
