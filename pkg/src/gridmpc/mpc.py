"""Condensed receding-horizon QP with soft line limits.

Decision vector, stacked time-major inside each block::

    z = [U_curt (N x nC) | U_batt (N x nB) | eps (N x nL)]

``U_*[t]`` is the order issued at step ``k+t``. Orders issued before ``k`` and
still in flight (``pending``) are parameters, so the first ``d`` effective
inputs of each class come from them. ``eps[t-1]`` softens both one-sided flow
rows of every line at predicted step ``k+t``.

Objective (all weights diagonal)::

    sum_{t=1..N} |x_{k+t} - x_ref|^2_Q1 + sum_{t=0..N-1} |u_{k+t}|^2_Q2
        + slack_weight * sum eps^2 + slack_linear_weight * sum eps

The linear slack term makes the penalty exact: as long as its weight exceeds
the flow-row multipliers, the soft problem returns ``eps = 0`` whenever the
hard one is feasible.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import qp
from ._validation import check_matrix, check_vector
from .dynamics import SystemState, build_model, step
from .limits import build_constraints

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 30

# row block codes used to match rows across consecutive problems
_FLOW, _DEVICE, _SLACK_FLOOR, _CURT_RANGE, _BATT_RANGE = range(5)


class MpcSolveError(RuntimeError):
    """The QP did not reach an optimal status; carries the problem for replay."""

    def __init__(self, result, problem, dump_path=None):
        self.result = result
        self.problem = problem
        self.dump_path = dump_path
        where = f"; instance dumped to {dump_path}" if dump_path else ""
        super().__init__(f"MPC QP ended with status {result.status.value} after "
                         f"{result.iterations} iterations{where}")


@dataclass(frozen=True, eq=False)
class CostConfig:
    q1: np.ndarray
    q2: np.ndarray
    x_ref: np.ndarray
    slack_weight: float = 1e6
    slack_linear_weight: float = 1e7
    regularization: float = 1e-9
    n_curtailable: int = 0

    def __post_init__(self):
        q1 = check_vector(self.q1, name="q1")
        q2 = check_vector(self.q2, name="q2")
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)
        object.__setattr__(self, "x_ref", check_vector(self.x_ref, q1.size, "x_ref"))
        if np.any(q1 < 0):
            raise ValueError("state weights must be >= 0")
        if np.any(q2 <= 0):
            raise ValueError("input weights must be > 0")
        if not self.slack_weight > 0 or self.slack_linear_weight < 0:
            raise ValueError("slack_weight must be > 0 and slack_linear_weight >= 0")
        curt, batt = q2[:self.n_curtailable], q2[self.n_curtailable:]
        if curt.size and batt.size and curt.min() <= batt.max():
            raise ValueError("curtailment orders must be weighted above battery orders")

    @classmethod
    def from_weights(cls, model, battery=1.0, curtailment=100.0, energy_ref=0.01,
                     curtailment_level=0.0, energy_target=None, slack=1e6, slack_linear=1e7,
                     regularization=1e-9):
        n = model.n_states
        q1 = np.zeros(n)
        q1[model.energy] = energy_ref
        q1[model.curtailment] = curtailment_level
        x_ref = np.zeros(n)
        if energy_target is not None:
            x_ref[model.energy] = check_vector(energy_target, model.n_batteries, "energy_target")
        q2 = np.concatenate([np.full(model.n_curtailable, float(curtailment)),
                             np.full(model.n_batteries, float(battery))])
        return cls(q1, q2, x_ref, slack, slack_linear, regularization, model.n_curtailable)


@dataclass(eq=False)
class MpcProblem:
    qp: qp.QpInstance
    constant: float
    horizon: int
    model: object
    cost: CostConfig
    constraints: object
    x0: np.ndarray
    w: np.ndarray
    pending_curt: np.ndarray
    pending_batt: np.ndarray
    offset: np.ndarray   # (N+1, n) state trajectory with z = 0
    gain: np.ndarray     # (N+1, n, nz) sensitivity of the trajectory to z
    row_keys: np.ndarray  # (m, 3): block code, stage, index within block

    @property
    def n_curt_vars(self):
        return self.horizon * self.model.n_curtailable

    @property
    def n_batt_vars(self):
        return self.horizon * self.model.n_batteries

    @property
    def curt(self):
        return slice(0, self.n_curt_vars)

    @property
    def batt(self):
        return slice(self.n_curt_vars, self.n_curt_vars + self.n_batt_vars)

    @property
    def slack(self):
        return slice(self.n_curt_vars + self.n_batt_vars, self.qp.n)

    def split(self, z):
        m, N = self.model, self.horizon
        return (z[self.curt].reshape(N, m.n_curtailable),
                z[self.batt].reshape(N, m.n_batteries),
                z[self.slack].reshape(N, m.n_lines))

    def pack(self, u_curt, u_batt, eps):
        return np.concatenate([np.ravel(u_curt), np.ravel(u_batt), np.ravel(eps)])

    def objective(self, z):
        return float(self.qp.objective(z) + self.constant)

    def trajectory(self, z):
        return self.offset + self.gain @ z


@dataclass
class MpcSolution:
    first_move: tuple
    plan_curt: np.ndarray
    plan_batt: np.ndarray
    slacks: np.ndarray
    objective: float
    trajectory: np.ndarray
    result: qp.QpResult

    @property
    def iterations(self):
        return self.result.iterations

    @property
    def status(self):
        return self.result.status


def _pending(arr, d, width, name):
    arr = np.asarray(arr, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, width)
    return check_matrix(arr, shape=(d, width), name=name)


def predict(model, x_k, w_k, pending_curt, pending_batt, u_curt, u_batt):
    """Predicted states ``x_{k+1} .. x_{k+N}`` as an (N, n) array.

    The disturbance is held at ``w_k`` over the horizon. Effective inputs come
    from the pending orders for the first ``d`` steps, then from the plan.
    """
    d_c, d_b = model.delays.d_curt, model.delays.d_batt
    u_curt = check_matrix(np.atleast_2d(u_curt).reshape(-1, model.n_curtailable),
                          name="u_curt")
    u_batt = check_matrix(np.atleast_2d(u_batt).reshape(-1, model.n_batteries),
                          name="u_batt")
    N = u_curt.shape[0]
    if u_batt.shape[0] != N:
        raise ValueError("curtailment and battery plans must have the same length")
    p_c = _pending(pending_curt, d_c, model.n_curtailable, "pending_curt")
    p_b = _pending(pending_batt, d_b, model.n_batteries, "pending_batt")
    state = x_k if isinstance(x_k, SystemState) else model.unpack(x_k)
    out = np.empty((N, model.n_states))
    for t in range(N):
        uc = p_c[t] if t < d_c else u_curt[t - d_c]
        ub = p_b[t] if t < d_b else u_batt[t - d_b]
        state = step(model, state, uc, ub, w_k)
        out[t] = state.to_vector()
    return out


def condense(model, cost, constraints, x_k, w_k, pending_curt, pending_batt):
    """Eliminate the states and return the QP over ``z``."""
    N = constraints.horizon
    d_c, d_b = model.delays.d_curt, model.delays.d_batt
    if N < max(d_c, d_b, 1):
        raise ValueError(f"horizon {N} shorter than the largest delay ({max(d_c, d_b)})")
    n, n_c, n_b, n_l = model.n_states, model.n_curtailable, model.n_batteries, model.n_lines
    x0 = x_k.to_vector() if isinstance(x_k, SystemState) else check_vector(x_k, n, "x_k")
    w = check_vector(w_k, model.n_nodes, "w_k")
    p_c = _pending(pending_curt, d_c, n_c, "pending_curt")
    p_b = _pending(pending_batt, d_b, n_b, "pending_batt")

    n_zc, n_zb, n_ze = N * n_c, N * n_b, N * n_l
    nz = n_zc + n_zb + n_ze
    eps0 = n_zc + n_zb

    def effective(t):
        """Constant part and z-selection of the effective inputs at stage t."""
        sc = np.zeros((n_c, nz))
        sb = np.zeros((n_b, nz))
        if t < d_c:
            cc = p_c[t]
        else:
            cc = np.zeros(n_c)
            j = (t - d_c) * n_c
            sc[:, j:j + n_c] = np.eye(n_c)
        if t < d_b:
            cb = p_b[t]
        else:
            cb = np.zeros(n_b)
            j = n_zc + (t - d_b) * n_b
            sb[:, j:j + n_b] = np.eye(n_b)
        return cc, sc, cb, sb

    offset = np.empty((N + 1, n))
    gain = np.empty((N + 1, n, nz))
    offset[0] = x0
    gain[0] = 0.0
    eff = []
    drift = model.B_w @ w
    for t in range(N):
        cc, sc, cb, sb = effective(t)
        eff.append((cc, sc, cb, sb))
        offset[t + 1] = model.A @ offset[t] + model.B_curt @ cc + model.B_batt @ cb + drift
        gain[t + 1] = model.A @ gain[t] + model.B_curt @ sc + model.B_batt @ sb

    # objective
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    constant = 0.0
    weighted = np.flatnonzero(cost.q1)
    q = cost.q1[weighted]
    for t in range(1, N + 1):
        dx = offset[t, weighted] - cost.x_ref[weighted]
        Gt = gain[t, weighted]
        H += 2.0 * Gt.T @ (q[:, None] * Gt)
        g += 2.0 * Gt.T @ (q * dx)
        constant += float(dx @ (q * dx))
    q2c, q2b = cost.q2[:n_c], cost.q2[n_c:]
    diag = np.concatenate([np.tile(q2c, N), np.tile(q2b, N), np.full(n_ze, cost.slack_weight)])
    H[np.diag_indices(nz)] += 2.0 * diag + cost.regularization
    g[eps0:] += cost.slack_linear_weight

    # constraints
    rows, rhs, keys = [], [], []
    flow, dev = constraints.flow_rows, constraints.device_rows
    Hf = constraints.H_x[flow]
    Hd, Hdc, Hdb = (constraints.H_x[dev], constraints.H_u_curt[dev], constraints.H_u_batt[dev])
    n_f = Hf.shape[0]
    line_of_row = np.tile(np.arange(n_l), 2)
    for t in range(1, N + 1):
        G = Hf @ gain[t]
        G[np.arange(n_f), eps0 + (t - 1) * n_l + line_of_row] -= 1.0
        rows.append(G)
        rhs.append(constraints.h0_of_t(t)[flow] - Hf @ offset[t])
        keys.append(np.column_stack([np.full(n_f, _FLOW), np.full(n_f, t), np.arange(n_f)]))
    for t in range(N):
        cc, sc, cb, sb = eff[t]
        G = Hd @ gain[t] + Hdc @ sc + Hdb @ sb
        h = constraints.h0_of_t(t)[dev] - Hd @ offset[t] - Hdc @ cc - Hdb @ cb
        live = np.any(G != 0.0, axis=1)
        if np.any(h[~live] < -1e-9):
            logger.warning("device rows fixed by in-flight orders are violated at stage %d", t)
        rows.append(G[live])
        rhs.append(h[live])
        idx = np.flatnonzero(live)
        keys.append(np.column_stack([np.full(idx.size, _DEVICE), np.full(idx.size, t + 1), idx]))
    floor = np.zeros((n_ze, nz))
    floor[np.arange(n_ze), eps0 + np.arange(n_ze)] = -1.0
    rows.append(floor)
    rhs.append(np.zeros(n_ze))
    keys.append(np.column_stack([np.full(n_ze, _SLACK_FLOOR), np.arange(n_ze) // n_l + 1,
                                 np.arange(n_ze) % n_l]))
    bounds = constraints.bounds
    for code, start, width, limit in ((_CURT_RANGE, 0, n_c, bounds.p_curt_max),
                                      (_BATT_RANGE, n_zc, n_b, bounds.p_max - bounds.p_min)):
        count = N * width
        if not count:
            continue
        sel = np.zeros((count, nz))
        sel[np.arange(count), start + np.arange(count)] = 1.0
        lim = np.tile(limit, N)
        rows.extend([sel, -sel])
        rhs.extend([lim, lim])
        stage = np.arange(count) // width
        for sign in (0, 1):
            keys.append(np.column_stack([np.full(count, code), stage,
                                         sign * width + np.arange(count) % width]))

    G = np.vstack(rows)
    h = np.concatenate(rhs)
    instance = qp.QpInstance(H, g, G, h)
    return MpcProblem(instance, constant, N, model, cost, constraints, x0, w, p_c, p_b,
                      offset, gain, np.vstack(keys).astype(int))


def shift_guess(previous, problem):
    """Map a previous solution onto ``problem`` one step later, for warm starts."""
    prev_problem, prev_result = previous
    N = problem.horizon
    uc, ub, eps = prev_problem.split(prev_result.z)
    z = problem.pack(np.vstack([uc[1:], np.zeros_like(uc[:1])]),
                     np.vstack([ub[1:], np.zeros_like(ub[:1])]),
                     np.vstack([eps[1:], eps[-1:]]))
    lookup = {tuple(key): lam for key, lam in zip(prev_problem.row_keys, prev_result.lam)}
    lam = np.zeros(problem.qp.m)
    for i, (code, stage, index) in enumerate(problem.row_keys):
        last = N - 1 if code in (_CURT_RANGE, _BATT_RANGE) else N
        lam[i] = lookup.get((code, min(stage + 1, last), index), 0.0)
    return z, lam


def solve_mpc(problem, guess=None, tol=qp.DEFAULT_TOL, max_iter=qp.DEFAULT_MAX_ITER,
              dump_dir=None):
    """Solve a condensed problem; ``guess`` is an optional ``(z, lam)`` warm start.

    Raises
    ------
    MpcSolveError
        If the QP is not solved to optimality. With ``dump_dir`` set the
        instance is written there first.
    """
    if guess is None:
        result = qp.solve(problem.qp, tol=tol, max_iter=max_iter)
    else:
        result = qp.warm_start(problem.qp, guess[0], guess[1], tol=tol, max_iter=max_iter)
    if not result.ok:
        path = None
        if dump_dir is not None:
            path = qp.dump_instance(problem.qp, Path(dump_dir) / f"step_{problem.constraints.k:05d}")
        raise MpcSolveError(result, problem, path)
    uc, ub, eps = problem.split(result.z)
    eps = np.maximum(eps, 0.0)
    return MpcSolution(first_move=(uc[0].copy(), ub[0].copy()), plan_curt=uc, plan_batt=ub,
                       slacks=eps, objective=problem.objective(result.z),
                       trajectory=problem.trajectory(result.z), result=result)


class MPCController(BaseEstimator):
    """Receding-horizon congestion controller driving batteries and curtailment.

    Parameters
    ----------
    horizon : int
        Prediction length ``N`` in steps; must cover the largest input delay.
    battery_weight, curtailment_weight : float
        Quadratic weights on battery and curtailment orders. Curtailment must
        be weighted above battery use.
    energy_ref_weight : float
        Weight pulling the battery energy toward its reference.
    curtailment_level_weight : float
        Weight on the curtailed power itself (reference zero).
    slack_weight, slack_linear_weight : float
        Quadratic and linear penalties on line-limit slack.
    regularization : float
        Added to the Hessian diagonal.
    tol, max_iter : float, int
        QP solver settings.
    warm_start : bool
        Seed each solve with the previous solution shifted by one step.
    dump_dir : str or None
        Where failing QP instances are written.
    """

    def __init__(self, horizon=DEFAULT_HORIZON, battery_weight=1.0, curtailment_weight=100.0,
                 energy_ref_weight=0.01, curtailment_level_weight=0.0, slack_weight=1e6,
                 slack_linear_weight=1e7, regularization=1e-9, tol=qp.DEFAULT_TOL,
                 max_iter=qp.DEFAULT_MAX_ITER, warm_start=True, dump_dir=None):
        self.horizon = horizon
        self.battery_weight = battery_weight
        self.curtailment_weight = curtailment_weight
        self.energy_ref_weight = energy_ref_weight
        self.curtailment_level_weight = curtailment_level_weight
        self.slack_weight = slack_weight
        self.slack_linear_weight = slack_linear_weight
        self.regularization = regularization
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start
        self.dump_dir = dump_dir

    def fit(self, zone, delays, bounds, energy_target=None):
        """Build the state-space model and cost for ``zone``.

        ``energy_target`` is the battery energy reference (MWh); it defaults to
        the midpoint of each battery's energy range.
        """
        if energy_target is None:
            energy_target = 0.5 * (bounds.e_min + bounds.e_max)
        self.zone_ = zone
        self.bounds_ = bounds
        self.model_ = build_model(zone, delays)
        if self.horizon < max(delays.d_curt, delays.d_batt, 1):
            raise ValueError(f"horizon {self.horizon} is shorter than the curtailment delay "
                             f"({delays.d_curt} steps)")
        self.cost_ = CostConfig.from_weights(
            self.model_, battery=self.battery_weight, curtailment=self.curtailment_weight,
            energy_ref=self.energy_ref_weight, curtailment_level=self.curtailment_level_weight,
            energy_target=energy_target, slack=self.slack_weight,
            slack_linear=self.slack_linear_weight, regularization=self.regularization)
        self.previous_ = None
        return self

    def build_constraints(self, profiles, k):
        check_is_fitted(self, "model_")
        return build_constraints(self.zone_, profiles, self.bounds_, k, self.horizon,
                                 self.model_.delays.dt)

    def condense(self, state, w, pending_curt, pending_batt, constraints):
        check_is_fitted(self, "model_")
        return condense(self.model_, self.cost_, constraints, state, w, pending_curt,
                        pending_batt)

    def solve(self, state, w, pending_curt, pending_batt, constraints):
        """Full :class:`MpcSolution` for the current parameters."""
        problem = self.condense(state, w, pending_curt, pending_batt, constraints)
        guess = None
        if self.warm_start and self.previous_ is not None:
            guess = shift_guess(self.previous_, problem)
        try:
            solution = solve_mpc(problem, guess, tol=self.tol, max_iter=self.max_iter,
                                 dump_dir=self.dump_dir)
        except MpcSolveError:
            self.previous_ = None
            raise
        self.previous_ = (problem, solution.result)
        return solution

    def predict(self, state, w, pending_curt, pending_batt, constraints):
        """First move ``(u_curt, u_batt)`` of the optimal plan."""
        return self.solve(state, w, pending_curt, pending_batt, constraints).first_move

    def reset(self):
        self.previous_ = None
        return self
