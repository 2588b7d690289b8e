"""Dense convex quadratic programming.

Solves::

    minimize    1/2 z'Hz + g'z
    subject to  Gz <= h

Each instance is first equilibrated (Ruiz scaling of the KKT matrix followed
by a scalar cost scaling); tolerances apply to the scaled problem, with each
KKT residual taken relative to the size of its terms. The main method is a
dual active-set method (Goldfarb-Idnani type): it starts from the
unconstrained minimiser, or from a previous working set when warm started,
and adds violated rows one at a time while keeping the working rows linearly
independent. A Mehrotra predictor-corrector interior-point method is kept as
a fallback and as an alternative cold path; its detected active set seeds the
active-set method for the final, exact answer.
"""

import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg

from ._validation import check_matrix, check_vector

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200

_RUIZ_ITERATIONS = 25
_SCALE_BOUNDS = (1e-4, 1e4)
_EXACT_PRIMAL = 1e-10
_BACKTRACKS = 20
_DEPENDENT = 1e-9
_REFINEMENTS = 2


def _debug_enabled():
    return os.environ.get("GRIDMPC_DEBUG", "") not in ("", "0")


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class QpInstance:
    """A convex QP in inequality form. ``H`` is symmetrised on construction."""

    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = check_matrix(self.H, name="H")
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got shape {H.shape}")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("H must be symmetric")
        G = np.asarray(self.G, dtype=float)
        if G.size == 0:
            G = G.reshape(0, n)
        G = check_matrix(G, shape=(None, n), name="G")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", check_vector(self.g, n, "g"))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", check_vector(self.h, G.shape[0], "h"))

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.G.shape[0]

    def objective(self, z):
        return 0.5 * z @ self.H @ z + self.g @ z


@dataclass
class QpResult:
    z: np.ndarray
    lam: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float
    objective: float
    method: str = "interior-point"
    merit_history: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status is QpStatus.OPTIMAL

    @property
    def active_set(self):
        return np.flatnonzero(self.lam > 0.0)


def kkt_residuals(instance, z, lam):
    """Infinity-norm KKT residuals ``(primal, dual, complementarity)`` of a candidate pair.

    The dual residual covers both stationarity and the sign of the multipliers.
    """
    slack = instance.G @ z - instance.h
    primal = float(max(0.0, slack.max(initial=0.0)))
    stationarity = instance.H @ z + instance.g + instance.G.T @ lam
    dual = float(max(np.abs(stationarity).max(initial=0.0), -lam.min(initial=0.0)))
    comp = float(np.abs(lam * slack).max(initial=0.0))
    return primal, dual, comp


@dataclass
class _Scaling:
    instance: QpInstance
    d: np.ndarray
    e: np.ndarray
    c: float

    def z_out(self, z):
        return self.d * z

    def lam_out(self, lam):
        return self.e * lam / self.c

    def z_in(self, z):
        return z / self.d

    def lam_in(self, lam):
        return lam * self.c / self.e


def _equilibrate(inst):
    # Ruiz scaling on [[H, G'], [G, 0]]: variables by d, rows by e, cost by c.
    H, G = inst.H.copy(), inst.G.copy()
    n, m = inst.n, inst.m
    d, e = np.ones(n), np.ones(m)
    lo, hi = _SCALE_BOUNDS
    for _ in range(_RUIZ_ITERATIONS):
        col = np.abs(H).max(axis=0, initial=0.0)
        if m:
            col = np.maximum(col, np.abs(G).max(axis=0))
            row = np.abs(G).max(axis=1)
            de = 1.0 / np.sqrt(np.clip(row, lo, hi))
        else:
            de = np.ones(0)
        dd = 1.0 / np.sqrt(np.clip(col, lo, hi))
        H = dd[:, None] * H * dd[None, :]
        G = de[:, None] * G * dd[None, :]
        d *= dd
        e *= de
        if max(np.abs(1.0 - dd).max(initial=0.0), np.abs(1.0 - de).max(initial=0.0)) < 1e-2:
            break
    g = d * inst.g
    h = e * inst.h
    # cost scaled by the curvature alone: a large linear penalty on a few
    # variables must not shrink the rest of the objective below the tolerance
    col_mean = float(np.mean(np.abs(H).max(axis=0))) if n else 1.0
    c = 1.0 / np.clip(col_mean, lo, hi)
    scaled = QpInstance(c * H, c * g, G, h)
    return _Scaling(scaled, d, e, c)


def relative_residuals(instance, z, lam):
    """KKT residuals measured row by row and variable by variable.

    Primal violation of row ``i`` is divided by ``1 + |h_i|``; stationarity of
    variable ``j`` by ``1 +`` the largest of ``|Hz|_j``, ``|g_j|``,
    ``|G'lam|_j``; complementarity of row ``i`` by
    ``(1 + lam_i)(1 + |h_i|)``. Per-entry normalisation keeps a large exact
    penalty on a few variables from loosening the test on all the others.
    These are the values the convergence test uses, evaluated on the
    equilibrated problem.
    """
    slack = instance.G @ z - instance.h
    Hz = instance.H @ z
    Gl = instance.G.T @ lam
    h_abs = 1.0 + np.abs(instance.h)
    primal = float(max(0.0, (slack / h_abs).max(initial=0.0)))
    size = np.maximum(np.maximum(np.abs(Hz), np.abs(instance.g)), np.abs(Gl))
    stat = float((np.abs(Hz + instance.g + Gl) / (1.0 + size)).max(initial=0.0))
    lam_abs = 1.0 + np.abs(lam)
    dual = max(stat, float((-lam / lam_abs).max(initial=0.0)))
    comp = float((np.abs(lam * slack) / (lam_abs * h_abs)).max(initial=0.0))
    return primal, dual, comp


def _residual_tuple(inst, z, lam):
    return relative_residuals(inst, z, lam)


def _max_step(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factor(M):
    """Cholesky of ``M``, adding a growing diagonal shift if it is numerically indefinite."""
    scale = max(float(np.abs(np.diag(M)).max(initial=0.0)), 1e-300)
    shift = 0.0
    for _ in range(8):
        try:
            return scipy.linalg.cho_factor(M + shift * np.eye(M.shape[0]), check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            shift = scale * (1e-14 if shift == 0.0 else 100.0 * shift / scale)
    return None


def _interior_point(inst, tol, max_iter):
    """Mehrotra predictor-corrector on ``Gz + s = h``, ``s, lam >= 0``.

    The merit is the largest of the entrywise normalised primal and dual
    infeasibilities and the mean complementarity ``s'lam / m``. Newton
    directions with centering below one decrease every term for short
    enough steps, so each step is halved until the merit does not grow. If
    the corrected direction cannot be accepted the plain centred one is
    tried, and if that fails too the last iterate is returned.
    """
    H, g, G, h = inst.H, inst.g, inst.G, inst.h
    n, m = inst.n, inst.m
    history = []
    if m == 0:
        factor = _factor(H)
        if factor is None:
            return np.zeros(n), np.zeros(0), np.zeros(0), 0, QpStatus.NUMERICAL_FAILURE, history
        z = scipy.linalg.cho_solve(factor, -g)
        return z, np.zeros(0), np.zeros(0), 1, QpStatus.OPTIMAL, history

    h_abs = 1.0 + np.abs(h)
    g_abs = np.abs(g)
    floor = 1e-3 * tol

    def residuals(z, s, lam):
        Hz = H @ z
        Gl = G.T @ lam
        rd = Hz + g + Gl
        rp = G @ z + s - h
        size = 1.0 + np.maximum(np.maximum(np.abs(Hz), g_abs), np.abs(Gl))
        merit = max(float((np.abs(rp) / h_abs).max()), float((np.abs(rd) / size).max()),
                    float(s @ lam) / m, floor)
        return rd, rp, merit

    z = np.zeros(n)
    s = np.maximum(h - G @ z, 1.0)
    lam = np.ones(m)
    rd, rp, merit = residuals(z, s, lam)
    history.append(merit)
    debug = _debug_enabled()
    for it in range(max_iter):
        if max(_residual_tuple(inst, z, lam)) <= tol:
            return z, lam, s, it, QpStatus.OPTIMAL, history
        mu = float(s @ lam) / m
        with np.errstate(all="ignore"):
            M = H + G.T @ ((lam / s)[:, None] * G)
        if not np.all(np.isfinite(M)):
            return z, lam, s, it, QpStatus.NUMERICAL_FAILURE, history
        factor = _factor(M)
        if factor is None:
            return z, lam, s, it, QpStatus.NUMERICAL_FAILURE, history

        def direction(rc):
            dz = scipy.linalg.cho_solve(factor, -rd - G.T @ ((lam * rp - rc) / s),
                                        check_finite=False)
            ds = -rp - G @ dz
            dl = (-rc - lam * ds) / s
            # ds and dl are exact given dz; only stationarity carries round-off
            for _ in range(_REFINEMENTS):
                r = H @ dz + G.T @ dl + rd
                ez = scipy.linalg.cho_solve(factor, -r, check_finite=False)
                es = -(G @ ez)
                dz, ds, dl = dz + ez, ds + es, dl - lam * es / s
            return dz, ds, dl

        with np.errstate(all="ignore"):
            dz, ds, dl = direction(s * lam)
        if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(dl))):
            return z, lam, s, it, QpStatus.NUMERICAL_FAILURE, history
        alpha = min(_max_step(s, ds), _max_step(lam, dl))
        mu_aff = float((s + alpha * ds) @ (lam + alpha * dl)) / m
        sigma = min((mu_aff / mu) ** 3, 0.99)
        accepted = None
        for rc in (s * lam + ds * dl - sigma * mu, s * lam - max(sigma, 0.1) * mu):
            with np.errstate(all="ignore"):
                dz, ds, dl = direction(rc)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dl)))
            for _ in range(_BACKTRACKS):
                trial = (z + alpha * dz, s + alpha * ds, lam + alpha * dl)
                if all(np.all(np.isfinite(v)) for v in trial):
                    res = residuals(*trial)
                    if res[2] <= merit:
                        accepted = trial + res
                        break
                alpha *= 0.5
            if accepted is not None:
                break
        if accepted is None:
            return z, lam, s, it + 1, QpStatus.NUMERICAL_FAILURE, history
        z, s, lam, rd, rp, merit = accepted
        if debug:
            assert merit <= history[-1], "interior-point merit increased"
        history.append(merit)
    if max(_residual_tuple(inst, z, lam)) <= tol:
        return z, lam, s, max_iter, QpStatus.OPTIMAL, history
    return z, lam, s, max_iter, QpStatus.MAX_ITERATIONS, history


def _finish(instance, scaling, z_s, lam_s, status, iterations, method, history, tol):
    res = _residual_tuple(scaling.instance, z_s, lam_s)
    if max(res) <= tol:
        status = QpStatus.OPTIMAL
    elif status is QpStatus.OPTIMAL:
        status = QpStatus.NUMERICAL_FAILURE
    z = scaling.z_out(z_s)
    lam = scaling.lam_out(lam_s)
    return QpResult(z=z, lam=lam, status=status, iterations=int(iterations),
                    primal_residual=res[0], dual_residual=res[1], complementarity=res[2],
                    objective=float(instance.objective(z)), method=method,
                    merit_history=history)


def _dual_active_set(inst, seed, max_iter):
    """Dual active-set method from an ordered list of candidate active rows.

    Starts from the minimiser on the largest linearly independent prefix of
    ``seed`` whose multipliers are nonnegative, then repeatedly adds the most
    violated row, taking partial steps that drop rows whose multipliers reach
    zero. Working rows stay linearly independent and the objective (equal to
    the dual function at every iterate) never decreases. Everything is
    expressed through ``C = G H^-1 G'`` so each step is a small Cholesky
    solve.

    A working set holds at most ``n`` rows, so ``n`` additions are allowed on
    top of ``max_iter`` (which would otherwise stop large cold solves early).

    Returns ``(z, lam, iterations, objectives)``, or ``None`` if ``H`` cannot
    be factored, the constraints are inconsistent or the addition budget runs
    out before feasibility.
    """
    try:
        return _dual_active_set_impl(inst, seed, max_iter)
    except np.linalg.LinAlgError:
        return None


def _dual_active_set_impl(inst, seed, max_iter):
    H, g, G, h = inst.H, inst.g, inst.G, inst.h
    factor = _factor(H)
    if factor is None:
        return None
    W = scipy.linalg.cho_solve(factor, G.T)
    C = G @ W
    C = 0.5 * (C + C.T)
    z0 = -scipy.linalg.cho_solve(factor, g)
    diag = np.maximum(np.diag(C), 1e-300)
    h_abs = 1.0 + np.abs(h)

    active = []
    seed = [int(i) for i in seed]
    if seed:
        scale = 1.0 / np.sqrt(diag[seed])
        _, piv, rank, _ = scipy.linalg.lapack.dpstrf(
            scale[:, None] * C[np.ix_(seed, seed)] * scale[None, :], lower=0, tol=1e-10)
        active = sorted(seed[i] for i in piv[:rank] - 1)

    def solve_active(active, rhs):
        f = _factor(C[np.ix_(active, active)])
        if f is None:
            raise np.linalg.LinAlgError("working-set matrix is singular")
        return scipy.linalg.cho_solve(f, rhs, check_finite=False)

    def exact(active):
        if not active:
            return np.zeros(0)
        return solve_active(active, G[active] @ z0 - h[active])

    u = exact(active)
    while active and u.min() < 0.0:
        active.pop(int(np.argmin(u)))
        u = exact(active)
    z = z0 - W[:, active] @ u
    objectives = [inst.objective(z)]
    debug = _debug_enabled()

    its = 1
    while True:
        viol = (G @ z - h) / h_abs
        viol[active] = -np.inf
        p = int(np.argmax(viol)) if inst.m else 0
        if not inst.m or viol[p] <= _EXACT_PRIMAL:
            break
        if its > max_iter + inst.n:
            return None
        its += 1
        u_p = 0.0
        while True:
            if active:
                r = solve_active(active, C[active, p])
                schur = C[p, p] - C[p, active] @ r
            else:
                r, schur = np.zeros(0), C[p, p]
            gap = G[p] @ z - h[p]
            t_add = gap / schur if schur > _DEPENDENT * diag[p] else np.inf
            ratios = np.full(len(active), np.inf)
            shrinking = r > 0.0
            ratios[shrinking] = u[shrinking] / r[shrinking]
            j = int(np.argmin(ratios)) if active else -1
            t_drop = ratios[j] if active else np.inf
            t = min(t_add, t_drop)
            if not np.isfinite(t):
                return None
            u = u - t * r
            u_p += t
            if t_add <= t_drop:
                active.append(p)
                u = np.append(u, u_p)
                break
            active.pop(j)
            u = np.delete(u, j)
            z = z0 - W[:, active] @ u - W[:, p] * u_p
        z = z0 - W[:, active] @ u
        objectives.append(inst.objective(z))
        if debug:
            assert objectives[-1] >= objectives[-2] - 1e-9 * max(1.0, abs(objectives[-2])), \
                "dual active-set objective decreased"

    lam = np.zeros(inst.m)
    lam[active] = np.maximum(u, 0.0)
    # an exact solve on the final working set removes accumulated drift;
    # keep whichever point has the smaller residuals
    if active:
        u_exact = exact(active)
        lam_exact = np.zeros(inst.m)
        lam_exact[active] = np.maximum(u_exact, 0.0)
        z_exact = z0 - W[:, active] @ u_exact
        if max(relative_residuals(inst, z_exact, lam_exact)) < max(relative_residuals(inst, z, lam)):
            z, lam = z_exact, lam_exact
    return z, lam, its, objectives


def solve(instance, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, method="active-set"):
    """Cold-start solve.

    Parameters
    ----------
    instance : QpInstance
    tol : float
        Bound on the primal, dual and complementarity residuals of
        :func:`relative_residuals`, measured on the equilibrated problem.
    max_iter : int
        Iteration cap of the chosen method.
    method : {"active-set", "interior-point"}
        ``"active-set"`` runs the dual active-set method from an empty working
        set and falls back to the interior-point path if that fails.
        ``"interior-point"`` runs the interior-point method and finishes on
        its detected active set with the dual active-set method.

    Returns
    -------
    QpResult
        ``status`` is ``OPTIMAL`` only if the scaled residuals meet ``tol``;
        otherwise the best iterate is returned with its residuals.
        ``merit_history`` holds the interior-point merit or, for the active-set
        method, the negated objective; both are nonincreasing.
    """
    if method not in ("active-set", "interior-point"):
        raise ValueError(f"unknown method {method!r}")
    scaling = _equilibrate(instance)
    inst = scaling.instance
    if method == "active-set":
        found = _dual_active_set(inst, [], max_iter)
        if found is not None:
            z, lam, its, objectives = found
            return _finish(instance, scaling, z, lam, QpStatus.OPTIMAL, its, "active-set",
                           [-v for v in objectives], tol)
        logger.debug("active-set solve failed; interior-point fallback")
    return _solve_interior(instance, scaling, tol, max_iter)


def _solve_interior(instance, scaling, tol, max_iter):
    inst = scaling.instance
    z, lam, s, its, status, history = _interior_point(inst, tol, max_iter)
    method = "interior-point"
    if inst.m:
        order = np.argsort(-lam, kind="stable")
        seed = [i for i in order if lam[i] > s[i]]
        found = _dual_active_set(inst, seed, max_iter)
        if found is not None:
            z, lam, extra, _ = found
            its += extra
            method = "interior-point+active-set"
    return _finish(instance, scaling, z, lam, status, its, method, history, tol)


def warm_start(instance, z_prev=None, lam_prev=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve starting from a previous primal-dual pair.

    The guess only seeds the working set (rows with positive multipliers,
    largest first, or else rows the previous point makes tight), so the
    optimum is the same as :func:`solve`; only the iteration count changes.
    """
    scaling = _equilibrate(instance)
    inst = scaling.instance
    seed = []
    if lam_prev is not None and np.size(lam_prev) == inst.m:
        lam0 = scaling.lam_in(np.asarray(lam_prev, dtype=float))
        seed = [i for i in np.argsort(-lam0, kind="stable") if lam0[i] > 0.0]
    elif z_prev is not None and np.size(z_prev) == inst.n:
        z0 = scaling.z_in(np.asarray(z_prev, dtype=float))
        seed = list(np.flatnonzero(inst.G @ z0 - inst.h >= -tol))
    found = _dual_active_set(inst, seed, max_iter)
    if found is not None:
        z, lam, its, objectives = found
        return _finish(instance, scaling, z, lam, QpStatus.OPTIMAL, its, "active-set",
                       [-v for v in objectives], tol)
    logger.debug("warm start failed; interior-point fallback")
    return _solve_interior(instance, scaling, tol, max_iter)


def dump_instance(instance, directory):
    """Write ``instance`` as Matrix Market files (H.mtx, g.mtx, G.mtx, h.mtx)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    parts = {"H": instance.H, "g": instance.g[:, None], "G": instance.G, "h": instance.h[:, None]}
    for name, arr in parts.items():
        scipy.io.mmwrite(directory / f"{name}.mtx", arr, precision=17)
    return directory


def load_instance(directory):
    directory = Path(directory)
    H = np.asarray(scipy.io.mmread(directory / "H.mtx"))
    g = np.asarray(scipy.io.mmread(directory / "g.mtx")).ravel()
    G = np.asarray(scipy.io.mmread(directory / "G.mtx")).reshape(-1, H.shape[0])
    h = np.asarray(scipy.io.mmread(directory / "h.mtx")).ravel()
    return QpInstance(H, g, G, h)
