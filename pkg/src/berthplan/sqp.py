"""Dense SQP for equality-constrained NLPs with box bounds.

Each iteration builds a quadratic model from a damped-BFGS Hessian
approximation and a forward-difference constraint Jacobian, then solves a box
QP whose linearized equalities are imposed in the least-squares sense (a
small dual regularization keeps the KKT system solvable when rows are
dependent or inconsistent).  Steps are globalized by backtracking on an l1
exact-penalty merit function, and every iterate satisfies the bounds.

Two hooks make the docking problem tractable without special-casing it here:

* ``problem.var_scale`` (optional): per-variable scaling so the solver works
  in O(1) variables (the final time is O(100) s).
* ``problem.restoration`` + ``problem.sl_collision`` (optional): the
  winding-number collision residuals plateau at ``-2*pi`` with zero gradient
  outside the free region, so whenever an iterate leaves it the solver calls
  the problem's restoration to pull the geometry back before resuming.
  Finite differencing across that plateau produces huge fence artifacts in
  the Jacobian, which are dropped for the same reason.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

_FENCE_THRESHOLD = 1e3      # collision rows are flat: anything bigger is an artifact
_BOUND_TOL = 1e-11


class SqpError(RuntimeError):
    """Unrecoverable solver failure (bad inputs or non-finite evaluation)."""


class QpError(RuntimeError):
    """QP subproblem did not finish (active-set iteration limit, singular KKT)."""


@dataclass(frozen=True)
class SqpSettings:
    max_iterations: int = 500
    constraint_tolerance: float = 1e-6
    kkt_tolerance: float = 1e-6
    fd_step: float = 1e-7               # relative forward-difference step
    merit_penalty_init: float = 1.0
    merit_penalty_margin: float = 1.0   # keep penalty above |multipliers| by this
    merit_penalty_growth: float = 2.0
    backtrack_factor: float = 0.5
    armijo_c1: float = 1e-4
    max_line_search: int = 40
    max_qp_iterations: int = 300
    qp_tikhonov: float = 1e-10
    bfgs_damping: float = 0.2
    #: while the violation exceeds this, take pure Gauss-Newton feasibility
    #: steps before starting the quasi-Newton iteration proper
    feasibility_first_tolerance: float = 0.05
    keep_trace: bool = False

    def __post_init__(self):
        for name in ("constraint_tolerance", "kkt_tolerance", "fd_step",
                     "merit_penalty_init", "merit_penalty_margin"):
            if getattr(self, name) <= 0.0:
                raise SqpError(f"{name} must be > 0")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise SqpError("backtrack_factor must be in (0, 1)")


@dataclass
class SqpResult:
    x: np.ndarray
    converged: bool
    feasible: bool
    max_violation: float
    iterations: int
    objective: float
    wall_time: float
    multipliers: np.ndarray = field(repr=False, default=None)
    message: str = ""
    trace: dict = field(repr=False, default_factory=dict)


@dataclass
class QpSolution:
    step: np.ndarray
    multipliers: np.ndarray
    working_set: dict
    reduced_gradient: np.ndarray


class SimpleNlp:
    """Adapter turning plain callables into the problem interface."""

    def __init__(self, objective, residuals, lower, upper, gradient=None):
        self.lower_bounds = np.asarray(lower, dtype=float)
        self.upper_bounds = np.asarray(upper, dtype=float)
        self.n_variables = self.lower_bounds.size
        self._objective = objective
        self._residuals = residuals
        self._gradient = gradient

    def objective(self, x):
        return float(self._objective(x))

    def residuals(self, x):
        return np.atleast_1d(np.asarray(self._residuals(x), dtype=float))

    def objective_gradient(self, x):
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        h = 1e-7
        base = self.objective(x)
        grad = np.empty(self.n_variables)
        for j in range(self.n_variables):
            step = h * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += step
            grad[j] = (self.objective(xp) - base) / step
        return grad


def jacobian(problem, x: np.ndarray, fd_step: float = 1e-7) -> np.ndarray:
    """Forward-difference residual Jacobian with per-column scaled steps."""
    x = np.asarray(x, dtype=float)
    base = problem.residuals(x)
    jac = np.empty((base.size, x.size))
    for j in range(x.size):
        h = fd_step * max(1.0, abs(x[j]))
        probe = x.copy()
        probe[j] += h
        res = problem.residuals(probe)
        if not np.all(np.isfinite(res)):
            raise SqpError(f"non-finite residual while probing column {j}")
        jac[:, j] = (res - base) / h
    return jac


def qp_step(hessian, jac, gradient, residuals, lower, upper, *,
            tikhonov: float = 1e-10, max_iterations: int = 300,
            warm_working: dict | None = None) -> QpSolution:
    """Solve ``min 0.5 d'Hd + g'd`` with soft equalities ``Jd = -c`` and a box.

    The equalities enter through a dual regularization ``-tikhonov*I``, which
    resolves them in the least-squares sense when rows are dependent or
    inconsistent.  Box bounds are handled by primal active-set iteration
    starting from the interior point ``d = 0``.
    """
    hess = np.asarray(hessian, dtype=float)
    jac = np.asarray(jac, dtype=float).reshape(-1, hess.shape[0])
    g = np.asarray(gradient, dtype=float)
    c = np.asarray(residuals, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    n = g.size
    m = c.size

    d = np.zeros(n)
    working: dict = {}
    if warm_working:
        for i, side in warm_working.items():
            bound = lo[i] if side < 0 else hi[i]
            if np.isfinite(bound):
                working[i] = side
                d[i] = bound

    lam = np.zeros(m)
    for _ in range(max_iterations):
        free = np.array([i for i in range(n) if i not in working], dtype=int)
        p = d.copy()
        if free.size:
            p_free, lam = _solve_eqp(hess, jac, g, c, d, free, tikhonov)
            p[free] = p_free
        else:
            lam = _multipliers_only(jac, c, d, tikhonov)

        inside = np.all(p >= lo - _BOUND_TOL) and np.all(p <= hi + _BOUND_TOL)
        if inside:
            d = np.clip(p, lo, hi)
            sigma = g + hess @ d + jac.T @ lam
            worst_idx, worst_val = None, -1e-10 * (1.0 + float(np.max(np.abs(sigma), initial=0.0)))
            for i, side in working.items():
                signed = sigma[i] if side < 0 else -sigma[i]
                if signed < worst_val:
                    worst_idx, worst_val = i, signed
            if worst_idx is None:
                return QpSolution(d, lam, dict(working), sigma)
            del working[worst_idx]
            continue

        # blocked: walk toward p until the first bound becomes active
        delta = p - d
        alpha, block, side = 1.0, None, 0
        for i in free:
            if delta[i] > _BOUND_TOL and np.isfinite(hi[i]):
                a = (hi[i] - d[i]) / delta[i]
                if a < alpha:
                    alpha, block, side = a, i, +1
            elif delta[i] < -_BOUND_TOL and np.isfinite(lo[i]):
                a = (lo[i] - d[i]) / delta[i]
                if a < alpha:
                    alpha, block, side = a, i, -1
        d = np.clip(d + max(alpha, 0.0) * delta, lo, hi)
        if block is None:
            # numerical corner: declared outside yet no blocking bound
            d = np.clip(p, lo, hi)
            sigma = g + hess @ d + jac.T @ lam
            return QpSolution(d, lam, dict(working), sigma)
        working[block] = side
        d[block] = hi[block] if side > 0 else lo[block]

    raise QpError(f"active-set iteration limit exceeded ({max_iterations})")


def _solve_eqp(hess, jac, g, c, d, free, tikhonov):
    """KKT solve with the working-set variables frozen at their current values."""
    fixed = np.setdiff1d(np.arange(g.size), free)
    m = c.size
    nf = free.size
    rhs_top = -g[free] - hess[np.ix_(free, fixed)] @ d[fixed] if fixed.size else -g[free]
    kkt = np.empty((nf + m, nf + m))
    kkt[:nf, :nf] = hess[np.ix_(free, free)]
    if m:
        kkt[:nf, nf:] = jac[:, free].T
        kkt[nf:, :nf] = jac[:, free]
        kkt[nf:, nf:] = -tikhonov * np.eye(m)
        rhs_bottom = -c - (jac[:, fixed] @ d[fixed] if fixed.size else 0.0)
        rhs = np.concatenate([rhs_top, rhs_bottom])
    else:
        rhs = rhs_top
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise QpError(f"singular KKT system: {exc}") from exc
    return sol[:nf], sol[nf:]


def _multipliers_only(jac, c, d, tikhonov):
    m = c.size
    if m == 0:
        return np.zeros(0)
    gram = jac @ jac.T + tikhonov * np.eye(m)
    return np.linalg.solve(gram, -(c + jac @ d))


def solve(problem, guess, settings: SqpSettings = SqpSettings()) -> SqpResult:
    """Run SQP from ``guess``; returns the best-feasibility iterate on failure."""
    t_start = time.perf_counter()
    state = _ScaledProblem(problem, settings)
    z = state.clip(np.asarray(guess, dtype=float) / state.scale)
    if z.size != state.n:
        raise SqpError(f"guess has {z.size} entries, problem expects {state.n}")

    z = state.restore_if_outside(z)
    best = _Best(z, math.inf, math.inf)
    trace = {"merit": [], "hessian_min_eig": [], "penalty": []} if settings.keep_trace else {}
    converged = False
    message = "iteration limit reached"
    iterations = 0

    # feasibility-first: a deeply infeasible guess (any cold start) makes the
    # product objective and with it the merit penalty explode, so drive the
    # violation down with the objective switched off before iterating on it
    lm_damping = 1e-3
    c = problem.residuals(z * state.scale)
    z, c, lm_damping, used, reached = _lm_descend(
        state, z, c, settings, settings.feasibility_first_tolerance,
        settings.max_iterations, lm_damping, best)
    iterations += used
    stalled = not reached
    if stalled:
        message = "feasibility phase stalled"

    state.set_objective_scale(z)
    f, g, c = state.evaluate(z)
    jac_z = state.jacobian(z)
    hess = np.eye(state.n)
    rho = settings.merit_penalty_init
    working: dict = {}
    lam_full = np.zeros(c.size)
    best.consider(z, float(np.max(np.abs(c), initial=0.0)), f)
    qp_failures = 0

    prox = 0.0  # proximal weight added to H: an adaptive trust region
    resumptions = 0
    while not stalled and iterations < settings.max_iterations:
        iterations += 1
        rows = _active_rows(jac_z, c)
        try:
            model_hess = hess if prox == 0.0 else hess + prox * np.eye(state.n)
            qp = qp_step(model_hess, jac_z[rows], g, c[rows],
                         state.lo - z, state.hi - z,
                         tikhonov=settings.qp_tikhonov,
                         max_iterations=settings.max_qp_iterations,
                         warm_working=working)
            d, lam, working = qp.step, qp.multipliers, qp.working_set
            lam_full = np.zeros(c.size)
            lam_full[rows] = lam
            qp_failures = 0
        except QpError:
            qp_failures += 1
            if qp_failures >= 3:
                message = "repeated QP subproblem failures"
                break
            d = -_merit_gradient(g, jac_z, c, rho)
            lam = np.zeros(int(np.sum(rows)))
            lam_full = np.zeros(c.size)
            working = {}

        violation = float(np.max(np.abs(c), initial=0.0))
        stationarity = _stationarity(g + jac_z.T @ lam_full, z, state.lo, state.hi)
        if violation <= settings.constraint_tolerance and stationarity <= settings.kkt_tolerance:
            converged = True
            message = "KKT conditions satisfied"
            best.consider(z, violation, f)
            break

        lam_inf = float(np.max(np.abs(lam_full), initial=0.0))
        if rho < lam_inf + settings.merit_penalty_margin:
            rho = max(lam_inf + settings.merit_penalty_margin,
                      settings.merit_penalty_growth * rho)

        c_norm1 = float(np.sum(np.abs(c)))
        descent = float(g @ d) - rho * c_norm1
        if descent >= 0.0:
            if float(g @ d) > 0.0 and c_norm1 <= settings.constraint_tolerance:
                hess = np.eye(state.n)  # quadratic model turned uphill: reset curvature
                d = -g
                descent = float(g @ d)
            else:
                rho = settings.merit_penalty_growth * (rho + abs(float(g @ d)) / max(c_norm1, 1e-12))
                descent = float(g @ d) - rho * c_norm1
            if descent >= 0.0:
                best.consider(z, violation, f)
                message = "no descent direction available"
                break

        merit_now = f + rho * c_norm1
        accepted = False
        merit_t = merit_now
        alpha = 1.0
        for attempt in range(settings.max_line_search):
            z_trial, c_t = state.restore_with_residuals(state.clip(z + alpha * d))
            f_t = state.scaled_objective(z_trial)
            merit_t = f_t + rho * float(np.sum(np.abs(c_t)))
            if merit_t <= merit_now + settings.armijo_c1 * alpha * descent:
                accepted = True
                break
            if attempt == 0:
                # second-order correction: retake the full step with the
                # constraint curvature measured at the rejected trial point
                soc = _correction_step(hess, jac_z, rows, c_t, state, z, d, settings)
                if soc is not None:
                    z_soc, c_s = state.restore_with_residuals(state.clip(z + d + soc))
                    merit_s = state.scaled_objective(z_soc) + rho * float(np.sum(np.abs(c_s)))
                    if merit_s <= merit_now + settings.armijo_c1 * descent:
                        z_trial, merit_t, accepted = z_soc, merit_s, True
                        break
            alpha *= settings.backtrack_factor
        if not accepted:
            # Newton direction unusable (stale curvature or constraint kinks):
            # try a pure feasibility step, damped Gauss-Newton on the residuals,
            # and tighten the proximal trust region for the next model step
            fallback = _feasibility_step(state, z, jac_z, c, settings, lm_damping)
            if fallback is not None:
                z_trial, _, lm_damping = fallback
                prox = max(10.0 * prox, 1e-3)
                working = {}
            elif resumptions < 3 and best.violation > settings.constraint_tolerance:
                # merit-driven iterates wandered off: rewind to the best point
                # seen and let the feasibility engine finish the job there
                resumptions += 1
                z = best.z.copy()
                c = problem.residuals(z * state.scale)
                budget = settings.max_iterations - iterations
                z, c, lm_damping, used, _ = _lm_descend(
                    state, z, c, settings, settings.constraint_tolerance,
                    budget, 1e-3, best)
                iterations += used
                f, g, c = state.evaluate(z)
                jac_z = state.jacobian(z)
                hess = np.eye(state.n)
                rho = settings.merit_penalty_init
                working = {}
                prox = 0.0
                best.consider(z, float(np.max(np.abs(c), initial=0.0)), f)
                continue
            else:
                best.consider(z, violation, f)
                message = "line search failed to find acceptable step"
                break
        elif alpha == 1.0:
            prox *= 0.3
            if prox < 1e-8:
                prox = 0.0

        if settings.keep_trace:
            trace["merit"].append((merit_now, merit_t, rho))
            trace["penalty"].append(rho)
            trace["hessian_min_eig"].append(float(np.linalg.eigvalsh(hess)[0]))

        step = z_trial - z
        grad_lagrangian_old = g + jac_z.T @ lam_full
        z = z_trial
        f, g, c = state.evaluate(z)
        jac_z = state.jacobian(z)
        y = (g + jac_z.T @ lam_full) - grad_lagrangian_old
        hess = _damped_bfgs(hess, step, y, settings.bfgs_damping)
        best.consider(z, float(np.max(np.abs(c), initial=0.0)), f)

    x = best.z * state.scale if not converged else z * state.scale
    residuals = problem.residuals(x)
    max_violation = float(np.max(np.abs(residuals), initial=0.0))
    feasible = (max_violation <= settings.constraint_tolerance
                and np.all(x >= problem.lower_bounds - 1e-9)
                and np.all(x <= problem.upper_bounds + 1e-9))
    return SqpResult(
        x=x,
        converged=converged,
        feasible=feasible,
        max_violation=max_violation,
        iterations=iterations,
        objective=float(problem.objective(x)),
        wall_time=time.perf_counter() - t_start,
        multipliers=lam_full,
        message=message,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# internals
# ---------------------------------------------------------------------------

class _ScaledProblem:
    """Variable- and objective-scaled view of the problem.

    The objective is normalized by its magnitude at the initial guess so that
    multipliers, and with them the merit penalty, stay O(1): the docking
    objective is a product of two squared-deviation sums and reaches 1e7 at a
    poor cold start, which would otherwise swamp the constraint terms.
    """

    def __init__(self, problem, settings: SqpSettings):
        self.problem = problem
        self.settings = settings
        self.n = problem.n_variables
        scale = np.asarray(getattr(problem, "var_scale", np.ones(self.n)), dtype=float)
        self.scale = scale
        self.lo = problem.lower_bounds / scale
        self.hi = problem.upper_bounds / scale
        self.collision = getattr(problem, "sl_collision", None)
        self.obj_scale = 1.0
        self.n_evaluations = 0

    def set_objective_scale(self, z):
        f0 = float(self.problem.objective(z * self.scale))
        if math.isfinite(f0):
            self.obj_scale = 1.0 / max(1.0, abs(f0))

    def clip(self, z):
        return np.clip(z, self.lo, self.hi)

    def evaluate(self, z):
        x = z * self.scale
        f = self.obj_scale * float(self.problem.objective(x))
        g = self.obj_scale * self.problem.objective_gradient(x) * self.scale
        c = self.problem.residuals(x)
        self.n_evaluations += 1
        if not (math.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(c))):
            raise SqpError("non-finite objective/residual evaluation")
        return f, g, c

    def scaled_objective(self, z):
        f = self.obj_scale * float(self.problem.objective(z * self.scale))
        if not math.isfinite(f):
            raise SqpError("non-finite objective evaluation")
        return f

    def jacobian(self, z):
        jac_x = jacobian(self.problem, z * self.scale, self.settings.fd_step)
        jac_z = jac_x * self.scale[None, :]
        if self.collision is not None:
            block = jac_z[self.collision]
            block[np.abs(block) > _FENCE_THRESHOLD] = 0.0
            jac_z[self.collision] = block
        return jac_z

    def restore_with_residuals(self, z):
        """Pull exterior poses back inside; returns the iterate and its residuals."""
        x = z * self.scale
        res = self.problem.residuals(x)
        self.n_evaluations += 1
        if (self.collision is None or not hasattr(self.problem, "restoration")
                or not np.any(np.abs(res[self.collision]) > 1e-9)):
            return z, res
        x = self.problem.restoration(x)
        z = self.clip(x / self.scale)
        res = self.problem.residuals(z * self.scale)
        self.n_evaluations += 1
        return z, res

    def restore_if_outside(self, z):
        return self.restore_with_residuals(z)[0]


class _Best:
    """Lexicographic (violation, objective) bookkeeping of the best iterate."""

    def __init__(self, z, violation, objective):
        self.z, self.violation, self.objective = z.copy(), violation, objective

    def consider(self, z, violation, objective):
        if (violation, objective) < (self.violation, self.objective):
            self.z, self.violation, self.objective = z.copy(), violation, objective


def _active_rows(jac, c):
    """Rows that can influence the QP: nonzero gradient somewhere.

    Collision rows of interior points are identically zero (flat winding sum)
    and exterior rows are flat at -2*pi; neither can steer the step, and both
    carry zero multipliers, so they are excluded from the KKT system.
    """
    return np.max(np.abs(jac), axis=1) > 1e-14


def _stationarity(reduced, z, lo, hi):
    at_lo = z <= lo + _BOUND_TOL
    at_hi = z >= hi - _BOUND_TOL
    viol = np.abs(reduced)
    viol[at_lo] = np.maximum(0.0, -reduced[at_lo])
    viol[at_hi] = np.maximum(0.0, reduced[at_hi])
    both = at_lo & at_hi
    viol[both] = 0.0
    return float(np.max(viol, initial=0.0))


def _merit_gradient(g, jac, c, rho):
    return g + rho * (jac.T @ np.sign(c))


def _correction_step(hess, jac_z, rows, c_trial, state, z, d, settings):
    """Minimum-curvature step cancelling the residuals left by a full step."""
    try:
        qp = qp_step(hess, jac_z[rows], np.zeros(state.n), c_trial[rows],
                     state.lo - z - d, state.hi - z - d,
                     tikhonov=settings.qp_tikhonov,
                     max_iterations=settings.max_qp_iterations)
    except QpError:
        return None
    return qp.step


def _lm_descend(state, z, c, settings, target, budget, lm_damping, best):
    """Repeated feasibility steps until ``max|c| <= target``, a stall, or budget."""
    used = 0
    while used < budget:
        violation = float(np.max(np.abs(c), initial=0.0))
        best.consider(z, violation, math.inf)
        if violation <= target:
            return z, c, lm_damping, used, True
        used += 1
        jac_z = state.jacobian(z)
        step = _feasibility_step(state, z, jac_z, c, settings, lm_damping)
        if step is None:
            return z, c, lm_damping, used, False
        z, c, lm_damping = step
    return z, c, lm_damping, used, float(np.max(np.abs(c), initial=0.0)) <= target


def _feasibility_step(state, z, jac_z, c, settings, damping=1e-3):
    """One Levenberg-Marquardt step on the constraint violation only.

    Full steps with adaptive damping: the damping is raised tenfold until the
    step reduces the l1 violation, and relaxed after well-predicted steps so
    the next call starts near the working trust level.  Returns ``(z_new,
    residuals, next_damping)`` or ``None`` when even heavy damping makes no
    progress.
    """
    rows = _active_rows(jac_z, c)
    c_norm = float(np.sum(np.abs(c)))
    identity = np.eye(state.n)
    mu = max(damping, 1e-10)
    for _ in range(14):
        try:
            qp = qp_step(identity, jac_z[rows], np.zeros(state.n), c[rows],
                         state.lo - z, state.hi - z,
                         tikhonov=mu,
                         max_iterations=settings.max_qp_iterations)
        except QpError:
            mu *= 10.0
            continue
        trial, c_t = state.restore_with_residuals(state.clip(z + qp.step))
        c_t_norm = float(np.sum(np.abs(c_t)))
        if c_t_norm < (1.0 - 1e-3) * c_norm:
            predicted = float(np.sum(np.abs(c[rows] + jac_z[rows] @ qp.step)))
            ratio = (c_norm - c_t_norm) / max(c_norm - predicted, 1e-300)
            next_mu = max(mu / 3.0, 1e-10) if ratio > 0.25 else mu
            return trial, c_t, next_mu
        mu *= 10.0
    return None


def _damped_bfgs(hess, s, y, damping):
    """Powell-damped BFGS update; keeps the approximation positive definite."""
    s_norm = float(s @ s)
    if s_norm < 1e-30:
        return hess
    hs = hess @ s
    shs = float(s @ hs)
    sy = float(s @ y)
    if shs <= 0.0:
        return np.eye(hess.shape[0])
    if sy < damping * shs:
        theta = (1.0 - damping) * shs / (shs - sy)
        y = theta * y + (1.0 - theta) * hs
        sy = float(s @ y)
    if sy <= 1e-30:
        return hess
    updated = hess - np.outer(hs, hs) / shs + np.outer(y, y) / sy
    return 0.5 * (updated + updated.T)
