"""Time integration of ODE problems with general linear methods.

The stepper executes any tableau from the catalog or a user file: history
bootstrap (exact solution when available, otherwise finely substepped RK4),
sequential or coupled Newton solves for the implicit stages, non-autonomous
stage times taken from the abscissas, embedded alternate updates sharing the
same solves, and the retained-stage execution path for the window method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import CatalogEntry
from .tableau import BlockGlm, GlmTableau, abscissas, to_compact


class StepFailure(RuntimeError):
    def __init__(self, t, residual, iterations):
        super().__init__(
            f"nonlinear solve failed at t = {t:.6g}: residual {residual:.3e} "
            f"after {iterations} iterations")
        self.t = t
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveConfig:
    dt: float
    newton_tol: float = 1e-12
    newton_max_iters: int = 50
    fixed_point_fallback: bool = False
    startup: str = "auto"              # auto | exact | bootstrap_rk4
    bootstrap_substeps: int = 100

    def __post_init__(self):
        if self.dt <= 0 or self.newton_tol <= 0:
            raise ValueError("dt and newton_tol must be positive")


@dataclass
class StepperState:
    history: list                      # k most recent steps, oldest first
    t_current: float
    n: int = 0
    retained: dict = None              # prior-step stage values, window methods


@dataclass
class SolutionRecord:
    method_name: str
    problem_name: str
    dt: float
    times: np.ndarray = None
    states: list = field(default_factory=list)
    prehistory: list = field(default_factory=list)   # (t, u) before t0
    alternates: dict = field(default_factory=dict)   # label -> list per step
    newton_iterations: int = 0
    newton_max: int = 0
    completed: bool = False
    failure: str = None

    def state_array(self):
        return np.vstack([np.atleast_1d(s) for s in self.states])


# ---------------------------------------------------------------------------
# nonlinear solves

def _fd_jacobian(f, t, u):
    u = np.atleast_1d(u)
    n = u.size
    J = np.empty((n, n))
    h = 1e-7 * (1.0 + np.abs(u).max())
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (np.atleast_1d(f(t, u + e)) - np.atleast_1d(f(t, u - e))) / (2.0 * h)
    return J


def _solve_implicit(f, jac, t, rhs, coeff, config, stats):
    """Solve y = rhs + coeff * f(t, y) by Newton, damped fixed point as fallback."""
    y = np.array(rhs, dtype=float)
    n = y.size
    residual = math.inf
    for it in range(config.newton_max_iters):
        g = y - rhs - coeff * np.atleast_1d(f(t, y))
        residual = np.abs(g).max()
        stats["iterations"] += 1
        stats["max"] = max(stats["max"], it + 1)
        if residual <= config.newton_tol:
            return y
        J = jac(t, y) if jac is not None else _fd_jacobian(f, t, y)
        try:
            dy = np.linalg.solve(np.eye(n) - coeff * J, g)
        except np.linalg.LinAlgError:
            break
        y = y - dy
    if config.fixed_point_fallback:
        for it in range(200):
            y_new = 0.5 * y + 0.5 * (rhs + coeff * np.atleast_1d(f(t, y)))
            residual = np.abs(y_new - y).max()
            y = y_new
            stats["iterations"] += 1
            if residual <= config.newton_tol:
                return y
    raise StepFailure(t, float(residual), config.newton_max_iters)


def _solve_coupled(f, jac, times, rhs_rows, A, config, stats):
    """Solve the fully coupled stage system Y_i = R_i + dt sum_j A_ij f(t_j, Y_j)."""
    s = len(rhs_rows)
    n = rhs_rows[0].size
    Y = np.vstack(rhs_rows).astype(float)
    for it in range(config.newton_max_iters):
        F = np.vstack([np.atleast_1d(f(times[i], Y[i])) for i in range(s)])
        G = Y - np.vstack(rhs_rows) - A @ F
        residual = np.abs(G).max()
        stats["iterations"] += 1
        stats["max"] = max(stats["max"], it + 1)
        if residual <= config.newton_tol:
            return Y
        Jbig = np.eye(s * n)
        for i in range(s):
            for j in range(s):
                if A[i, j] != 0.0:
                    Jj = jac(times[j], Y[j]) if jac is not None else _fd_jacobian(f, times[j], Y[j])
                    Jbig[i * n:(i + 1) * n, j * n:(j + 1) * n] -= A[i, j] * Jj
        try:
            dy = np.linalg.solve(Jbig, G.reshape(-1))
        except np.linalg.LinAlgError:
            break
        Y = Y - dy.reshape(s, n)
    raise StepFailure(times[-1], float(residual), config.newton_max_iters)


# ---------------------------------------------------------------------------
# startup

def _rk4_march(f, t0, u0, t1, substeps):
    """Classical RK4 from (t0, u0) to t1 with the given number of substeps."""
    h = (t1 - t0) / substeps
    t, u = t0, np.array(u0, dtype=float)
    for _ in range(substeps):
        k1 = np.atleast_1d(f(t, u))
        k2 = np.atleast_1d(f(t + h / 2, u + h / 2 * k1))
        k3 = np.atleast_1d(f(t + h / 2, u + h / 2 * k2))
        k4 = np.atleast_1d(f(t + h, u + h * k3))
        u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return u


def _startup_value(problem, t, config):
    """Solution value at time t (typically before t0) for history filling."""
    use_exact = problem.exact is not None and config.startup in ("auto", "exact")
    if config.startup == "exact" and problem.exact is None:
        raise ValueError("startup='exact' but the problem has no exact solution")
    if use_exact:
        return np.atleast_1d(problem.exact(t))
    t0 = problem.t_span[0]
    if t == t0:
        return np.array(problem.u0, dtype=float)
    intervals = max(1, int(math.ceil(abs(t - t0) / 0.1)))
    return _rk4_march(problem.f, t0, problem.u0, t,
                      substeps=config.bootstrap_substeps * intervals)


def bootstrap_history(problem, method, config: SolveConfig) -> StepperState:
    """History of k values ending at t0, plus retained stages when needed."""
    entry = method if isinstance(method, CatalogEntry) else None
    tableau = entry.tableau if entry else method
    t0 = problem.t_span[0]
    dt = config.dt
    if entry is not None and entry.retains_stages:
        u0 = np.array(problem.u0, dtype=float)
        v = _startup_value(problem, t0 - dt / 3.0, config)
        retained = {
            "y2": v,
            "y1": v - dt * np.atleast_1d(problem.f(t0 - dt / 3.0, v)),
            "y3": u0 - dt * np.atleast_1d(problem.f(t0, u0)),
        }
        return StepperState(history=[v, u0], t_current=t0, retained=retained)
    k = tableau.k
    history = [_startup_value(problem, t0 - (k - 1 - j) * dt, config) for j in range(k)]
    return StepperState(history=history, t_current=t0)


# ---------------------------------------------------------------------------
# stepping

def _tableau_of(method):
    if isinstance(method, CatalogEntry):
        return method.tableau
    return method


class _Runner:
    """Per-integration cache of the tableau pieces the stepper needs."""

    def __init__(self, tableau: GlmTableau):
        self.t = tableau
        compact = to_compact(tableau)
        c_full = abscissas(compact).c
        self.c = c_full[tableau.k - 1:]            # stage abscissas
        self.ell = -np.arange(tableau.k - 1, -1, -1, dtype=float)
        self.sequential = np.allclose(np.triu(tableau.A, 1), 0.0)
        self.needs_fhist = np.any(tableau.Ahat) or np.any(tableau.bhat)

    def step(self, state: StepperState, problem, config: SolveConfig, stats):
        t = self.t
        tn = state.t_current
        dt = config.dt
        hist = np.vstack(state.history)
        if self.needs_fhist:
            Fh = np.vstack([np.atleast_1d(problem.f(tn + self.ell[j] * dt, state.history[j]))
                            for j in range(t.k - 1)])
        else:
            Fh = np.zeros((t.k - 1, hist.shape[1]))
        R = t.D @ hist + dt * (t.Ahat @ Fh)
        times = tn + self.c * dt
        if self.sequential:
            Y = np.empty_like(R)
            FY = np.empty_like(R)
            for i in range(t.s):
                rhs = R[i] + dt * (t.A[i, :i] @ FY[:i]) if i else R[i].copy()
                if t.A[i, i] != 0.0:
                    Y[i] = _solve_implicit(problem.f, problem.jacobian, times[i],
                                           rhs, dt * t.A[i, i], config, stats)
                else:
                    Y[i] = rhs
                FY[i] = np.atleast_1d(problem.f(times[i], Y[i]))
        else:
            Y = _solve_coupled(problem.f, problem.jacobian, times, list(R),
                               dt * t.A, config, stats)
            FY = np.vstack([np.atleast_1d(problem.f(times[i], Y[i])) for i in range(t.s)])
        u_new = t.Theta @ hist + dt * (t.bhat @ Fh) + dt * (t.b @ FY)
        return u_new, hist, Fh, FY


def _alternate_updates(entry, hist, Fh, FY, dt):
    out = {}
    for alt in entry.embedded:
        out[alt.label] = alt.Theta @ hist + dt * (alt.bhat @ Fh) + dt * (alt.b @ FY)
    return out


def step(method, state: StepperState, problem, config: SolveConfig) -> StepperState:
    """Advance one macro-step; returns the new state."""
    entry = method if isinstance(method, CatalogEntry) else None
    if entry is not None and entry.retains_stages:
        stats = {"iterations": 0, "max": 0}
        u_new, retained = _eis_step(state, problem, config, stats)
        return StepperState(history=[retained["y2"], u_new],
                            t_current=state.t_current + config.dt,
                            n=state.n + 1, retained=retained)
    runner = _Runner(_tableau_of(method))
    stats = {"iterations": 0, "max": 0}
    u_new, _, _, _ = runner.step(state, problem, config, stats)
    history = state.history[1:] + [u_new]
    return StepperState(history=history, t_current=state.t_current + config.dt,
                        n=state.n + 1)


def _eis_step(state, problem, config, stats):
    """Retained-stage execution: two plain backward-Euler solves per step."""
    dt = config.dt
    tn = state.t_current
    u = state.history[-1]
    y1p, y2p, y3p = state.retained["y1"], state.retained["y2"], state.retained["y3"]
    y1 = 23.0 / 5.0 * y2p - 3.0 * u - 9.0 / 5.0 * y1p + 6.0 / 5.0 * y3p
    y2 = _solve_implicit(problem.f, problem.jacobian, tn + 2.0 / 3.0 * dt,
                         y1, dt, config, stats)
    y3 = (5.0 / 12.0 * u - 1.0 / 12.0 * y2 - 5.0 / 12.0 * y3p + 13.0 / 12.0 * y1)
    u_new = _solve_implicit(problem.f, problem.jacobian, tn + dt, y3, dt, config, stats)
    return u_new, {"y1": y1, "y2": y2, "y3": y3}


def integrate(problem, method, config: SolveConfig) -> SolutionRecord:
    """March the whole t_span; t_span must divide into whole steps."""
    entry = method if isinstance(method, CatalogEntry) else None
    tableau = _tableau_of(method)
    t0, tf = problem.t_span
    n_steps = (tf - t0) / config.dt
    if abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, abs(n_steps)):
        raise ValueError(f"t_span {problem.t_span} is not a whole number of steps of {config.dt}")
    n_steps = int(round(n_steps))

    record = SolutionRecord(
        method_name=getattr(entry, "name", None) or tableau.name or "method",
        problem_name=problem.name, dt=config.dt)
    state = bootstrap_history(problem, method, config)
    record.prehistory = [
        (state.t_current - (len(state.history) - 1 - j) * config.dt
         if state.retained is None else
         state.t_current - (1 - j) * config.dt / 3.0,
         state.history[j])
        for j in range(len(state.history) - 1)]
    times = [t0]
    record.states.append(np.array(state.history[-1]))

    stats = {"iterations": 0, "max": 0}
    eis = entry is not None and entry.retains_stages
    runner = None if eis else _Runner(tableau)
    alternates = {alt.label: [] for alt in (entry.embedded if entry else ())}

    try:
        for n in range(n_steps):
            if eis:
                u_new, retained = _eis_step(state, problem, config, stats)
                state = StepperState(history=[retained["y2"], u_new],
                                     t_current=state.t_current + config.dt,
                                     n=n + 1, retained=retained)
            else:
                u_new, hist, Fh, FY = runner.step(state, problem, config, stats)
                if alternates:
                    for label, val in _alternate_updates(entry, hist, Fh, FY,
                                                         config.dt).items():
                        alternates[label].append(val)
                state = StepperState(history=state.history[1:] + [u_new],
                                     t_current=state.t_current + config.dt, n=n + 1)
            record.states.append(u_new)
            times.append(state.t_current)
        record.completed = True
    except StepFailure as exc:
        record.failure = str(exc)

    record.times = np.array(times)
    record.alternates = alternates
    record.newton_iterations = stats["iterations"]
    record.newton_max = stats["max"]
    return record


# ---------------------------------------------------------------------------
# derived quantities

def embedded_error_estimate(record: SolutionRecord, pair=None) -> np.ndarray:
    """Per-step max-norm difference of two embedded orders (default: top two)."""
    labels = [lab for lab, vals in record.alternates.items() if vals]
    if len(labels) < 2:
        raise ValueError("record carries fewer than two embedded orders")
    if pair is None:
        pair = sorted(labels)[-2:]
    a, b = (record.alternates[l] for l in pair)
    return np.array([np.abs(np.atleast_1d(x) - np.atleast_1d(y)).max()
                     for x, y in zip(a, b)])


def pair_norm_matrix(d: float) -> np.ndarray:
    """Weight matrix of the two-point filter's decaying pair norm."""
    return 0.25 * np.array([
        [2 * d * d - 7 * d + 6, -(2 * d - 3) * (d - 1)],
        [-(2 * d - 3) * (d - 1), 2 * d * d - 3 * d + 2]])


@dataclass
class EnergyMonitor:
    d: float
    G: np.ndarray
    trace: np.ndarray
    passed: bool


def energy_check(record: SolutionRecord, d: float, slack: float = 1e-12) -> EnergyMonitor:
    """Monotonicity of the pair norm ||(u^n, u^{n-1})||_G along the record."""
    if not record.method_name.startswith("IE-Filt"):
        raise ValueError(f"energy check applies to IE-Filt methods, not {record.method_name}")
    G = pair_norm_matrix(d)
    states = [np.atleast_1d(record.prehistory[-1][1])] + \
             [np.atleast_1d(s) for s in record.states]
    trace = []
    for i in range(1, len(states)):
        X = np.vstack([states[i], states[i - 1]])       # newest first
        trace.append(float(np.einsum("in,ij,jn->", X, G, X)))
    trace = np.array(trace)
    ok = bool(np.all(trace[1:] <= trace[:-1] + slack * (1.0 + trace[:-1])))
    return EnergyMonitor(d=d, G=G, trace=trace, passed=ok)


@dataclass
class OrderStudy:
    dts: list
    errors: list                        # relative error at tf, None on failure
    slope: float

    def rows(self):
        """(dt, error, per-level order estimate) with None marking failures."""
        out = []
        prev = None
        for dt, err in zip(self.dts, self.errors):
            est = None
            if err is not None and prev is not None and err > 0:
                est = math.log2(prev / err)
            out.append((dt, err, est))
            if err is not None:
                prev = err
            else:
                prev = None
        return out


def observed_order(problem, method, dt_list, config: SolveConfig = None) -> OrderStudy:
    """Relative error at tf for each dt; slope = median of log2 ratios."""
    if len(dt_list) < 2:
        raise ValueError("need at least two step sizes")
    if problem.exact is None:
        raise ValueError("observed_order needs a problem with an exact solution")
    base = config or SolveConfig(dt=dt_list[0])
    tf = problem.t_span[1]
    u_ref = np.atleast_1d(problem.exact(tf))
    scale = np.abs(u_ref).max()
    errors = []
    for dt in dt_list:
        rec = integrate(problem, method, replace(base, dt=dt))
        if not rec.completed:
            errors.append(None)
            continue
        errors.append(float(np.abs(np.atleast_1d(rec.states[-1]) - u_ref).max() / scale))
    ratios = [math.log2(a / b) for a, b in zip(errors, errors[1:])
              if a is not None and b is not None and a > 0 and b > 0]
    slope = float(np.median(ratios)) if ratios else math.nan
    return OrderStudy(dts=list(dt_list), errors=errors, slope=slope)
