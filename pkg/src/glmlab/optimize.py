"""Stability-region optimization of filter coefficients around a core method.

Free variables are the pre-filter row and the update-row weights; every
other coefficient follows from the core method.  For a fixed pre-filter row
all order conditions are linear in the update-row weights, so those are
eliminated exactly by a small least-squares solve and the search runs over
the pre row alone (one entry is pinned by the row-sum-one consistency
condition).  The wedge parameter r is grown by warm continuation with an
adaptive step; each trial r asks the inner search (simplex descent with
seeded random restarts plus a damped least-squares polish) to drive

    penalty = w_eq * sum(order residuals^2)
            + sum_j max(0, rho(M(z_j)) - (1 - margin))^2

below the feasibility threshold over the sampled region (wedge rays, the
imaginary axis, or the negative real axis).  Results are re-measured with a
denser scan and an extended modulus range before being reported.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize as sp_optimize

from . import order as order_mod
from . import stability
from .filters import CoreMethod, PostFilter, PreFilter, apply_filters
from .stability import ScanConfig, a_alpha_angle, alpha_of_r, r_of_alpha
from .tableau import GlmTableau, to_compact

_CONDITION_ROWS = {
    # label -> (power/q! weights on Theta, stage weight builder, rhs)
    "tau_1_1": (lambda ell, c, psi2: (ell, np.ones_like(c), 1.0)),
    "tau_2_1": (lambda ell, c, psi2: (ell ** 2 / 2.0, c, 0.5)),
    "tau_3_1": (lambda ell, c, psi2: (ell ** 3 / 3.0, c ** 2, 1.0 / 3.0)),
    "tau_3_2": (lambda ell, c, psi2: (ell ** 3 / 6.0, psi2, 1.0 / 6.0)),
    "tau_4_1": (lambda ell, c, psi2: (ell ** 4 / 4.0, c ** 3, 0.25)),
}


class InfeasibleError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class FreeMask:
    pre: np.ndarray
    theta: np.ndarray
    bhat: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for f in ("pre", "theta", "bhat", "b"):
            a = np.asarray(getattr(self, f), dtype=bool).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, f, a)

    @property
    def count(self):
        return int(self.pre.sum() + self.theta.sum() + self.bhat.sum() + self.b.sum())

    @classmethod
    def build(cls, k, s, pre=True, theta=True, bhat=False, b=None):
        def expand(spec, n, default):
            if spec is None:
                return default
            if isinstance(spec, bool):
                return np.full(n, spec)
            return np.asarray(spec, dtype=bool)
        b_default = np.zeros(s, dtype=bool)
        b_default[-1] = True
        return cls(pre=expand(pre, k, np.full(k, True)),
                   theta=expand(theta, k, np.full(k, True)),
                   bhat=expand(bhat, k - 1, np.zeros(k - 1, dtype=bool)),
                   b=expand(b, s, b_default))


@dataclass
class OptimizationProblem:
    core: CoreMethod
    free: FreeMask
    target_order: int
    objective: str = "a_alpha"         # a_alpha | imag_axis | neg_real_axis
    bounds: float = 10.0
    pinned: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in ("a_alpha", "imag_axis", "neg_real_axis"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 1 <= self.target_order <= order_mod.MAX_ORDER:
            raise ValueError("target_order must be 1..4")
        k, s = self.core.k, self.core.s
        if (self.free.pre.size, self.free.theta.size) != (k, k) or \
                self.free.bhat.size != k - 1 or self.free.b.size != s:
            raise ValueError("free mask does not match the core dimensions")


@dataclass
class OptimizerConfig:
    multistarts: int = 20
    seed: int = 0
    r_max: float = 50.0
    r_tol: float = 1e-3
    margin: float = 1e-6
    penalty_tol: float = 1e-12
    eq_weight: float = 1e6
    scan: ScanConfig = field(default_factory=ScanConfig)
    inner_rays: int = 10               # wedge sampling inside the search
    inner_moduli: int = 20
    nm_maxiter: int = 250              # simplex budget per inner solve
    climb_starts: int = 3              # continuation seeds from the start pool
    max_probes: int = 48
    verbose: bool = False


@dataclass
class OptimizationResult:
    tableau: GlmTableau
    achieved_r: float
    achieved_alpha_deg: float
    order_report: order_mod.OrderResidualReport
    feasible: bool
    iterations: int
    seed: int
    objective: str = "a_alpha"
    penalty: float = math.nan

    def to_json_dict(self):
        return {
            "achieved_r": (self.achieved_r if math.isfinite(self.achieved_r) else "inf"),
            "achieved_alpha_deg": self.achieved_alpha_deg,
            "order": self.order_report.to_json_dict(),
            "feasible": self.feasible,
            "iterations": self.iterations,
            "seed": self.seed,
            "objective": self.objective,
            "penalty": self.penalty,
        }


class _Parametrization:
    """Search vector -> filtered tableau, update row eliminated linearly.

    The search vector holds the free pre-filter entries except the last
    (which carries the row-sum-one consistency condition) followed by fiber
    coordinates of the update-row solution family: given the pre row, the
    order conditions through the target order are linear in the free
    update-row weights; the linear map is solved through a rank-truncated
    SVD and the dropped right-singular directions stay in the search.  The
    truncation matters because stable filtered methods concentrate on the
    parameter variety where the condition matrix loses rank (where the
    update row gains a genuine degree of freedom); away from it the fiber
    coordinate can still reproduce the unique exact solution.
    """

    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        core = problem.core
        self.k, self.s = core.k, core.s
        pin = problem.pinned
        self.base_pre = np.array(pin.get("pre", PreFilter.identity(self.k).d1), dtype=float)
        self.base_theta = np.array(pin.get("theta", np.zeros(self.k)), dtype=float)
        self.base_bhat = np.array(pin.get("bhat", np.zeros(self.k - 1)), dtype=float)
        self.base_b = np.array(pin.get("b", np.zeros(self.s)), dtype=float)
        self.pre_idx = np.where(problem.free.pre)[0]
        self.n_pre = max(0, self.pre_idx.size - 1) if self.pre_idx.size else 0
        self.post_free = bool(problem.free.theta.any() or problem.free.bhat.any()
                              or problem.free.b.any())
        self.labels = [lab for lab in _CONDITION_ROWS
                       if int(lab.split("_")[1]) <= problem.target_order]
        # core blocks, fixed throughout
        t = core.tableau
        self.core_D = np.array(t.D)
        self.core_A = np.array(t.A)
        self.core_Ahat = np.array(t.Ahat)
        self.ell = -np.arange(self.k - 1, -1, -1, dtype=float)
        n_post = int(problem.free.theta.sum() + problem.free.bhat.sum()
                     + problem.free.b.sum())
        n_cond = len(self.labels) + 1           # plus update-row consistency
        self.rank_cap = max(0, min(n_post, n_cond) - 1) if n_post else 0
        self.n_fiber = n_post - self.rank_cap

    @property
    def n_search(self):
        return self.n_pre + self.n_fiber

    def pre_row(self, x):
        d1 = np.array(self.base_pre)
        if self.pre_idx.size:
            head = self.pre_idx[:-1]
            d1[head] = x[: head.size]
            d1[self.pre_idx[-1]] = 0.0
            d1[self.pre_idx[-1]] = 1.0 - d1.sum()
        return d1

    def _filtered_rows(self, d1):
        D = np.array(self.core_D)
        D[0] = d1
        for i in range(1, self.s):
            mult = self.core_D[i, -1]
            row = np.array(self.core_D[i])
            row[-1] = 0.0
            D[i] = mult * d1 + row
        return D

    def _stage_data(self, D):
        """Abscissas and second-order stage content of the compact form."""
        k, s = self.k, self.s
        m = s + k - 1
        At = np.zeros((m, m))
        At[k - 1:, : k - 1] = self.core_Ahat
        At[k - 1:, k - 1:] = self.core_A
        Dt = np.zeros((m, k))
        if k > 1:
            Dt[: k - 1, : k - 1] = np.eye(k - 1)
        Dt[k - 1:, :] = D
        c = At @ np.ones(m) + Dt @ self.ell
        psi2 = Dt @ (self.ell ** 2) / 2.0 + At @ c
        return c, psi2

    def _condition_system(self, D):
        """Rows/rhs of the order conditions over the free update weights."""
        free = self.problem.free
        theta, bhat, b = self.base_theta, self.base_bhat, self.base_b
        c, psi2 = self._stage_data(D)
        rows, rhs = [], []
        n_bh, n_b = int(free.bhat.sum()), int(free.b.sum())
        row = np.concatenate([np.ones(self.k)[free.theta], np.zeros(n_bh + n_b)])
        rows.append(row)
        rhs.append(1.0 - theta[~free.theta].sum())
        for lab in self.labels:
            v, w, target = _CONDITION_ROWS[lab](self.ell, c, psi2)
            w_bh, w_b = w[: self.k - 1], w[self.k - 1:]
            rows.append(np.concatenate([v[free.theta], w_bh[free.bhat], w_b[free.b]]))
            rhs.append(target - (v[~free.theta] @ theta[~free.theta]
                                 + w_bh[~free.bhat] @ bhat[~free.bhat]
                                 + w_b[~free.b] @ b[~free.b]))
        return np.vstack(rows), np.array(rhs)

    def solve_update_row(self, d1, fiber):
        """(theta, bhat, b, D): rank-capped solve plus fiber coordinates."""
        free = self.problem.free
        D = self._filtered_rows(d1)
        theta = np.array(self.base_theta)
        bhat = np.array(self.base_bhat)
        b = np.array(self.base_b)
        if not self.post_free:
            return theta, bhat, b, D
        A, rhs = self._condition_system(D)
        U, sig, Vt = np.linalg.svd(A, full_matrices=False)
        u = np.zeros(A.shape[1])
        rank = self.rank_cap
        if rank:
            safe = np.maximum(sig[:rank], 1e-300)
            u = Vt[:rank].T @ ((U[:, :rank].T @ rhs) / safe)
        for j in range(self.n_fiber):
            v = Vt[rank + j] if rank + j < Vt.shape[0] else np.zeros(A.shape[1])
            lead = np.argmax(np.abs(v))
            if v[lead] < 0:
                v = -v
            u = u + fiber[j] * v
        n_th = int(free.theta.sum())
        n_bh = int(free.bhat.sum())
        theta[free.theta] = u[:n_th]
        bhat[free.bhat] = u[n_th:n_th + n_bh]
        b[free.b] = u[n_th + n_bh:]
        return theta, bhat, b, D

    def tableau(self, x, name=""):
        x = np.asarray(x, dtype=float)
        d1 = self.pre_row(x)
        theta, bhat, b, D = self.solve_update_row(d1, x[self.n_pre:])
        core = self.problem.core.tableau
        return GlmTableau(k=self.k, s=self.s, A=core.A, Ahat=core.Ahat, D=D,
                          Theta=theta, b=b, bhat=bhat,
                          name=name or "optimized")


def _objective_samples(objective, r, scan, rays, moduli, extend=False):
    if objective == "a_alpha":
        sub = replace(scan, rays=rays, moduli=moduli)
        return stability.wedge_samples(r, sub, extend=extend)
    mods = np.geomspace(scan.z_min, max(r, scan.z_min * (1 + 1e-9)), moduli)
    return mods * (1j if objective == "imag_axis" else -1.0)


class _PenaltyModel:
    def __init__(self, problem, config):
        self.problem = problem
        self.config = config
        self.par = _Parametrization(problem)
        self.labels = [lab for lab in order_mod.LABELS
                       if int(lab.split("_")[1]) <= problem.target_order]
        self.evals = 0

    def order_residual_vector(self, x):
        method = to_compact(self.par.tableau(x))
        vecs = order_mod.residual_vectors(method)
        return np.concatenate([np.atleast_1d(vecs[lab]) for lab in self.labels])

    def rho(self, x, zs):
        method = to_compact(self.par.tableau(x))
        M = stability.evolution_matrices(method, zs)
        flat = M.reshape(M.shape[0], -1)
        finite = np.all(np.isfinite(flat), axis=1)
        rho = np.full(zs.size, np.inf)
        if finite.any():
            rho[finite] = np.abs(np.linalg.eigvals(M[finite])).max(axis=1)
        rho[~finite] = 10.0            # poles in the region are heavily penalized
        return rho

    def penalty(self, x, zs):
        self.evals += 1
        cfg = self.config
        try:
            res = self.order_residual_vector(x)
            rho = self.rho(x, zs)
        except (ValueError, np.linalg.LinAlgError):
            return 1e12
        hinge = np.maximum(0.0, rho - (1.0 - cfg.margin))
        bound = np.maximum(0.0, np.abs(x) - self.problem.bounds)
        return float(cfg.eq_weight * (res ** 2).sum() + (hinge ** 2).sum()
                     + (bound ** 2).sum())

    def residual_stack(self, x, zs):
        """Signed residuals for the least-squares polish."""
        res = self.order_residual_vector(x)
        rho = self.rho(x, zs)
        hinge = np.maximum(0.0, rho - (1.0 - self.config.margin))
        return np.concatenate([math.sqrt(self.config.eq_weight) * res, hinge])


def _polish(model, zs, x, budget=30):
    if x.size == 0:
        return x
    lsq = sp_optimize.least_squares(
        model.residual_stack, x, args=(zs,), method="trf",
        max_nfev=budget * (x.size + 1), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return lsq.x


def _probe(model, zs, x, config):
    """(penalty, x) of a warm inner solve."""
    x = np.asarray(x, dtype=float)
    p = model.penalty(x, zs)
    if p > config.penalty_tol and x.size:
        res = sp_optimize.minimize(
            model.penalty, x, args=(zs,), method="Nelder-Mead",
            options={"maxiter": config.nm_maxiter, "xatol": 1e-13, "fatol": 1e-15})
        x = res.x
        p = res.fun
    if p > config.penalty_tol and x.size:
        x = _polish(model, zs, x)
        p = model.penalty(x, zs)
    return p, x


def _inner_search(model, zs, starts, config):
    """Best (penalty, x) over the starts, stopping early when feasible."""
    best = (math.inf, np.asarray(starts[0], dtype=float))
    for x0 in starts:
        p, x = _probe(model, zs, x0, config)
        if p < best[0]:
            best = (p, x)
        if best[0] <= config.penalty_tol:
            break
    return best


def optimize_filters(problem: OptimizationProblem,
                     config: OptimizerConfig = None) -> OptimizationResult:
    config = config or OptimizerConfig()
    model = _PenaltyModel(problem, config)
    rng = np.random.default_rng(config.seed)
    n_search = model.par.n_search

    def samples(r, dense=False, extend=False):
        rays = config.scan.rays if dense else config.inner_rays
        moduli = config.scan.moduli if dense else config.inner_moduli
        return _objective_samples(problem.objective, r, config.scan, rays, moduli,
                                  extend=extend)

    probes = 0

    def log(msg):
        if config.verbose:
            print(f"[optimize] {msg}", flush=True)

    def feasible_at(r, warm, n_restarts=0):
        nonlocal probes
        starts = [warm] if warm is not None else []
        starts += list(rng.uniform(-2.5, 2.5, size=(n_restarts, n_search)))
        if not starts:
            starts = [np.zeros(n_search)]
        probes += 1
        t0 = _time.perf_counter()
        p, x = _inner_search(model, samples(r), starts, config)
        log(f"probe {probes}: r={r:.4f} penalty={p:.2e} "
            f"({_time.perf_counter() - t0:.1f}s)")
        return p <= config.penalty_tol, p, x

    # Feasibility at r = 0 (the negative-real ray alone), with multistarts.
    ok, p0, x0 = feasible_at(0.0, None, config.multistarts if n_search else 0)
    if not ok:
        raise InfeasibleError(
            f"order/stability constraints unsatisfiable even at r = 0 "
            f"(best penalty {p0:.3e})",
            residuals=model.order_residual_vector(x0))

    r_cap = config.r_max if problem.objective == "a_alpha" else config.scan.z_max
    ok_max, _, x_max = feasible_at(r_cap, x0, 2 if n_search else 0)
    if ok_max:
        lo, x_lo = r_cap, x_max
        candidates = [(r_cap, x_max)]
    else:
        # warm continuation: grow r with an adaptive step so a single failed
        # long jump cannot wall off genuinely reachable wedge parameters
        candidates = [(0.0, x0)]

        def worthwhile(r_cur, step):
            if step <= config.r_tol:
                return False
            if problem.objective != "a_alpha":
                return step > max(config.r_tol, 1e-3 * r_cur)
            gain = alpha_of_r(r_cur + step) - alpha_of_r(r_cur)
            return gain > 0.25 * config.scan.angle_tol_deg

        def climb(r_seed, x_seed):
            r_cur, x_cur = r_seed, x_seed
            step = r_cap / 8.0
            while worthwhile(r_cur, step) and probes < config.max_probes:
                trial = min(r_cur + step, r_cap)
                ok, _, x_t = feasible_at(trial, x_cur)
                if ok:
                    r_cur, x_cur = trial, x_t
                    candidates.append((trial, x_t))
                    if trial >= r_cap:
                        break
                    step = min(2.0 * step, r_cap - r_cur)
                else:
                    step *= 0.5
            return r_cur, x_cur

        lo, x_lo = climb(0.0, x0)
        attempts = 1
        while lo < r_cap / 16.0 and attempts < config.climb_starts \
                and n_search and probes < config.max_probes:
            okp, _, xp = feasible_at(0.0, rng.uniform(-2.5, 2.5, n_search))
            attempts += 1
            if okp and np.abs(xp - x0).max() > 1e-6:
                r_alt, x_alt = climb(0.0, xp)
                if r_alt > lo:
                    lo, x_lo = r_alt, x_alt

    # Confirm on the full sampling density.  A candidate grown on the coarse
    # grid may violate between coarse samples; its honest radius is found by
    # shrinking r against dense evaluations (no re-optimization needed).
    def dense_feasible_radius(r_cand, x_cand):
        if model.penalty(x_cand, samples(r_cand, dense=True)) <= config.penalty_tol:
            return r_cand
        lo_r, hi_r = 0.0, r_cand
        for _ in range(12):
            mid = 0.5 * (lo_r + hi_r)
            if model.penalty(x_cand, samples(mid, dense=True)) <= config.penalty_tol:
                lo_r = mid
            else:
                hi_r = mid
        return lo_r

    ranked = sorted(candidates, key=lambda t: -t[0])
    best_r, best_x = -1.0, None
    for r_cand, x_cand in ranked[:8]:
        if r_cand <= best_r:
            break
        r_ok = dense_feasible_radius(r_cand, x_cand)
        if r_ok > best_r:
            best_r, best_x = r_ok, x_cand

    # push the best point outward against a medium-density wedge before the
    # final dense measurement (cheap way to recover the gap the coarse climb
    # left between its boundary and the densely verified one)
    if best_x is not None and ranked and ranked[0][0] > best_r:
        top_r = ranked[0][0]
        med_rays = 2 * config.inner_rays
        med_moduli = 2 * config.inner_moduli
        for target in (0.5 * (best_r + top_r), top_r):
            zs_med = _objective_samples(problem.objective, target, config.scan,
                                        med_rays, med_moduli)
            x_try = _polish(model, zs_med, best_x, budget=25)
            if model.penalty(x_try, zs_med) <= config.penalty_tol:
                r_d = dense_feasible_radius(target, x_try)
                if r_d > best_r:
                    best_r, best_x = r_d, x_try

    if best_x is not None and best_r >= 0.0:
        zs = samples(best_r, dense=True)
        if model.penalty(best_x, zs) > config.penalty_tol:
            best_x = _polish(model, zs, best_x, budget=10)
        if model.penalty(best_x, zs) <= config.penalty_tol:
            tab = model.par.tableau(best_x, name="optimized")
            return _finish(problem, config, model, tab, best_x, probes)
    # nothing confirmed: fall back to the r = 0 point, flagged infeasible
    tab = model.par.tableau(x0, name="optimized")
    result = _finish(problem, config, model, tab, x0, probes)
    result.feasible = False
    return result


def _dense_scan(config: OptimizerConfig) -> ScanConfig:
    return replace(config.scan, rays=2 * config.scan.rays, moduli=2 * config.scan.moduli)


def _finish(problem, config, model, tableau, x, iterations) -> OptimizationResult:
    compact = to_compact(tableau)
    order_report = order_mod.order_report(compact, tol=1e-8)
    scan = _dense_scan(config)
    if problem.objective == "a_alpha":
        rep = a_alpha_angle(compact, scan)
        alpha = rep.alpha_deg if rep.alpha_deg is not None else 0.0
        achieved_r = rep.r if rep.r is not None else 0.0
    else:
        axis = "imaginary" if problem.objective == "imag_axis" else "negative_real"
        achieved_r = stability.axis_stability_radius(compact, axis, scan.z_max, scan)
        alpha = alpha_of_r(achieved_r) if math.isfinite(achieved_r) else 90.0
    zs = _objective_samples(problem.objective,
                            min(achieved_r, config.r_max) if math.isfinite(achieved_r)
                            else config.r_max,
                            config.scan, config.scan.rays, config.scan.moduli)
    penalty = model.penalty(x, zs)
    feasible = (order_report.order is not None
                and order_report.order >= problem.target_order
                and penalty <= max(config.penalty_tol, 1e-10))
    return OptimizationResult(
        tableau=tableau, achieved_r=achieved_r, achieved_alpha_deg=alpha,
        order_report=order_report, feasible=feasible, iterations=iterations,
        seed=config.seed, objective=problem.objective, penalty=penalty)


# ---------------------------------------------------------------------------
# independent re-verification

@dataclass
class VerificationConfig:
    density_factor: int = 4
    z_max: float = 1e8
    violation_tol: float = 1e-6
    order_tol: float = 1e-8


def verify_tableau(tableau, target_order, verification: VerificationConfig = None,
                   scan: ScanConfig = None):
    """(stability report, order report, feasible) at verification density."""
    verification = verification or VerificationConfig()
    base = scan or ScanConfig()
    factor = max(1, int(round(math.sqrt(verification.density_factor))))
    dense = replace(base, rays=factor * base.rays, moduli=factor * base.moduli,
                    verify_z_max=verification.z_max,
                    root_tol=min(1e-3, verification.violation_tol))
    compact = to_compact(tableau) if isinstance(tableau, GlmTableau) else tableau
    order_report = order_mod.order_report(compact, tol=verification.order_tol)
    stab = a_alpha_angle(compact, dense)
    feasible = (order_report.order >= target_order and stab.alpha_deg is not None)
    return stab, order_report, feasible


def verify_result(result: OptimizationResult, target_order,
                  verification: VerificationConfig = None):
    """Re-measure an optimization result; downgrade feasible on any violation."""
    verification = verification or VerificationConfig()
    stab, order_report, ok = verify_tableau(result.tableau, target_order, verification)
    alpha = stab.alpha_deg if stab.alpha_deg is not None else 0.0
    if result.objective == "a_alpha" and alpha < result.achieved_alpha_deg - 0.3:
        ok = False
    feasible = ok and result.feasible
    return stab, order_report, feasible


# ---------------------------------------------------------------------------
# problem files

def problem_from_json_dict(data, catalog_get=None):
    """Build an OptimizationProblem from its file representation."""
    from .tableau import method_from_json_dict

    core_spec = data["core"]
    if isinstance(core_spec, str):
        if catalog_get is None:
            from .catalog import get as catalog_get
        tab = catalog_get(core_spec).tableau
    else:
        tab = method_from_json_dict(core_spec)
    steps = int(data.get("steps", tab.k))
    core = CoreMethod.from_tableau(tab, steps=steps)
    free_spec = data.get("free", {})
    free = FreeMask.build(core.k, core.s,
                          pre=free_spec.get("pre", True),
                          theta=free_spec.get("theta", True),
                          bhat=free_spec.get("bhat", False),
                          b=free_spec.get("b", None))
    return OptimizationProblem(
        core=core, free=free,
        target_order=int(data["order"]),
        objective=data.get("objective", "a_alpha"),
        bounds=float(data.get("bounds", 10.0)),
        pinned={k: np.asarray(v, dtype=float) for k, v in data.get("pinned", {}).items()})
