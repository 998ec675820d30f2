"""Sparse primal-dual interior-point solver with complementarity homotopy.

Solves problems shaped like :class:`~mintime.transcription.NlpProblem`:

    min f(x)   s.t.  g(x) = 0,  h(x) <= 0,  lb <= x <= ub

Inequalities carry slacks (h + s = 0, s > 0); bounds and slacks enter a
log barrier whose parameter follows the monotone Fiacco-McCormick
update.  Search directions come from the regularized primal-dual KKT
system, factorized sparsely; the Lagrangian Hessian is approximated by a
damped limited-memory BFGS whose low-rank part is folded in through the
Sherman-Morrison-Woodbury identity, so the factored matrix keeps its
diagonal-plus-Jacobian sparsity.  Globalization is a filter line search
with second-order corrections and a Levenberg-Marquardt feasibility
restoration that keeps the total-time variable frozen.

The homotopy driver re-solves the same problem over a decreasing
schedule of complementarity relaxation widths, warm-starting primal and
dual iterates at each stage.  Convergence is certified on the unscaled
problem by :func:`kkt_residual`, independently of the iteration
machinery.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import diags, bmat
from scipy.sparse.linalg import splu

__all__ = [
    "SolverConfig",
    "SolverStatus",
    "SolverReport",
    "Multipliers",
    "solve",
    "homotopy_solve",
    "kkt_residual",
    "constraint_violation",
]

DEFAULT_SIGMA_SCHEDULE = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class SolverConfig:
    max_iterations: int = 500
    kkt_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-6
    homotopy_schedule: tuple = DEFAULT_SIGMA_SCHEDULE
    mu_init: float = 1e-1
    mu_warm: float = 1e-5
    mu_min: float = 1e-9
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    kappa_sigma: float = 1e10
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-5
    eta_phi: float = 1e-4
    s_theta: float = 1.1
    s_phi: float = 2.3
    gamma_alpha: float = 0.05
    backtrack: float = 0.5
    delta_w_init: float = 1e-4
    delta_w_min: float = 1e-12
    delta_w_max: float = 1e10
    delta_c: float = 1e-8
    lbfgs_memory: int = 20
    hessian: str = "auto"  # auto | exact | lbfgs
    bound_push: float = 1e-2
    restoration_max_iter: int = 40
    verbose: bool = False

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.constraint_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        sched = tuple(self.homotopy_schedule)
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("homotopy_schedule must be strictly decreasing")


class SolverStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    DIVERGED = "diverged"


@dataclass
class Multipliers:
    """Unscaled dual variables of a solve."""

    y_eq: np.ndarray
    y_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray


@dataclass
class SolverReport:
    status: SolverStatus
    iterations: int
    iterations_per_stage: list
    kkt_residual: float
    constraint_violation: float
    complementarity_residual: float
    cost: float
    wall_time: float
    multipliers: Multipliers | None = None
    log: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is SolverStatus.CONVERGED


# ---------------------------------------------------------------------------
# problem protocol helpers

def _objective(problem, z) -> float:
    if hasattr(problem, "objective"):
        return problem.objective(z)
    return problem.cost(z)


def objective_gradient(problem, z) -> np.ndarray:
    if hasattr(problem, "objective_gradient"):
        return problem.objective_gradient(z)
    from .derivatives import cost_gradient

    return cost_gradient(problem, z)


def _n_var(problem) -> int:
    return problem.lb.size


# ---------------------------------------------------------------------------
# independent certificate

def kkt_residual(problem, z, mult: Multipliers) -> float:
    """Infinity norm of the unscaled first-order optimality residuals.

    Stationarity, primal feasibility (constraints and bounds), multiplier
    signs, and complementary slackness, evaluated directly on the problem
    without any of the solver's internal scaling.
    """
    z = np.asarray(z, dtype=float)
    g = problem.eq_residual(z)
    h = problem.ineq_residual(z)
    jac = problem.jacobian(z)
    grad = objective_gradient(problem, z)
    y_all = np.concatenate([mult.y_eq, mult.y_ineq])
    stat = grad + jac.T @ y_all - mult.z_lower + mult.z_upper
    lb, ub = problem.lb, problem.ub
    parts = [
        np.abs(stat).max(initial=0.0),
        np.abs(g).max(initial=0.0),
        np.maximum(h, 0.0).max(initial=0.0),
        np.maximum(lb - z, 0.0).max(initial=0.0),
        np.maximum(z - ub, 0.0).max(initial=0.0),
        np.maximum(-mult.y_ineq, 0.0).max(initial=0.0),
        np.maximum(-mult.z_lower, 0.0).max(initial=0.0),
        np.maximum(-mult.z_upper, 0.0).max(initial=0.0),
        np.abs(mult.y_ineq * h).max(initial=0.0),
    ]
    finite_l = np.isfinite(lb)
    finite_u = np.isfinite(ub)
    if finite_l.any():
        parts.append(np.abs(mult.z_lower[finite_l] * (z - lb)[finite_l]).max(initial=0.0))
    if finite_u.any():
        parts.append(np.abs(mult.z_upper[finite_u] * (ub - z)[finite_u]).max(initial=0.0))
    return float(max(parts))


def constraint_violation(problem, z) -> float:
    """Worst unscaled violation over equalities, inequalities, and bounds."""
    z = np.asarray(z, dtype=float)
    v = np.abs(problem.eq_residual(z)).max(initial=0.0)
    v = max(v, np.maximum(problem.ineq_residual(z), 0.0).max(initial=0.0))
    v = max(v, np.maximum(problem.lb - z, 0.0).max(initial=0.0))
    v = max(v, np.maximum(z - problem.ub, 0.0).max(initial=0.0))
    return float(v)


# ---------------------------------------------------------------------------
# limited-memory BFGS of the Lagrangian (compact representation)

class _LbfgsHessian:
    """Damped L-BFGS model B = gamma I + U C U^T, kept positive definite."""

    def __init__(self, memory: int):
        self.memory = memory
        self.s_list: list[np.ndarray] = []
        self.y_list: list[np.ndarray] = []
        self.gamma = 1.0

    def reset(self):
        self.s_list.clear()
        self.y_list.clear()
        self.gamma = 1.0

    def low_rank(self):
        """(U, C) with B = gamma I + U C U^T, or (None, None) when empty."""
        if not self.s_list:
            return None, None
        S = np.stack(self.s_list, axis=1)
        Y = np.stack(self.y_list, axis=1)
        g = self.gamma
        StY = S.T @ Y
        L = np.tril(StY, k=-1)
        D = np.diag(np.diag(StY))
        M = np.block([[g * (S.T @ S), L], [L.T, -D]])
        try:
            C = -np.linalg.inv(M)
        except np.linalg.LinAlgError:
            self.reset()
            return None, None
        return np.concatenate([g * S, Y], axis=1), C

    def apply(self, v):
        out = self.gamma * v
        U, C = self.low_rank()
        if U is not None:
            out = out + U @ (C @ (U.T @ v))
        return out

    def update(self, s, y):
        sy = float(s @ y)
        Bs = self.apply(s)
        sBs = float(s @ Bs)
        if not np.isfinite(sy) or not np.isfinite(sBs) or sBs <= 0:
            self.reset()
            return
        if sy < 0.2 * sBs:  # Powell damping keeps B positive definite
            psi = 0.8 * sBs / (sBs - sy)
            y = psi * y + (1.0 - psi) * Bs
            sy = float(s @ y)
        if sy <= 1e-12 * max(1.0, float(s @ s)):
            return
        self.s_list.append(np.asarray(s, dtype=float).copy())
        self.y_list.append(np.asarray(y, dtype=float).copy())
        if len(self.s_list) > self.memory:
            self.s_list.pop(0)
            self.y_list.pop(0)
        self.gamma = float(np.clip((y @ y) / sy, 1e-4, 1e6))


# ---------------------------------------------------------------------------
# diagonal scaling wrapper

class _ScaledProblem:
    """Diagonal variable and constraint-row scaling around a raw problem."""

    def __init__(self, problem, z0):
        self.raw = problem
        n = _n_var(problem)
        self.x_scale = np.asarray(getattr(problem, "x_scale", np.ones(n)),
                                  dtype=float)
        z0 = np.asarray(z0, dtype=float)
        jac = problem.jacobian(z0).tocsr()
        js = jac.multiply(self.x_scale[None, :]).tocsr()
        row_max = np.zeros(js.shape[0])
        if js.nnz:
            counts = np.diff(js.indptr)
            rows = np.repeat(np.arange(js.shape[0]), counts)
            np.maximum.at(row_max, rows, np.abs(js.data))
        self.row_scale = np.minimum(1.0, 100.0 / np.maximum(row_max, 1e-8))
        self.n_eq = problem.n_eq
        self.n_ineq = problem.n_ineq
        self.lb = problem.lb / self.x_scale
        self.ub = problem.ub / self.x_scale
        grad0 = objective_gradient(problem, z0)
        self.f_scale = max(1.0, float(np.abs(grad0 * self.x_scale).max()))

    def unscale_x(self, x):
        return x * self.x_scale

    def scale_x(self, z):
        return np.asarray(z, dtype=float) / self.x_scale

    def objective(self, x):
        return _objective(self.raw, self.unscale_x(x)) / self.f_scale

    def objective_gradient(self, x):
        return objective_gradient(self.raw, self.unscale_x(x)) * self.x_scale / self.f_scale

    def eq_residual(self, x):
        return self.raw.eq_residual(self.unscale_x(x)) * self.row_scale[:self.n_eq]

    def ineq_residual(self, x):
        return self.raw.ineq_residual(self.unscale_x(x)) * self.row_scale[self.n_eq:]

    def jacobian(self, x):
        jac = self.raw.jacobian(self.unscale_x(x))
        return (diags(self.row_scale) @ jac @ diags(self.x_scale)).tocsr()

    def unscale_multipliers(self, y, zl, zu) -> Multipliers:
        y_un = y * self.row_scale * self.f_scale
        return Multipliers(
            y_eq=y_un[:self.n_eq],
            y_ineq=y_un[self.n_eq:],
            z_lower=zl / self.x_scale * self.f_scale,
            z_upper=zu / self.x_scale * self.f_scale,
        )

    def lagrangian_hessian(self, x, y):
        # f_scale cancels: scaled duals already carry 1/f_scale
        w = self.raw.lagrangian_hessian(self.unscale_x(x), y * self.row_scale)
        return (diags(self.x_scale) @ w @ diags(self.x_scale)).tocsr()

    def scale_multipliers(self, mult: Multipliers):
        y = np.concatenate([mult.y_eq, mult.y_ineq]) / self.row_scale / self.f_scale
        zl = mult.z_lower * self.x_scale / self.f_scale
        zu = mult.z_upper * self.x_scale / self.f_scale
        return y, zl, zu


# ---------------------------------------------------------------------------
# the interior-point core

class _Ipm:
    def __init__(self, problem, cfg: SolverConfig):
        self.cfg = cfg
        self.raw = problem
        self.n = _n_var(problem)

    # -- barrier pieces --------------------------------------------------
    def _barrier(self, x, s, mu):
        sp = self.sp
        phi = sp.objective(x)
        if self._any_lo:
            d = (x - sp.lb)[self.has_lo]
            if np.any(d <= 0):
                return np.inf
            phi -= mu * float(np.sum(np.log(d)))
        if self._any_up:
            d = (sp.ub - x)[self.has_up]
            if np.any(d <= 0):
                return np.inf
            phi -= mu * float(np.sum(np.log(d)))
        if s.size:
            if np.any(s <= 0):
                return np.inf
            phi -= mu * float(np.sum(np.log(s)))
        return phi

    def _barrier_grad(self, x, mu):
        sp = self.sp
        grad = sp.objective_gradient(x).copy()
        if self._any_lo:
            grad[self.has_lo] -= mu / (x - sp.lb)[self.has_lo]
        if self._any_up:
            grad[self.has_up] += mu / (sp.ub - x)[self.has_up]
        return grad

    @staticmethod
    def _theta(g, h, s):
        t = float(np.abs(g).sum()) if g.size else 0.0
        if h.size:
            t += float(np.abs(h + s).sum())
        return t

    @staticmethod
    def _fraction_to_boundary(vals, deltas, tau):
        alpha = 1.0
        for v, dv in zip(vals, deltas):
            if v.size == 0:
                continue
            neg = dv < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-tau * v[neg] / dv[neg])))
        return min(alpha, 1.0)

    def _kkt_error(self, x, s, y, zl, zu, g, h, jac, mu):
        sp = self.sp
        stat = sp.objective_gradient(x) + jac.T @ y - zl + zu
        smax = 100.0
        n_mult = y.size + self._n_lo + self._n_up
        sd = max(smax, (np.abs(y).sum() + zl.sum() + zu.sum()) / max(n_mult, 1)) / smax
        feas = np.abs(g).max(initial=0.0)
        if h.size:
            feas = max(feas, np.abs(h + s).max(initial=0.0))
        comp = 0.0
        n_comp = self._n_lo + self._n_up + s.size
        if n_comp:
            yi = y[sp.n_eq:]
            sc = max(smax, (zl.sum() + zu.sum() + yi.sum()) / n_comp) / smax
            terms = []
            if self._any_lo:
                terms.append((x - sp.lb)[self.has_lo] * zl[self.has_lo] - mu)
            if self._any_up:
                terms.append((sp.ub - x)[self.has_up] * zu[self.has_up] - mu)
            if s.size:
                terms.append(s * yi - mu)
            comp = float(np.abs(np.concatenate(terms)).max()) / sc
        return max(float(np.abs(stat).max(initial=0.0)) / sd, float(feas), comp)

    # -- main loop ---------------------------------------------------------
    def solve(self, z0, warm=None, log=None, stage_tag=0.0):
        cfg = self.cfg
        sp = _ScaledProblem(self.raw, z0)
        self.sp = sp
        n = self.n
        if cfg.hessian == "auto":
            self.exact_hessian = hasattr(self.raw, "lagrangian_hessian")
        elif cfg.hessian == "exact":
            if not hasattr(self.raw, "lagrangian_hessian"):
                raise ValueError("problem provides no lagrangian_hessian")
            self.exact_hessian = True
        else:
            self.exact_hessian = False
        self.has_lo = np.isfinite(sp.lb)
        self.has_up = np.isfinite(sp.ub)
        self._any_lo = bool(self.has_lo.any())
        self._any_up = bool(self.has_up.any())
        self._n_lo = int(self.has_lo.sum())
        self._n_up = int(self.has_up.sum())

        # start strictly inside the bounds
        x = sp.scale_x(np.asarray(z0, dtype=float))
        span = np.where(self.has_lo & self.has_up, sp.ub - sp.lb, np.inf)
        push_l = np.where(self.has_lo,
                          np.minimum(cfg.bound_push * np.maximum(1.0, np.abs(sp.lb)),
                                     0.25 * span), 0.0)
        push_u = np.where(self.has_up,
                          np.minimum(cfg.bound_push * np.maximum(1.0, np.abs(sp.ub)),
                                     0.25 * span), 0.0)
        x = np.minimum(np.maximum(x, sp.lb + push_l), sp.ub - push_u)

        g = sp.eq_residual(x)
        h = sp.ineq_residual(x)
        mE, mI = g.size, h.size

        if warm is not None:
            mult_w, mu = warm
            mu = float(np.clip(mu, cfg.mu_min, cfg.mu_warm))
            y, zl, zu = sp.scale_multipliers(mult_w)
            s = np.maximum(-h, 1e-8) if mI else np.zeros(0)
        else:
            mu = cfg.mu_init
            s = np.maximum(-h, 1e-2) if mI else np.zeros(0)
            y = np.zeros(mE + mI)
            zl = np.where(self.has_lo, mu / np.maximum(x - sp.lb, 1e-8), 0.0)
            zu = np.where(self.has_up, mu / np.maximum(sp.ub - x, 1e-8), 0.0)
        ks = cfg.kappa_sigma
        zl, zu = self._project_bound_duals(x, zl, zu, mu, ks)
        if mI:
            yi = y[mE:]
            np.clip(yi, mu / (ks * s), ks * mu / s, out=yi)

        bfgs = _LbfgsHessian(cfg.lbfgs_memory)
        jac = sp.jacobian(x)

        theta0 = self._theta(g, h, s)
        theta_max = 1e4 * max(1.0, theta0)
        theta_min = 1e-4 * max(1.0, theta0)
        filt: list[tuple[float, float]] = []
        delta_w_last = 0.0
        status = SolverStatus.MAX_ITERATIONS
        iters = 0
        n_restorations = 0

        for it in range(1, cfg.max_iterations + 1):
            iters = it
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(g))
                    and np.all(np.isfinite(h))):
                status = SolverStatus.DIVERGED
                break

            # unscaled certificate, checked every iteration
            z_now = sp.unscale_x(x)
            mult = sp.unscale_multipliers(y, zl, zu)
            cert = kkt_residual(self.raw, z_now, mult)
            viol = constraint_violation(self.raw, z_now)
            if cert <= cfg.kkt_tolerance and viol <= cfg.constraint_tolerance:
                status = SolverStatus.CONVERGED
                iters = it - 1
                break

            e_mu = self._kkt_error(x, s, y, zl, zu, g, h, jac, mu)
            while e_mu <= cfg.kappa_eps * mu and mu > cfg.mu_min:
                mu = max(cfg.mu_min, min(cfg.kappa_mu * mu, mu**cfg.theta_mu))
                filt.clear()
                e_mu = self._kkt_error(x, s, y, zl, zu, g, h, jac, mu)
            tau = max(cfg.tau_min, 1.0 - mu)

            # KKT assembly
            dl = np.where(self.has_lo, x - sp.lb, np.inf)
            du = np.where(self.has_up, sp.ub - x, np.inf)
            sigma_x = np.where(self.has_lo, zl / dl, 0.0)
            sigma_x += np.where(self.has_up, zu / du, 0.0)
            yi = y[mE:]
            c22 = np.full(mE + mI, -cfg.delta_c)
            if mI:
                c22[mE:] -= s / yi
            phi_grad = self._barrier_grad(x, mu)
            r1 = -(phi_grad + jac.T @ y)
            r2 = np.concatenate([-g, -(h + mu / yi)]) if mI else -g
            rhs = np.concatenate([r1, r2])
            c_now = np.concatenate([g, h + s]) if mI else g.copy()

            w_exact = (sp.lagrangian_hessian(x, y) if self.exact_hessian
                       else None)
            delta_w = 0.0
            solve_kkt = None
            step = None
            fact_tries = 0
            while True:
                diag_part = sigma_x + delta_w
                if self.exact_hessian:
                    h11 = w_exact + diags(diag_part)
                else:
                    h11 = diags(bfgs.gamma + diag_part)
                K0 = bmat([[h11, jac.T], [jac, diags(c22)]], format="csc")
                try:
                    lu = splu(K0)
                    if self.exact_hessian or not bfgs.s_list:
                        solve_kkt = lu.solve
                    else:
                        U, C = bfgs.low_rank()
                        if U is None:
                            solve_kkt = lu.solve
                        else:
                            Upad = np.zeros((n + mE + mI, U.shape[1]))
                            Upad[:n] = U
                            V = lu.solve(Upad)
                            core = np.linalg.inv(C) + Upad.T @ V

                            def solve_kkt(r, lu=lu, V=V, core=core, Upad=Upad):
                                base = lu.solve(r)
                                return base - V @ np.linalg.solve(core, Upad.T @ base)

                    step = solve_kkt(rhs)
                    if not np.all(np.isfinite(step)):
                        raise RuntimeError("non-finite step")
                    if self.exact_hessian:
                        # inertia-free safeguard: require positive curvature
                        # of the regularized Hessian along the step
                        dxp = step[:n]
                        nrm2 = float(dxp @ dxp)
                        curv = float(dxp @ (w_exact @ dxp)) + float(
                            (sigma_x + delta_w) @ (dxp * dxp))
                        if nrm2 > 1e-24 and curv < 1e-10 * nrm2:
                            raise RuntimeError("indefinite direction")
                    break
                except (RuntimeError, np.linalg.LinAlgError):
                    solve_kkt = None
                    step = None
                    fact_tries += 1
                    if fact_tries > 30:
                        break
                    if not self.exact_hessian and bfgs.s_list and fact_tries == 1:
                        bfgs.reset()
                        continue
                    if delta_w == 0.0:
                        delta_w = (cfg.delta_w_init if delta_w_last == 0.0
                                   else max(cfg.delta_w_min, delta_w_last / 3))
                    else:
                        delta_w = min(delta_w * 8, cfg.delta_w_max)
            if step is None:
                status = SolverStatus.DIVERGED
                break
            if delta_w > 0:
                delta_w_last = delta_w

            dx = step[:n]
            dy = step[n:]
            ds = (-c_now[mE:] - jac[mE:] @ dx) if mI else np.zeros(0)
            dzl = np.where(self.has_lo, mu / dl - zl - zl / dl * dx, 0.0)
            dzu = np.where(self.has_up, mu / du - zu + zu / du * dx, 0.0)

            a_pri_max = self._fraction_to_boundary(
                [dl[self.has_lo], du[self.has_up], s],
                [dx[self.has_lo], -dx[self.has_up], ds], tau)
            a_dual = self._fraction_to_boundary(
                [zl[self.has_lo], zu[self.has_up], yi if mI else np.zeros(0)],
                [dzl[self.has_lo], dzu[self.has_up], dy[mE:]], tau)

            phi0 = self._barrier(x, s, mu)
            dphi0 = float(phi_grad @ dx)
            if mI:
                dphi0 += float((-mu / s) @ ds)
            theta_now = self._theta(g, h, s)

            if dphi0 < 0 and theta_now <= theta_min:
                a_min = cfg.gamma_alpha * min(
                    cfg.gamma_theta,
                    cfg.gamma_phi * theta_now / (-dphi0),
                    (theta_now**cfg.s_theta) / max((-dphi0)**cfg.s_phi, 1e-300))
            elif dphi0 < 0:
                a_min = cfg.gamma_alpha * min(
                    cfg.gamma_theta, cfg.gamma_phi * theta_now / max(-dphi0, 1e-300))
            else:
                a_min = cfg.gamma_alpha * cfg.gamma_theta

            alpha = a_pri_max
            accepted = False
            soc_done = False
            x_t = s_t = g_t = h_t = None
            n_bt = 0
            while alpha >= max(a_min, 1e-16):
                x_t = x + alpha * dx
                s_t = s + alpha * ds
                g_t = sp.eq_residual(x_t)
                h_t = sp.ineq_residual(x_t)
                theta_t = self._theta(g_t, h_t, s_t)
                phi_t = self._barrier(x_t, s_t, mu)
                if np.isfinite(theta_t) and np.isfinite(phi_t):
                    in_filter = any(theta_t >= tf and phi_t >= pf for tf, pf in filt)
                    switching = (dphi0 < 0 and
                                 alpha * (-dphi0)**cfg.s_phi > theta_now**cfg.s_theta)
                    armijo = phi_t <= phi0 + cfg.eta_phi * alpha * dphi0
                    progress = (theta_t <= (1 - cfg.gamma_theta) * theta_now or
                                phi_t <= phi0 - cfg.gamma_phi * theta_now)
                    if theta_t <= theta_max and not in_filter:
                        if theta_now <= theta_min and switching:
                            if armijo:
                                accepted = True
                                break
                        elif progress:
                            if not (switching and armijo):
                                filt.append(((1 - cfg.gamma_theta) * theta_now,
                                             phi0 - cfg.gamma_phi * theta_now))
                            accepted = True
                            break
                    if n_bt == 0 and not soc_done and theta_t >= theta_now and mE + mI:
                        soc_done = True
                        trial = self._soc_trial(alpha, c_now, g_t, h_t, s_t, x, s,
                                                yi if mI else np.zeros(0),
                                                solve_kkt, r1, jac, dl, du, tau,
                                                mu, mE, mI)
                        if trial is not None:
                            x_c, s_c, g_c, h_c, a_c = trial
                            theta_c = self._theta(g_c, h_c, s_c)
                            phi_c = self._barrier(x_c, s_c, mu)
                            ok = (np.isfinite(theta_c) and np.isfinite(phi_c)
                                  and theta_c <= theta_max
                                  and not any(theta_c >= tf and phi_c >= pf
                                              for tf, pf in filt))
                            if ok and (theta_c <= (1 - cfg.gamma_theta) * theta_now
                                       or phi_c <= phi0 - cfg.gamma_phi * theta_now):
                                filt.append(((1 - cfg.gamma_theta) * theta_now,
                                             phi0 - cfg.gamma_phi * theta_now))
                                x_t, s_t, g_t, h_t, alpha = x_c, s_c, g_c, h_c, a_c
                                accepted = True
                                break
                alpha *= cfg.backtrack
                n_bt += 1

            if not accepted:
                n_restorations += 1
                x_r, moved, ok = self._restoration(sp, x)
                if not ok or n_restorations > 8:
                    status = (SolverStatus.INFEASIBLE if not ok
                              else SolverStatus.MAX_ITERATIONS)
                    break
                x = x_r
                g = sp.eq_residual(x)
                h = sp.ineq_residual(x)
                if mI:
                    s = np.maximum(-h, 1e-8)
                    yi = y[mE:]
                    np.clip(yi, mu / (ks * s), ks * mu / s, out=yi)
                jac = sp.jacobian(x)
                filt.clear()
                bfgs.reset()
                if log is not None:
                    log.append(dict(sigma=stage_tag, iteration=it,
                                    cost=_objective(self.raw, sp.unscale_x(x)),
                                    theta=self._theta(g, h, s), kkt=cert, mu=mu,
                                    alpha=0.0, restoration=1))
                if not moved:
                    status = SolverStatus.MAX_ITERATIONS
                    break
                continue

            # accept: curvature pair uses the new multipliers at both points
            grad_f_old = sp.objective_gradient(x)
            jac_old = jac
            x_prev = x
            x, s, g, h = x_t, s_t, g_t, h_t
            y = y + alpha * dy
            zl = np.where(self.has_lo, zl + a_dual * dzl, 0.0)
            zu = np.where(self.has_up, zu + a_dual * dzu, 0.0)
            zl, zu = self._project_bound_duals(x, zl, zu, mu, ks)
            if mI:
                yi = y[mE:]
                np.clip(yi, mu / (ks * s), ks * mu / s, out=yi)

            jac = sp.jacobian(x)
            if not self.exact_hessian:
                sk = x - x_prev
                yk = (sp.objective_gradient(x) + jac.T @ y) - (grad_f_old + jac_old.T @ y)
                bfgs.update(sk, yk)

            if log is not None:
                log.append(dict(sigma=stage_tag, iteration=it,
                                cost=_objective(self.raw, sp.unscale_x(x)),
                                theta=self._theta(g, h, s), kkt=cert, mu=mu,
                                alpha=alpha, restoration=0))
            if cfg.verbose:
                print(f"  it {it:4d}  f={_objective(self.raw, sp.unscale_x(x)):10.6f}"
                      f"  theta={self._theta(g, h, s):9.2e}  cert={cert:9.2e}"
                      f"  mu={mu:7.1e}  alpha={alpha:7.1e}")

        z_final = sp.unscale_x(x)
        mult = sp.unscale_multipliers(y, zl, zu)
        return z_final, mult, status, iters, mu

    def _project_bound_duals(self, x, zl, zu, mu, ks):
        sp = self.sp
        if self._any_lo:
            d = np.maximum((x - sp.lb)[self.has_lo], 1e-300)
            zl = zl.copy()
            zl[self.has_lo] = np.clip(zl[self.has_lo], mu / (ks * d), ks * mu / d)
        if self._any_up:
            d = np.maximum((sp.ub - x)[self.has_up], 1e-300)
            zu = zu.copy()
            zu[self.has_up] = np.clip(zu[self.has_up], mu / (ks * d), ks * mu / d)
        return zl, zu

    def _soc_trial(self, alpha, c_now, g_t, h_t, s_t, x, s, yi, solve_kkt, r1,
                   jac, dl, du, tau, mu, mE, mI):
        """One second-order correction step (reuses the factorization)."""
        sp = self.sp
        c_trial = np.concatenate([g_t, h_t + s_t]) if mI else g_t
        c_soc = alpha * c_now + c_trial
        if mI:
            r2 = np.concatenate([-c_soc[:mE], -(c_soc[mE:] - s + mu / yi)])
        else:
            r2 = -c_soc
        step = solve_kkt(np.concatenate([r1, r2]))
        if not np.all(np.isfinite(step)):
            return None
        dx_soc = step[:self.n]
        ds_soc = (-c_soc[mE:] - jac[mE:] @ dx_soc) if mI else np.zeros(0)
        a_soc = self._fraction_to_boundary(
            [dl[self.has_lo], du[self.has_up], s],
            [dx_soc[self.has_lo], -dx_soc[self.has_up], ds_soc], tau)
        x_c = x + a_soc * dx_soc
        s_c = s + a_soc * ds_soc
        return x_c, s_c, sp.eq_residual(x_c), sp.ineq_residual(x_c), a_soc

    def _restoration(self, sp, x):
        """Levenberg-Marquardt reduction of the constraint violation.

        The total-time entry (and any other index the problem freezes)
        stays fixed so restoration cannot trade cost for feasibility.
        """
        cfg = self.cfg
        frozen = np.asarray(getattr(self.raw, "frozen_in_restoration", [0]),
                            dtype=int)
        frozen = frozen[frozen < self.n]
        lam = 1e-4

        def viol_vec(xv):
            return np.concatenate([sp.eq_residual(xv),
                                   np.maximum(sp.ineq_residual(xv), 0.0)])

        x0 = x.copy()
        r = viol_vec(x)
        v0 = 0.5 * float(r @ r)
        v_enter = v0
        for _ in range(cfg.restoration_max_iter):
            if v0 <= 1e-18:
                break
            jac = sp.jacobian(x)
            h = sp.ineq_residual(x)
            act = np.concatenate([np.ones(sp.n_eq, dtype=bool), h > 0])
            ja = jac[act]
            ra = np.concatenate([sp.eq_residual(x), h[h > 0]])
            jtj = (ja.T @ ja).tocsc()
            grad = ja.T @ ra
            grad[frozen] = 0.0
            improved = False
            for _ in range(10):
                try:
                    d = -splu(jtj + lam * diags(np.ones(self.n))).solve(grad)
                except RuntimeError:
                    lam *= 10
                    continue
                d[frozen] = 0.0
                x_t = np.minimum(np.maximum(x + d, sp.lb + 1e-12), sp.ub - 1e-12)
                r_t = viol_vec(x_t)
                v_t = 0.5 * float(r_t @ r_t)
                if np.isfinite(v_t) and v_t < v0:
                    x, v0 = x_t, v_t
                    lam = max(lam / 3, 1e-10)
                    improved = True
                    break
                lam *= 10
            if not improved:
                break
        moved = bool(np.linalg.norm(x - x0) > 1e-14)
        ok = v0 < 0.99 * v_enter or v0 <= 1e-16 or v_enter <= 1e-16
        return x, moved, ok


# ---------------------------------------------------------------------------
# public entry points

def solve(problem, z0, cfg: SolverConfig | None = None,
          _warm=None, _log=None, _stage=0.0):
    """Solve the problem at its current relaxation; returns (z, report)."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    log = [] if _log is None else _log
    ipm = _Ipm(problem, cfg)
    z, mult, status, iters, mu_end = ipm.solve(z0, warm=_warm, log=log,
                                               stage_tag=_stage)
    report = SolverReport(
        status=status,
        iterations=iters,
        iterations_per_stage=[iters],
        kkt_residual=kkt_residual(problem, z, mult),
        constraint_violation=constraint_violation(problem, z),
        complementarity_residual=_comp_residual(problem, z, mult),
        cost=_objective(problem, z),
        wall_time=time.perf_counter() - t0,
        multipliers=mult,
        log=log,
    )
    report._warm = (mult, mu_end)
    return z, report


def _comp_residual(problem, z, mult) -> float:
    h = problem.ineq_residual(z)
    if h.size == 0:
        return 0.0
    return float(np.abs(mult.y_ineq * h).max())


def homotopy_solve(problem, z0, cfg: SolverConfig | None = None):
    """Drive the complementarity relaxation down a schedule of widths.

    Each stage warm-starts primal and dual variables from the previous
    one; a failed stage is retried once from a sqrt(10) backed-off width.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    log = []
    stages = []
    z = np.asarray(z0, dtype=float)
    warm = None
    report = None
    for sigma in cfg.homotopy_schedule:
        problem.sigma = float(sigma)
        z_new, report = solve(problem, z, cfg, _warm=warm, _log=log, _stage=sigma)
        if not report.converged:
            problem.sigma = float(sigma * np.sqrt(10.0))
            z_mid, rep_mid = solve(problem, z, cfg, _warm=warm, _log=log,
                                   _stage=problem.sigma)
            if rep_mid.converged:
                stages.append(rep_mid.iterations)
                problem.sigma = float(sigma)
                z_new, report = solve(problem, z_mid, cfg, _warm=rep_mid._warm,
                                      _log=log, _stage=sigma)
        stages.append(report.iterations)
        if report.status in (SolverStatus.DIVERGED, SolverStatus.INFEASIBLE):
            break
        z = z_new
        warm = report._warm
    problem.sigma = float(cfg.homotopy_schedule[-1])
    final = SolverReport(
        status=report.status,
        iterations=int(sum(stages)),
        iterations_per_stage=stages,
        kkt_residual=report.kkt_residual,
        constraint_violation=report.constraint_violation,
        complementarity_residual=report.complementarity_residual,
        cost=report.cost,
        wall_time=time.perf_counter() - t0,
        multipliers=report.multipliers,
        log=log,
    )
    final._warm = report._warm
    return z, final
