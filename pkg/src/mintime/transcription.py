"""Multiple-shooting transcription with waypoint-progress complementarity.

The decision vector stacks the total time t, then per shooting node the
dynamic state, the interval input, and the per-waypoint progress
variables: lam (remaining progress, 1 until the waypoint is passed, 0
after), mu (progress decrement per interval, nonnegative), and nu (slack
admitting passage anywhere inside the tolerance ball).  Progress may
only change while the vehicle is inside the tolerance ball of the
matching waypoint; that coupling is the relaxed complementarity product

    |mu_kj * (||p_k - w_j||^2 - nu_kj)| <= sigma

whose width ``sigma`` is driven towards zero by the solver's homotopy.
A fixed-allocation variant pins each waypoint to a chosen node instead,
as the classical baseline.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ad
from .errors import DimensionError, ValidationError
from .quad import QuadConfig, QuadModel, QuadState, rk4_parts, rk4_step

__all__ = [
    "Terminal",
    "Track",
    "DecisionLayout",
    "NlpProblem",
    "Trajectory",
    "ReplayReport",
    "assemble",
    "assemble_fixed_allocation",
    "extract_trajectory",
    "pack_decision",
    "replay_check",
    "T_MIN",
]

T_MIN = 0.05  # lower bound on total time, guards against dt -> 0 collapse


class Terminal(enum.Enum):
    FREE = "free"
    HOVER = "hover"
    FIXED = "fixed"


@dataclass
class Track:
    """Ordered waypoint sequence with tolerance and boundary conditions."""

    waypoints: np.ndarray
    d_tol: float
    x_init: QuadState
    terminal: Terminal = Terminal.FREE
    terminal_state: QuadState | None = None
    terminal_position_is_last_waypoint: bool = False

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 3:
            raise ValidationError("waypoints must be an (M, 3) array")
        if not self.d_tol > 0:
            raise ValidationError("d_tol must be positive")
        if isinstance(self.terminal, str):
            self.terminal = Terminal(self.terminal)
        if self.terminal is Terminal.FIXED and self.terminal_state is None:
            raise ValidationError("terminal=fixed requires terminal_state")
        if self.waypoints.shape[0] > 1:
            dup = np.all(np.diff(self.waypoints, axis=0) == 0.0, axis=1)
            if np.any(dup):
                warnings.warn("track contains consecutive duplicate waypoints",
                              stacklevel=2)

    @property
    def n_waypoints(self) -> int:
        return self.waypoints.shape[0]

    def path_points(self) -> np.ndarray:
        """Initial position followed by the waypoints."""
        return np.vstack([self.x_init.position, self.waypoints])

    def path_length(self) -> float:
        pts = self.path_points()
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


@dataclass
class DecisionLayout:
    """Index map of the decision vector.

    Ordering: ``[t, (x_0 u_0 lam_0 mu_0 nu_0), ..., (x_{N-1} ...), x_N lam_N]``
    with the progress triplet absent when ``with_progress`` is false.
    """

    n_nodes: int
    n_waypoints: int
    state_dim: int = 13
    input_dim: int = 4
    with_progress: bool = True

    t_index: int = field(init=False, default=0)

    def __post_init__(self):
        n, m = self.n_nodes, self.n_waypoints
        dx, du = self.state_dim, self.input_dim
        if n < 1 or m < 1:
            raise DimensionError("need n_nodes >= 1 and n_waypoints >= 1")
        prog = 3 * m if self.with_progress else 0
        stride = dx + du + prog
        starts = 1 + stride * np.arange(n + 1)
        self.x_idx = starts[:, None] + np.arange(dx)[None, :]
        self.u_idx = starts[:n, None] + dx + np.arange(du)[None, :]
        if self.with_progress:
            self.lam_idx = np.vstack([
                starts[:n, None] + dx + du + np.arange(m)[None, :],
                starts[n] + dx + np.arange(m)[None, :],
            ])
            self.mu_idx = starts[:n, None] + dx + du + m + np.arange(m)[None, :]
            self.nu_idx = starts[:n, None] + dx + du + 2 * m + np.arange(m)[None, :]
            self.size = int(starts[n] + dx + m)
        else:
            self.lam_idx = np.zeros((0, m), dtype=int)
            self.mu_idx = np.zeros((0, m), dtype=int)
            self.nu_idx = np.zeros((0, m), dtype=int)
            self.size = int(starts[n] + dx)

    def x_slice(self, k: int) -> slice:
        i = int(self.x_idx[k, 0])
        return slice(i, i + self.state_dim)

    def u_slice(self, k: int) -> slice:
        i = int(self.u_idx[k, 0])
        return slice(i, i + self.input_dim)


class NlpProblem:
    """Assembled sparse NLP: cost, residual evaluators, bounds, sparsity.

    Equality residuals are driven to zero; inequalities use the <= 0
    convention.  ``sigma`` is the complementarity relaxation width and may
    be retightened between solves without reassembly.  All evaluators are
    pure functions of (z, sigma).
    """

    def __init__(self, layout: DecisionLayout, model, track: Track,
                 sigma: float = 1.0, fixed_nodes=None, fixed_tol=None):
        self.layout = layout
        self.model = model
        self.track = track
        self.sigma = float(sigma)
        self.fixed_nodes = None if fixed_nodes is None else np.asarray(fixed_nodes, dtype=int)
        self.fixed_tol = None if fixed_tol is None else np.asarray(fixed_tol, dtype=float)
        self._nd = layout.state_dim + layout.input_dim + 1

        self._x_init_vec = model.initial_state(track.x_init)
        self._terminal_idx, self._terminal_val = self._terminal_row_spec()
        self._build_dependency_masks()
        self._build_rows()
        self._build_pattern()
        self._build_hessian_pattern()
        self._build_bounds()
        self._build_scaling()

    @property
    def frozen_in_restoration(self):
        # total time stays fixed while feasibility is being restored
        return [self.layout.t_index]

    # ------------------------------------------------------------------
    # structure

    def _terminal_row_spec(self):
        """State indices and targets pinned at the final node."""
        track, model = self.track, self.model
        idx_parts, targets = [], []
        if track.terminal is Terminal.HOVER:
            rest = np.asarray(model.terminal_rest_rows(), dtype=int)
            idx_parts.append(rest)
            targets.append(np.zeros(rest.size))
        elif track.terminal is Terminal.FIXED:
            idx_parts.append(np.arange(self.layout.state_dim))
            targets.append(model.initial_state(track.terminal_state))
        if track.terminal_position_is_last_waypoint:
            idx_parts.append(np.arange(3))
            targets.append(track.waypoints[-1])
        if idx_parts:
            return np.concatenate(idx_parts), np.concatenate(targets)
        return np.zeros(0, dtype=int), np.zeros(0)

    def _build_dependency_masks(self):
        dx = self.layout.state_dim
        d1 = self.model.state_dependency().astype(int)
        d1u = self.model.input_dependency().astype(int)
        # dependency closure through the four nested RK4 stages
        reach = np.eye(dx, dtype=int)
        mask_x = np.zeros((dx, dx), dtype=int)
        mask_u = np.zeros_like(d1u)
        for _ in range(4):
            mask_u += reach @ d1u
            reach = d1 @ reach
            mask_x += reach
        self._dyn_mask_x = (mask_x > 0) | np.eye(dx, dtype=bool)  # includes -I
        self._dyn_mask_u = mask_u > 0

    def _build_rows(self):
        lay = self.layout
        n, m, dx = lay.n_nodes, lay.n_waypoints, lay.state_dim
        ne, ni = self.model.n_node_eq, self.model.n_input_ineq

        def build(spec):
            groups, r = {}, 0
            for name, count in spec:
                if count:
                    groups[name] = slice(r, r + count)
                    r += count
            return groups, r

        eq_spec = [
            ("initial", dx),
            ("dynamics", n * dx),
            ("node_eq", ne * (n + 1)),
        ]
        if lay.with_progress:
            eq_spec += [
                ("progress_evolution", n * m),
                ("progress_start", m),
                ("progress_end", m),
            ]
        eq_spec.append(("terminal", self._terminal_idx.size))
        self.eq_groups, self.n_eq = build(eq_spec)

        ineq_spec = []
        if lay.with_progress:
            ineq_spec += [
                ("sequence", (n + 1) * (m - 1)),
                ("complementarity_plus", n * m),
                ("complementarity_minus", n * m),
            ]
        ineq_spec.append(("input_norm", ni * n))
        if self.fixed_nodes is not None:
            ineq_spec.append(("fixed_waypoints", m))
        self.ineq_groups, self.n_ineq = build(ineq_spec)

    def _build_pattern(self):
        lay = self.layout
        n, m, dx = lay.n_nodes, lay.n_waypoints, lay.state_dim
        rows, cols = [], []
        g = self.eq_groups

        rows.append(g["initial"].start + np.arange(dx))
        cols.append(lay.x_idx[0])

        r0 = g["dynamics"].start
        mi_x, mj_x = np.nonzero(self._dyn_mask_x)
        mi_u, mj_u = np.nonzero(self._dyn_mask_u)
        self._dyn_ij_x = (mi_x, mj_x)
        self._dyn_ij_u = (mi_u, mj_u)
        self._dyn_diag_sel = mi_x == mj_x
        node_rows = r0 + dx * np.arange(n)[:, None]
        rows.append((node_rows + mi_x[None, :]).ravel())
        cols.append(lay.x_idx[:n][:, mj_x].ravel())
        rows.append((node_rows + mi_u[None, :]).ravel())
        cols.append(lay.u_idx[:, mj_u].ravel())
        rows.append((node_rows + np.arange(dx)[None, :]).ravel())
        cols.append(np.zeros(n * dx, dtype=int))  # total-time column
        rows.append((node_rows + np.arange(dx)[None, :]).ravel())
        cols.append(lay.x_idx[1:].ravel())

        if self.model.n_node_eq:
            r0 = g["node_eq"].start
            for e, ecols in enumerate(self.model.node_eq_columns()):
                rr = r0 + self.model.n_node_eq * np.arange(n + 1) + e
                rows.append(np.repeat(rr, ecols.size))
                cols.append(lay.x_idx[:, ecols].ravel())

        if lay.with_progress:
            rr = g["progress_evolution"].start + np.arange(n * m)
            rows.extend([rr, rr, rr])
            cols.extend([lay.lam_idx[1:].ravel(), lay.lam_idx[:n].ravel(),
                         lay.mu_idx.ravel()])
            rows.append(g["progress_start"].start + np.arange(m))
            cols.append(lay.lam_idx[0])
            rows.append(g["progress_end"].start + np.arange(m))
            cols.append(lay.lam_idx[n])

        if self._terminal_idx.size:
            rows.append(g["terminal"].start + np.arange(self._terminal_idx.size))
            cols.append(lay.x_idx[n, self._terminal_idx])

        off = self.n_eq
        gi = self.ineq_groups
        if lay.with_progress:
            if m > 1:
                rr = off + gi["sequence"].start + np.arange((n + 1) * (m - 1))
                rows.extend([rr, rr])
                cols.extend([lay.lam_idx[:, :-1].ravel(), lay.lam_idx[:, 1:].ravel()])
            for name in ("complementarity_plus", "complementarity_minus"):
                rr = off + gi[name].start + np.arange(n * m)
                pcols = np.broadcast_to(lay.x_idx[:n, None, :3], (n, m, 3))
                rows.append(np.repeat(rr, 3))
                cols.append(pcols.reshape(-1))
                rows.extend([rr, rr])
                cols.extend([lay.mu_idx.ravel(), lay.nu_idx.ravel()])

        if self.model.n_input_ineq:
            r0 = off + gi["input_norm"].start
            for e, ecols in enumerate(self.model.input_ineq_columns()):
                rr = r0 + self.model.n_input_ineq * np.arange(n) + e
                rows.append(np.repeat(rr, ecols.size))
                cols.append(lay.u_idx[:, ecols].ravel())

        if self.fixed_nodes is not None:
            rr = off + gi["fixed_waypoints"].start + np.arange(m)
            rows.append(np.repeat(rr, 3))
            cols.append(lay.x_idx[self.fixed_nodes, :3].ravel())

        self.jac_rows = np.concatenate(rows)
        self.jac_cols = np.concatenate(cols)

    def _build_hessian_pattern(self):
        """Triplet pattern of the constraint part of the Lagrangian Hessian.

        The dynamics contribute one dense (x_k, u_k, t) block per node;
        the extra node equalities and input inequalities are assumed to be
        of squared-norm form (constant diagonal Hessian on their columns),
        which holds for the quaternion norm and the acceleration ball; the
        complementarity products contribute their bilinear cross terms.
        """
        lay = self.layout
        n, m, dx, du = lay.n_nodes, lay.n_waypoints, lay.state_dim, lay.input_dim
        nd = self._nd
        rows, cols = [], []

        gidx = np.hstack([lay.x_idx[:n], lay.u_idx,
                          np.zeros((n, 1), dtype=int)])  # t column last
        rows.append(np.broadcast_to(gidx[:, :, None], (n, nd, nd)).ravel())
        cols.append(np.broadcast_to(gidx[:, None, :], (n, nd, nd)).ravel())

        for ecols in self.model.node_eq_columns():
            d = lay.x_idx[:, ecols].ravel()
            rows.append(d)
            cols.append(d)

        if lay.with_progress:
            p_idx = np.broadcast_to(lay.x_idx[:n, None, :3], (n, m, 3))
            mu_idx3 = np.broadcast_to(lay.mu_idx[:, :, None], (n, m, 3))
            rows.append(p_idx.reshape(-1))
            cols.append(p_idx.reshape(-1))
            rows.append(p_idx.reshape(-1))
            cols.append(mu_idx3.reshape(-1))
            rows.append(mu_idx3.reshape(-1))
            cols.append(p_idx.reshape(-1))
            rows.append(lay.mu_idx.ravel())
            cols.append(lay.nu_idx.ravel())
            rows.append(lay.nu_idx.ravel())
            cols.append(lay.mu_idx.ravel())

        for ecols in self.model.input_ineq_columns():
            d = lay.u_idx[:, ecols].ravel()
            rows.append(d)
            cols.append(d)

        if self.fixed_nodes is not None:
            d = lay.x_idx[self.fixed_nodes, :3].ravel()
            rows.append(d)
            cols.append(d)

        self.hess_rows = np.concatenate(rows)
        self.hess_cols = np.concatenate(cols)

    def _build_bounds(self):
        lay = self.layout
        lb = np.full(lay.size, -np.inf)
        ub = np.full(lay.size, np.inf)
        lb[lay.t_index] = T_MIN
        xlb, xub = self.model.state_bounds()
        lb[lay.x_idx] = xlb
        ub[lay.x_idx] = xub
        ulb, uub = self.model.input_bounds()
        lb[lay.u_idx] = ulb
        ub[lay.u_idx] = uub
        if lay.with_progress:
            lb[lay.lam_idx] = 0.0
            ub[lay.lam_idx] = 1.0
            lb[lay.mu_idx] = 0.0
            lb[lay.nu_idx] = 0.0
            ub[lay.nu_idx] = self.track.d_tol**2
        self.lb = lb
        self.ub = ub

    def _build_scaling(self):
        lay = self.layout
        pts = self.track.path_points()
        span = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        s_p = max(1.0, span)
        a_char = self.model.char_accel()
        s_v = max(1.0, float(np.sqrt(a_char * s_p)))
        s = np.ones(lay.size)
        s[lay.t_index] = max(4.0 * T_MIN, 2.0 * float(np.sqrt(s_p / a_char)))
        s[lay.x_idx] = self.model.state_scale(s_p, s_v)
        s[lay.u_idx] = self.model.input_scale()
        if lay.with_progress:
            s[lay.nu_idx] = self.track.d_tol**2
        self.x_scale = s

    # ------------------------------------------------------------------
    # evaluation

    def cost(self, z) -> float:
        return float(z[self.layout.t_index])

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.layout.size,):
            raise DimensionError(
                f"decision vector has shape {z.shape}, expected ({self.layout.size},)")
        return z

    def _shoot(self, z, with_jac: bool):
        """Evaluate dt * f_RK4 over all intervals, optionally with Jacobian."""
        lay = self.layout
        n, dx, du = lay.n_nodes, lay.state_dim, lay.input_dim
        X = z[lay.x_idx]
        U = z[lay.u_idx]
        t = z[lay.t_index]
        if with_jac:
            nd = self._nd
            x_parts = [ad.seed(X[:n, i], i, nd) for i in range(dx)]
            u_parts = [ad.seed(U[:, j], dx + j, nd) for j in range(du)]
            tdot = np.zeros(nd)
            tdot[-1] = 1.0 / n
            dt = ad.Dual(t / n, tdot)
        else:
            x_parts = [X[:n, i] for i in range(dx)]
            u_parts = [U[:, j] for j in range(du)]
            dt = t / n
        slope = rk4_parts(lambda xs, us: self.model.derivative(xs, us),
                          x_parts, u_parts, dt)
        step = [dt * s for s in slope]
        if with_jac:
            vals, jac = ad.jacobian_stack(step, self._nd)
            return X, U, vals, jac
        vals = np.stack([np.broadcast_to(ad.value(s), (n,)) for s in step], axis=1)
        return X, U, vals, None

    def eq_residual(self, z) -> np.ndarray:
        z = self._check(z)
        lay = self.layout
        n, dx = lay.n_nodes, lay.state_dim
        X, _, step, _ = self._shoot(z, with_jac=False)
        out = np.empty(self.n_eq)
        out[self.eq_groups["initial"]] = X[0] - self._x_init_vec
        out[self.eq_groups["dynamics"]] = (X[1:] - X[:n] - step).ravel()
        if self.model.n_node_eq:
            parts = self.model.node_eq_parts([X[:, i] for i in range(dx)])
            out[self.eq_groups["node_eq"]] = np.stack(parts, axis=1).ravel()
        if lay.with_progress:
            lam = z[lay.lam_idx]
            mu = z[lay.mu_idx]
            out[self.eq_groups["progress_evolution"]] = (lam[1:] - lam[:n] + mu).ravel()
            out[self.eq_groups["progress_start"]] = lam[0] - 1.0
            out[self.eq_groups["progress_end"]] = lam[n]
        if self._terminal_idx.size:
            out[self.eq_groups["terminal"]] = X[n, self._terminal_idx] - self._terminal_val
        return out

    def ineq_residual(self, z) -> np.ndarray:
        z = self._check(z)
        lay = self.layout
        n, m = lay.n_nodes, lay.n_waypoints
        out = np.empty(self.n_ineq)
        X = z[lay.x_idx]
        if lay.with_progress:
            lam = z[lay.lam_idx]
            if m > 1:
                out[self.ineq_groups["sequence"]] = (lam[:, :-1] - lam[:, 1:]).ravel()
            prod = self._compl_product(z, X)
            out[self.ineq_groups["complementarity_plus"]] = (prod - self.sigma).ravel()
            out[self.ineq_groups["complementarity_minus"]] = (-prod - self.sigma).ravel()
        if self.model.n_input_ineq:
            U = z[lay.u_idx]
            parts = self.model.input_ineq_parts([U[:, j] for j in range(lay.input_dim)])
            out[self.ineq_groups["input_norm"]] = np.stack(parts, axis=1).ravel()
        if self.fixed_nodes is not None:
            diff = X[self.fixed_nodes, :3] - self.track.waypoints
            out[self.ineq_groups["fixed_waypoints"]] = (
                np.sum(diff**2, axis=1) - self.fixed_tol**2)
        return out

    def _compl_product(self, z, X):
        lay = self.layout
        n = lay.n_nodes
        diff = X[:n, None, :3] - self.track.waypoints[None, :, :]
        d2 = np.sum(diff**2, axis=2)
        return z[lay.mu_idx] * (d2 - z[lay.nu_idx])

    def residual(self, z) -> np.ndarray:
        """Stacked (equality; inequality) residuals."""
        return np.concatenate([self.eq_residual(z), self.ineq_residual(z)])

    def jacobian_values(self, z) -> np.ndarray:
        """Values aligned with (jac_rows, jac_cols) of the stacked Jacobian."""
        z = self._check(z)
        lay = self.layout
        n, m, dx, du = lay.n_nodes, lay.n_waypoints, lay.state_dim, lay.input_dim
        vals = [np.ones(dx)]

        X, U, _, jac = self._shoot(z, with_jac=True)
        mi_x, mj_x = self._dyn_ij_x
        vx = -jac[:, mi_x, mj_x]
        vx[:, self._dyn_diag_sel] -= 1.0
        vals.append(vx.ravel())
        mi_u, mj_u = self._dyn_ij_u
        vals.append(-jac[:, mi_u, dx + mj_u].ravel())
        vals.append(-jac[:, :, -1].ravel())
        vals.append(np.ones(n * dx))

        if self.model.n_node_eq:
            for block in self.model.node_eq_jac([X[:, i] for i in range(dx)]):
                vals.append(block.ravel())

        if lay.with_progress:
            nm = n * m
            vals.extend([np.ones(nm), -np.ones(nm), np.ones(nm)])
            vals.extend([np.ones(m), np.ones(m)])

        vals.append(np.ones(self._terminal_idx.size))

        if lay.with_progress:
            if m > 1:
                sz = (n + 1) * (m - 1)
                vals.extend([np.ones(sz), -np.ones(sz)])
            mu = z[lay.mu_idx]
            nu = z[lay.nu_idx]
            diff = X[:n, None, :3] - self.track.waypoints[None, :, :]
            d2 = np.sum(diff**2, axis=2)
            dp = 2.0 * mu[:, :, None] * diff
            for sign in (1.0, -1.0):
                vals.append(sign * dp.reshape(-1))
                vals.append(sign * (d2 - nu).ravel())
                vals.append(sign * (-mu).ravel())

        if self.model.n_input_ineq:
            for block in self.model.input_ineq_jac([U[:, j] for j in range(du)]):
                vals.append(block.ravel())

        if self.fixed_nodes is not None:
            diff = X[self.fixed_nodes, :3] - self.track.waypoints
            vals.append(2.0 * diff.ravel())

        return np.concatenate(vals)

    def jacobian(self, z):
        """Stacked constraint Jacobian as a scipy CSR matrix."""
        from scipy.sparse import coo_matrix

        v = self.jacobian_values(z)
        return coo_matrix((v, (self.jac_rows, self.jac_cols)),
                          shape=(self.n_eq + self.n_ineq, self.layout.size)).tocsr()

    def lagrangian_hessian_values(self, z, y) -> np.ndarray:
        """Values of sum_r y_r grad^2 c_r aligned with (hess_rows, hess_cols).

        ``y`` stacks equality then inequality multipliers; the linear-cost
        objective contributes nothing.
        """
        z = self._check(z)
        lay = self.layout
        n, m, dx, du = lay.n_nodes, lay.n_waypoints, lay.state_dim, lay.input_dim
        nd = self._nd
        vals = []

        X = z[lay.x_idx]
        U = z[lay.u_idx]
        t = z[lay.t_index]
        x_parts = [ad.seed2(X[:n, i], i, nd) for i in range(dx)]
        u_parts = [ad.seed2(U[:, j], dx + j, nd) for j in range(du)]
        tdot = np.zeros(nd)
        tdot[-1] = 1.0 / n
        dt = ad.Dual2(t / n, tdot, np.zeros((nd, nd)))
        slope = rk4_parts(lambda xs, us: self.model.derivative(xs, us),
                          x_parts, u_parts, dt)
        step = [dt * s for s in slope]
        ddot = ad.hessian_stack(step, nd)
        y_dyn = y[self.eq_groups["dynamics"]].reshape(n, dx)
        vals.append(-np.einsum("ki,kiab->kab", y_dyn, ddot).ravel())

        if self.model.n_node_eq:
            y_ne = y[self.eq_groups["node_eq"]].reshape(n + 1, self.model.n_node_eq)
            for e, ecols in enumerate(self.model.node_eq_columns()):
                vals.append(np.repeat(2.0 * y_ne[:, e], ecols.size))

        off = self.n_eq
        if lay.with_progress:
            w = (y[off + self.ineq_groups["complementarity_plus"].start:
                   off + self.ineq_groups["complementarity_plus"].stop]
                 - y[off + self.ineq_groups["complementarity_minus"].start:
                     off + self.ineq_groups["complementarity_minus"].stop]
                 ).reshape(n, m)
            mu = z[lay.mu_idx]
            diff = X[:n, None, :3] - self.track.waypoints[None, :, :]
            vals.append(np.broadcast_to((2.0 * w * mu)[:, :, None],
                                        (n, m, 3)).ravel())
            cross = (2.0 * w)[:, :, None] * diff
            vals.append(cross.ravel())
            vals.append(cross.ravel())
            vals.append((-w).ravel())
            vals.append((-w).ravel())

        if self.model.n_input_ineq:
            y_ball = y[off + self.ineq_groups["input_norm"].start:
                       off + self.ineq_groups["input_norm"].stop].reshape(
                           n, self.model.n_input_ineq)
            for e, ecols in enumerate(self.model.input_ineq_columns()):
                vals.append(np.repeat(2.0 * y_ball[:, e], ecols.size))

        if self.fixed_nodes is not None:
            y_fix = y[off + self.ineq_groups["fixed_waypoints"].start:
                      off + self.ineq_groups["fixed_waypoints"].stop]
            vals.append(np.repeat(2.0 * y_fix, 3))

        return np.concatenate(vals)

    def lagrangian_hessian(self, z, y):
        """Constraint curvature sum_r y_r grad^2 c_r as a CSR matrix."""
        from scipy.sparse import coo_matrix

        v = self.lagrangian_hessian_values(z, y)
        n = self.layout.size
        return coo_matrix((v, (self.hess_rows, self.hess_cols)),
                          shape=(n, n)).tocsr()


# ---------------------------------------------------------------------------
# assembly entry points

def assemble(track: Track, model_or_cfg, n_nodes: int, sigma: float = 1.0) -> NlpProblem:
    """Build the progress-constrained time-optimal NLP.

    ``model_or_cfg`` is either a shooting model or a QuadConfig, which is
    wrapped on the fly.  Requires at least two nodes per waypoint.
    """
    model = QuadModel(model_or_cfg) if isinstance(model_or_cfg, QuadConfig) else model_or_cfg
    m = track.n_waypoints
    if n_nodes < 2 * m:
        raise DimensionError(
            f"n_nodes={n_nodes} too small: need >= {2 * m} for {m} waypoints")
    layout = DecisionLayout(n_nodes, m, model.state_dim, model.input_dim,
                            with_progress=True)
    return NlpProblem(layout, model, track, sigma=sigma)


def assemble_fixed_allocation(track: Track, model_or_cfg, n_nodes: int,
                              nodes, tol=None) -> NlpProblem:
    """Baseline problem with each waypoint pinned to a chosen node.

    ``nodes`` lists one strictly increasing node index per waypoint;
    ``tol`` is a per-waypoint passage tolerance (defaults to the track's).
    """
    model = QuadModel(model_or_cfg) if isinstance(model_or_cfg, QuadConfig) else model_or_cfg
    m = track.n_waypoints
    nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
    if nodes.shape != (m,):
        raise DimensionError("need one node index per waypoint")
    if np.any(nodes < 1) or np.any(nodes > n_nodes) or (
            m > 1 and np.any(np.diff(nodes) <= 0)):
        raise DimensionError("nodes must be strictly increasing within [1, N]")
    if tol is None:
        tol = np.full(m, track.d_tol)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (m,)).copy()
    layout = DecisionLayout(n_nodes, m, model.state_dim, model.input_dim,
                            with_progress=False)
    return NlpProblem(layout, model, track, sigma=0.0, fixed_nodes=nodes,
                      fixed_tol=tol)


# ---------------------------------------------------------------------------
# solutions

@dataclass
class Trajectory:
    """Solution unpacked onto the shooting grid."""

    times: np.ndarray
    states: np.ndarray            # (N+1, state_dim)
    inputs: np.ndarray            # (N, input_dim)
    total_time: float
    progress: np.ndarray | None = None   # lam, (N+1, M)
    mu: np.ndarray | None = None         # (N, M)
    nu: np.ndarray | None = None         # (N, M)

    @property
    def n_nodes(self) -> int:
        return self.inputs.shape[0]

    def quad_states(self) -> list[QuadState]:
        if self.states.shape[1] != 13:
            raise DimensionError("not a quadrotor trajectory")
        return [QuadState.from_vector(x) for x in self.states]

    def switch_nodes(self) -> np.ndarray:
        """Node of the largest progress decrement, per waypoint."""
        if self.mu is None:
            raise DimensionError("trajectory has no progress variables")
        return np.argmax(self.mu, axis=0)


def extract_trajectory(z, layout: DecisionLayout) -> Trajectory:
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.size,):
        raise DimensionError(
            f"decision vector has shape {z.shape}, expected ({layout.size},)")
    t = float(z[layout.t_index])
    times = t / layout.n_nodes * np.arange(layout.n_nodes + 1)
    kw = {}
    if layout.with_progress:
        kw = dict(progress=z[layout.lam_idx].copy(), mu=z[layout.mu_idx].copy(),
                  nu=z[layout.nu_idx].copy())
    return Trajectory(times=times, states=z[layout.x_idx].copy(),
                      inputs=z[layout.u_idx].copy(), total_time=t, **kw)


def pack_decision(traj: Trajectory, layout: DecisionLayout) -> np.ndarray:
    """Inverse of :func:`extract_trajectory`."""
    z = np.zeros(layout.size)
    z[layout.t_index] = traj.total_time
    z[layout.x_idx] = traj.states
    z[layout.u_idx] = traj.inputs
    if layout.with_progress:
        if traj.progress is None:
            raise DimensionError("layout expects progress variables")
        z[layout.lam_idx] = traj.progress
        z[layout.mu_idx] = traj.mu
        z[layout.nu_idx] = traj.nu
    return z


# ---------------------------------------------------------------------------
# independent replay

@dataclass
class ReplayReport:
    max_position_divergence: float
    waypoint_min_distance: np.ndarray | None
    thrust_violation: float
    body_rate_violation: float
    waypoints_ok: bool
    bounds_ok: bool

    @property
    def passed(self) -> bool:
        return self.waypoints_ok and self.bounds_ok


def replay_check(traj: Trajectory, cfg: QuadConfig, oversample: int = 10,
                 track: Track | None = None, waypoint_slack: float = 0.05,
                 bound_slack: float = 1e-6) -> ReplayReport:
    """Re-integrate the solved inputs and compare against the shooting states.

    Inputs are held constant over each interval and integrated with RK4 at
    dt / oversample from the first state.  Divergence is the worst position
    gap at the shooting nodes; waypoint distances are measured over every
    substep.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    if traj.states.shape[1] != 13:
        raise DimensionError("replay_check expects a quadrotor trajectory")
    n = traj.n_nodes
    dt = traj.total_time / n / oversample
    state = QuadState.from_vector(traj.states[0])
    positions = [state.position.copy()]
    rates = [state.body_rate.copy()]
    divergence = 0.0
    for k in range(n):
        u = traj.inputs[k]
        for _ in range(oversample):
            state = rk4_step(state, u, dt, cfg)
            positions.append(state.position.copy())
            rates.append(state.body_rate.copy())
        gap = np.linalg.norm(state.position - traj.states[k + 1, :3])
        divergence = max(divergence, float(gap))

    positions = np.asarray(positions)
    rates = np.asarray(rates)
    thrust_viol = max(0.0, float(np.max(traj.inputs) - cfg.thrust_max),
                      float(cfg.thrust_min - np.min(traj.inputs)))
    rate_viol = max(0.0, float(np.max(np.abs(rates)) - cfg.omega_max))

    wp_min = None
    wp_ok = True
    if track is not None:
        d = np.linalg.norm(positions[:, None, :] - track.waypoints[None], axis=2)
        wp_min = d.min(axis=0)
        wp_ok = bool(np.all(wp_min <= track.d_tol + waypoint_slack))
    return ReplayReport(
        max_position_divergence=divergence,
        waypoint_min_distance=wp_min,
        thrust_violation=thrust_viol,
        body_rate_violation=rate_viol,
        waypoints_ok=wp_ok,
        bounds_ok=(thrust_viol <= bound_slack and rate_viol <= bound_slack),
    )
