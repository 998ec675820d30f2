"""Initial guesses for the transcribed problem.

The default guess follows the standard recipe: identity orientation,
zero body rates, 1 m/s speed along the piecewise-linear path through the
waypoints, hover thrusts, total time = path length / 1 m/s, and progress
switch nodes spread evenly over the horizon.  The point-mass variant
replaces the kinematic fields with a converged point-mass solution and
tilts the orientation toward its acceleration demand; rotational fields
remain approximate, which is fine for a warm start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SolveError
from .pointmass import PointMassConfig, PointMassModel, orientation_guess_from_accel
from .quad import QuadConfig, QuadModel, QuadState, quat_from_axis_angle, quat_multiply, quat_slerp
from .solver import SolverConfig, homotopy_solve
from .transcription import (NlpProblem, T_MIN, Track, assemble,
                            extract_trajectory)

__all__ = ["InitialGuess", "default_guess", "custom_orientation_guess",
           "pointmass_guess", "switch_nodes"]


@dataclass
class InitialGuess:
    """Decision vector plus provenance, bound-clamped and quat-normalized."""

    z0: np.ndarray
    description: str
    switch_nodes: np.ndarray


def switch_nodes(n_nodes: int, n_waypoints: int) -> np.ndarray:
    """Evenly distributed progress switch nodes; the last sits at node N."""
    j = np.arange(1, n_waypoints + 1)
    return np.rint(n_nodes * j / n_waypoints).astype(int)


def _as_problem(track, model_or_cfg, n_nodes, problem):
    if problem is not None:
        return problem
    model = QuadModel(model_or_cfg) if isinstance(model_or_cfg, QuadConfig) else model_or_cfg
    return assemble(track, model, n_nodes)


def _clamp(problem: NlpProblem, z: np.ndarray) -> np.ndarray:
    z = np.minimum(np.maximum(z, problem.lb), problem.ub)
    if problem.layout.state_dim == 13:
        q = z[problem.layout.x_idx[:, 3:7]]
        z[problem.layout.x_idx[:, 3:7]] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return z


def _path_interpolation(track: Track, n_nodes: int):
    """Positions and unit tangents at nodes, arc-length parameterized."""
    pts = track.path_points()
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s_nodes = np.linspace(0.0, total, n_nodes + 1)
    pos = np.stack([np.interp(s_nodes, cum, pts[:, i]) for i in range(3)], axis=1)
    tangents = np.zeros((n_nodes + 1, 3))
    if total > 0:
        unit = np.where(seg_len[:, None] > 0, seg / np.maximum(seg_len, 1e-300)[:, None], 0.0)
        idx = np.clip(np.searchsorted(cum, s_nodes, side="right") - 1, 0, len(seg) - 1)
        tangents = unit[idx]
    return pos, tangents, total


def default_guess(track: Track, model_or_cfg, n_nodes: int,
                  problem: NlpProblem | None = None) -> InitialGuess:
    """Path-interpolated guess at 1 m/s with evenly spread progress."""
    problem = _as_problem(track, model_or_cfg, n_nodes, problem)
    lay = problem.layout
    model = problem.model
    n, m = lay.n_nodes, lay.n_waypoints

    pos, tangents, total = _path_interpolation(track, n)
    speed = 1.0 if total > 0 else 0.0
    t_guess = max(T_MIN, total / 1.0)

    z = np.zeros(lay.size)
    z[lay.t_index] = t_guess
    states = np.zeros((n + 1, lay.state_dim))
    states[:, :3] = pos
    if lay.state_dim == 13:
        states[:, 3] = 1.0                      # identity quaternion
        states[:, 7:10] = speed * tangents
    else:
        states[:, 3:6] = speed * tangents
    z[lay.x_idx] = states
    z[lay.u_idx] = model.hover_input()

    ks = switch_nodes(n, m)
    lam = (np.arange(n + 1)[:, None] < ks[None, :]).astype(float)
    mu = np.zeros((n, m))
    mu[ks - 1, np.arange(m)] = 1.0
    z[lay.lam_idx] = lam
    z[lay.mu_idx] = mu
    z[lay.nu_idx] = 0.5 * track.d_tol**2
    return InitialGuess(z0=_clamp(problem, z), description="default",
                        switch_nodes=ks)


def custom_orientation_guess(base: InitialGuess, per_waypoint_angles,
                             problem: NlpProblem) -> InitialGuess:
    """Replace the orientation columns by keyframe interpolation.

    ``per_waypoint_angles`` lists (axis, angle) pairs, one for the start
    node plus one per waypoint; orientations between keyframes are
    interpolated along the arc, with same-axis keyframes interpolated in
    angle so that multi-turn (flip) guesses keep their winding.
    """
    lay = problem.layout
    if lay.state_dim != 13:
        raise DimensionError("orientation guess needs a quadrotor layout")
    m = lay.n_waypoints
    if len(per_waypoint_angles) != m + 1:
        raise DimensionError(f"need {m + 1} (axis, angle) pairs, got "
                             f"{len(per_waypoint_angles)}")
    key_nodes = np.concatenate([[0], base.switch_nodes])
    axes = [np.asarray(a, dtype=float) for a, _ in per_waypoint_angles]
    angles = [float(t) for _, t in per_waypoint_angles]
    quats = np.empty((lay.n_nodes + 1, 4))
    quats[0] = quat_from_axis_angle(axes[0], angles[0])
    for i in range(m):
        a, b = key_nodes[i], key_nodes[i + 1]
        qa = quat_from_axis_angle(axes[i], angles[i])
        qb = quat_from_axis_angle(axes[i + 1], angles[i + 1])
        same_axis = (np.linalg.norm(np.cross(axes[i], axes[i + 1])) < 1e-12
                     and np.dot(axes[i], axes[i + 1]) >= 0)
        for k in range(a, b + 1):
            t = (k - a) / max(b - a, 1)
            if same_axis:
                ang = (1 - t) * angles[i] + t * angles[i + 1]
                quats[k] = quat_from_axis_angle(axes[i + 1], ang)
            else:
                quats[k] = quat_slerp(qa, qb, t)
    z = base.z0.copy()
    z[lay.x_idx[:, 3:7]] = quats
    return InitialGuess(z0=_clamp(problem, z), description="custom",
                        switch_nodes=base.switch_nodes)


def pointmass_guess(track: Track, cfg: QuadConfig, n_nodes: int,
                    problem: NlpProblem | None = None,
                    solver_config: SolverConfig | None = None,
                    a_max: float | None = None) -> InitialGuess:
    """Warm start from a converged point-mass solve of the same track.

    Positions, velocities, total time, and progress come straight from
    the point-mass solution; orientations tilt toward its acceleration
    demand, body rates follow by finite differences, thrusts start at
    hover.
    """
    problem = _as_problem(track, cfg, n_nodes, problem)
    lay = problem.layout
    n, m = lay.n_nodes, lay.n_waypoints

    pm_cfg = PointMassConfig.from_quad(cfg) if a_max is None else PointMassConfig(a_max)
    pm_model = PointMassModel(pm_cfg)
    pm_problem = assemble(track, pm_model, n_nodes)
    pm_guess = default_guess(track, pm_model, n_nodes, problem=pm_problem)
    z_pm, report = homotopy_solve(pm_problem, pm_guess.z0, solver_config)
    if not report.converged:
        raise SolveError(f"point-mass warm start failed: {report.status.value}")
    pm_traj = extract_trajectory(z_pm, pm_problem.layout)

    quats = orientation_guess_from_accel(
        np.vstack([pm_traj.inputs, pm_traj.inputs[-1]]), cfg)

    z = np.zeros(lay.size)
    z[lay.t_index] = pm_traj.total_time
    states = np.zeros((n + 1, 13))
    states[:, :3] = pm_traj.states[:, :3]
    states[:, 3:7] = quats
    states[:, 7:10] = pm_traj.states[:, 3:6]
    dt = pm_traj.total_time / n
    for k in range(n):
        dq = quat_multiply(np.array([quats[k][0], -quats[k][1], -quats[k][2],
                                     -quats[k][3]]), quats[k + 1])
        states[k, 10:13] = 2.0 * dq[1:] / dt
    z[lay.x_idx] = states
    z[lay.u_idx] = problem.model.hover_input()
    z[lay.lam_idx] = pm_traj.progress
    z[lay.mu_idx] = pm_traj.mu
    z[lay.nu_idx] = pm_traj.nu
    guess = InitialGuess(z0=_clamp(problem, z), description="pointmass",
                         switch_nodes=pm_traj.switch_nodes())
    guess.pm_report = report
    return guess
