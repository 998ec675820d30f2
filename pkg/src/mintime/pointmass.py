"""Point-mass companions to the quadrotor planner.

A double integrator with a norm-bounded acceleration input admits
closed-form rest-to-rest solutions (bang-bang), serves as an analytic
oracle and lower bound for the full vehicle, and - transcribed through
the same progress-constrained problem - as a convex-dynamics warm start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .quad import QuadConfig, quat_from_axis_angle

__all__ = [
    "PointMassConfig",
    "PointMassModel",
    "bangbang_1d",
    "pointmass_problem",
    "orientation_guess_from_accel",
]


@dataclass(frozen=True)
class PointMassConfig:
    """Bounded-acceleration point mass.

    ``a_max`` bounds the Euclidean norm of the acceleration input.  When
    ``include_gravity_margin`` is set the bound is the net envelope
    4 T_max / m + g (every acceleration the quadrotor can reach), which
    makes the point-mass time a lower bound on the vehicle time; without
    it the bound is the thrust-only 4 T_max / m used for warm starts.
    """

    a_max: float
    include_gravity_margin: bool = False

    def __post_init__(self):
        if self.a_max <= 0:
            raise ConfigError("a_max must be positive")

    @classmethod
    def from_quad(cls, cfg: QuadConfig, include_gravity_margin: bool = False):
        a = 4.0 * cfg.thrust_max / cfg.mass
        if include_gravity_margin:
            a += cfg.gravity
        return cls(a_max=a, include_gravity_margin=include_gravity_margin)


def bangbang_1d(distance: float, a_max: float) -> tuple[float, float]:
    """Rest-to-rest minimal time over ``distance``: accelerate half, brake half.

    Returns (total time, switching time); the switch sits at the midpoint.
    """
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    if a_max <= 0:
        raise ValueError("a_max must be positive")
    t_opt = 2.0 * math.sqrt(distance / a_max)
    return t_opt, 0.5 * t_opt


@dataclass(frozen=True)
class PointMassModel:
    """Double integrator as a shooting model (6 states, 3 accel inputs)."""

    pm_cfg: PointMassConfig

    state_dim = 6
    input_dim = 3
    position_slice = slice(0, 3)
    n_node_eq = 0
    n_input_ineq = 1

    def derivative(self, x_parts, u_parts):
        vx, vy, vz = x_parts[3:6]
        ax, ay, az = u_parts
        return [vx, vy, vz, ax, ay, az]

    def state_dependency(self) -> np.ndarray:
        d = np.zeros((6, 6), dtype=bool)
        d[0:3, 3:6] = np.eye(3, dtype=bool)
        return d

    def input_dependency(self) -> np.ndarray:
        d = np.zeros((6, 3), dtype=bool)
        d[3:6, :] = np.eye(3, dtype=bool)
        return d

    def state_bounds(self):
        return np.full(6, -np.inf), np.full(6, np.inf)

    def input_bounds(self):
        # the acceleration ball is a nonlinear inequality, not a box
        return np.full(3, -np.inf), np.full(3, np.inf)

    def node_eq_parts(self, x_parts):
        return []

    def node_eq_columns(self):
        return []

    def node_eq_jac(self, x_parts):
        return []

    def input_ineq_parts(self, u_parts):
        ax, ay, az = u_parts
        return [ax * ax + ay * ay + az * az - self.pm_cfg.a_max**2]

    def input_ineq_columns(self):
        return [np.arange(0, 3)]

    def input_ineq_jac(self, u_parts):
        return [2.0 * np.stack(u_parts, axis=-1)]

    def char_accel(self) -> float:
        return self.pm_cfg.a_max

    def state_scale(self, s_p: float, s_v: float) -> np.ndarray:
        return np.concatenate([np.full(3, s_p), np.full(3, s_v)])

    def input_scale(self) -> np.ndarray:
        return np.full(3, self.pm_cfg.a_max)

    def hover_input(self) -> np.ndarray:
        return np.zeros(3)

    def initial_state(self, state) -> np.ndarray:
        return np.concatenate([state.position, state.velocity])

    def terminal_rest_rows(self):
        return np.arange(3, 6)


def pointmass_problem(track, pm_cfg: PointMassConfig, n_nodes: int):
    """Progress-constrained transcription of the point-mass planning problem.

    Same decision layout and constraint family as the quadrotor problem,
    instantiated with double-integrator dynamics and the acceleration ball.
    """
    from .transcription import assemble

    return assemble(track, PointMassModel(pm_cfg), n_nodes)


def orientation_guess_from_accel(accel_profile, cfg: QuadConfig) -> np.ndarray:
    """Quaternions tilting body z toward the thrust each acceleration demands.

    The thrust must supply gravity compensation plus the commanded
    acceleration, so body z is aligned with a - g per node via the minimal
    rotation from world z; yaw is left at zero.  Near-zero thrust demand
    returns identity; the antipodal case picks a 180 degree roll.
    """
    accel = np.atleast_2d(np.asarray(accel_profile, dtype=float))
    if accel.shape[0] == 0:
        raise ValueError("accel_profile must be non-empty")
    g_vec = np.array([0.0, 0.0, -cfg.gravity])
    quats = np.empty((accel.shape[0], 4))
    for i, a in enumerate(accel):
        thrust = a - g_vec
        norm = np.linalg.norm(thrust)
        if norm < 1e-9:
            quats[i] = (1.0, 0.0, 0.0, 0.0)
            continue
        t = thrust / norm
        cos_ang = np.clip(t[2], -1.0, 1.0)
        axis = np.array([-t[1], t[0], 0.0])  # e_z x t
        if np.linalg.norm(axis) < 1e-12:
            if cos_ang > 0:
                quats[i] = (1.0, 0.0, 0.0, 0.0)
            else:
                quats[i] = (0.0, 1.0, 0.0, 0.0)  # flipped: 180 deg about x
            continue
        quats[i] = quat_from_axis_angle(axis, math.acos(cos_ang))
    return quats
