"""Quadrotor rigid-body model: configuration, dynamics, rotor mixing, integrators.

State convention (13 entries): position p (3), unit quaternion q (4,
scalar first, Hamilton convention), world-frame velocity v (3), body
rate w (3).  Inputs are the four rotor thrusts in newtons.  Gravity acts
along world -z.  The rotation matrix is used in its raw polynomial form
(no normalization by |q|^2); unit norm is maintained explicitly, either
by renormalizing after an integration step or by a norm constraint in
the transcription.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

GRAVITY = 9.81

# state vector slices
P_SLC = slice(0, 3)
Q_SLC = slice(3, 7)
V_SLC = slice(7, 10)
W_SLC = slice(10, 13)

STATE_DIM = 13
INPUT_DIM = 4


@dataclass(frozen=True)
class QuadConfig:
    """Physical parameters of one quadrotor.

    ``inertia_diag`` is the diagonal of the inertia matrix in kg m^2.
    ``v_max`` enables the linear drag model; ``None`` disables drag.
    """

    mass: float
    arm_length: float
    inertia_diag: tuple[float, float, float]
    thrust_min: float
    thrust_max: float
    torque_constant: float
    omega_max: float
    v_max: float | None = None
    gravity: float = GRAVITY
    name: str = ""

    def __post_init__(self):
        if self.mass <= 0 or self.arm_length <= 0:
            raise ConfigError("mass and arm_length must be positive")
        if any(j <= 0 for j in self.inertia_diag):
            raise ConfigError("inertia entries must be positive")
        if not 0 <= self.thrust_min < self.thrust_max:
            raise ConfigError("need 0 <= thrust_min < thrust_max")
        if 4.0 * self.thrust_max <= self.mass * self.gravity:
            raise ConfigError(
                f"hover infeasible: 4*T_max = {4*self.thrust_max:.3f} N <= "
                f"weight {self.mass*self.gravity:.3f} N"
            )
        if self.v_max is not None and self.v_max <= 0:
            raise ConfigError("v_max must be positive when given")

    @property
    def drag_enabled(self) -> bool:
        return self.v_max is not None


@dataclass
class QuadState:
    """Rigid-body state; quaternion scalar-first."""

    position: np.ndarray
    orientation: np.ndarray
    velocity: np.ndarray
    body_rate: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.body_rate = np.asarray(self.body_rate, dtype=float)

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(np.asarray(position, dtype=float), np.array([1.0, 0, 0, 0]),
                   np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have shape (13,), got {x.shape}")
        return cls(x[P_SLC].copy(), x[Q_SLC].copy(), x[V_SLC].copy(), x[W_SLC].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation,
                               self.velocity, self.body_rate])

    def normalized(self) -> "QuadState":
        q = self.orientation / np.linalg.norm(self.orientation)
        return QuadState(self.position.copy(), q, self.velocity.copy(),
                         self.body_rate.copy())


# ---------------------------------------------------------------------------
# quaternion algebra (scalar-first Hamilton convention)

def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_to_matrix(q):
    """3x3 rotation matrix of a unit quaternion (raw polynomial form)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotate_vector(q, v):
    """Apply R(q) to v, i.e. q (x) [0; v] (x) q*."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0, 0, 0])
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) / n * axis])


def quat_slerp(a, b, t):
    """Spherical interpolation from a to b along the shorter arc."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b, dot = -b, -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = math.acos(min(1.0, dot))
    sa = math.sin((1.0 - t) * theta) / math.sin(theta)
    sb = math.sin(t * theta) / math.sin(theta)
    return quat_normalize(sa * a + sb * b)


# ---------------------------------------------------------------------------
# rotor mixing and drag

def input_to_wrench(u, cfg: QuadConfig):
    """Collective thrust (N) and body torque (N m) produced by rotor thrusts."""
    t1, t2, t3, t4 = np.asarray(u, dtype=float)
    k = cfg.arm_length / math.sqrt(2.0)
    collective = t1 + t2 + t3 + t4
    torque = np.array([
        k * (t1 + t2 - t3 - t4),
        k * (-t1 + t2 + t3 - t4),
        cfg.torque_constant * (t1 - t2 + t3 - t4),
    ])
    return collective, torque


def drag_coefficient(cfg: QuadConfig) -> float:
    """Linear drag coefficient that cancels full thrust at v_max in level flight.

    Zero when the config has no v_max (drag disabled).
    """
    if cfg.v_max is None:
        return 0.0
    a_full = 4.0 * cfg.thrust_max / cfg.mass
    radicand = a_full**2 - cfg.gravity**2
    if radicand <= 0.0:
        raise ConfigError("thrust too weak for the steady-state drag model")
    return math.sqrt(radicand) / cfg.v_max


def hover_thrusts(cfg: QuadConfig) -> np.ndarray:
    """Equal rotor thrusts balancing gravity, clamped into the thrust box."""
    per_rotor = cfg.mass * cfg.gravity / 4.0
    if per_rotor > cfg.thrust_max:
        raise ConfigError("hover thrust exceeds thrust_max")
    return np.full(4, min(max(per_rotor, cfg.thrust_min), cfg.thrust_max))


# ---------------------------------------------------------------------------
# dynamics
#
# The component form below works uniformly on floats, numpy arrays batched
# over nodes, and ad.Dual values; it is the single source of truth for both
# replay integration and the transcription Jacobians.

def derivative_parts(x, u, cfg: QuadConfig, c_d: float):
    px, py, pz, qw, qx, qy, qz, vx, vy, vz, wx, wy, wz = x
    t1, t2, t3, t4 = u

    m = cfg.mass
    jx, jy, jz = cfg.inertia_diag
    k = cfg.arm_length / math.sqrt(2.0)
    ct = cfg.torque_constant

    thrust = (t1 + t2 + t3 + t4) * (1.0 / m)
    tau_x = k * (t1 + t2 - t3 - t4)
    tau_y = k * (-t1 + t2 + t3 - t4)
    tau_z = ct * (t1 - t2 + t3 - t4)

    dqw = 0.5 * (-qx * wx - qy * wy - qz * wz)
    dqx = 0.5 * (qw * wx + qy * wz - qz * wy)
    dqy = 0.5 * (qw * wy - qx * wz + qz * wx)
    dqz = 0.5 * (qw * wz + qx * wy - qy * wx)

    # body z axis in world coordinates times thrust acceleration
    dvx = 2.0 * (qx * qz + qw * qy) * thrust
    dvy = 2.0 * (qy * qz - qw * qx) * thrust
    dvz = (1.0 - 2.0 * (qx * qx + qy * qy)) * thrust - cfg.gravity
    if c_d != 0.0:
        dvx = dvx - c_d * vx
        dvy = dvy - c_d * vy
        dvz = dvz - c_d * vz

    dwx = (tau_x - (jz - jy) * wy * wz) * (1.0 / jx)
    dwy = (tau_y - (jx - jz) * wz * wx) * (1.0 / jy)
    dwz = (tau_z - (jy - jx) * wx * wy) * (1.0 / jz)

    return [vx, vy, vz, dqw, dqx, dqy, dqz, dvx, dvy, dvz, dwx, dwy, dwz]


def rk4_parts(f, x, u, dt):
    """Classical RK4 slope 1/6 (k1 + 2 k2 + 2 k3 + k4), component form.

    ``dt`` may itself carry derivatives (a Dual) so that free-final-time
    transcriptions differentiate through the step size.
    """
    k1 = f(x, u)
    half = 0.5 * dt if not hasattr(dt, "val") else dt * 0.5
    x2 = [xi + half * ki for xi, ki in zip(x, k1)]
    k2 = f(x2, u)
    x3 = [xi + half * ki for xi, ki in zip(x, k2)]
    k3 = f(x3, u)
    x4 = [xi + dt * ki for xi, ki in zip(x, k3)]
    k4 = f(x4, u)
    w = 1.0 / 6.0
    return [(a + 2.0 * b + 2.0 * c + d) * w for a, b, c, d in zip(k1, k2, k3, k4)]


def state_derivative(state: QuadState, u, cfg: QuadConfig) -> np.ndarray:
    """Time derivative of the 13-entry state vector."""
    x = state.as_vector()
    c_d = drag_coefficient(cfg)
    return np.array(derivative_parts(list(x), list(np.asarray(u, dtype=float)),
                                     cfg, c_d))


def rk4_step(state: QuadState, u, dt: float, cfg: QuadConfig) -> QuadState:
    """One explicit RK4 step; the quaternion is renormalized afterwards."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = list(state.as_vector())
    u = list(np.asarray(u, dtype=float))
    c_d = drag_coefficient(cfg)
    slope = rk4_parts(lambda xs, us: derivative_parts(xs, us, cfg, c_d), x, u, dt)
    nxt = np.array([xi + dt * si for xi, si in zip(x, slope)])
    nxt[Q_SLC] /= np.linalg.norm(nxt[Q_SLC])
    return QuadState.from_vector(nxt)


# ---------------------------------------------------------------------------
# shooting-model adapter used by the transcription

@dataclass(frozen=True)
class QuadModel:
    """Quadrotor as a generic shooting model (13 states, 4 thrust inputs)."""

    cfg: QuadConfig
    c_d: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "c_d", drag_coefficient(self.cfg))

    state_dim = STATE_DIM
    input_dim = INPUT_DIM
    position_slice = P_SLC
    # one extra equality per node: quaternion norm
    n_node_eq = 1
    n_input_ineq = 0

    def derivative(self, x_parts, u_parts):
        return derivative_parts(x_parts, u_parts, self.cfg, self.c_d)

    def state_dependency(self) -> np.ndarray:
        """Boolean mask D[i, j]: does xdot_i depend on state x_j."""
        d = np.zeros((13, 13), dtype=bool)
        d[0:3, 7:10] = np.eye(3, dtype=bool)          # pdot = v
        d[3:7, 3:7] = True                             # qdot ~ q, w
        d[3:7, 10:13] = True
        d[7:10, 3:7] = True                            # vdot ~ q (thrust tilt)
        if self.c_d != 0.0:
            d[7:10, 7:10] = np.eye(3, dtype=bool)      # drag
        d[10:13, 10:13] = True                         # gyroscopic term
        return d

    def input_dependency(self) -> np.ndarray:
        d = np.zeros((13, 4), dtype=bool)
        d[7:10, :] = True                              # thrust
        d[10:13, :] = True                             # torques
        return d

    def state_bounds(self):
        lb = np.full(13, -np.inf)
        ub = np.full(13, np.inf)
        lb[W_SLC] = -self.cfg.omega_max
        ub[W_SLC] = self.cfg.omega_max
        return lb, ub

    def input_bounds(self):
        return (np.full(4, self.cfg.thrust_min), np.full(4, self.cfg.thrust_max))

    def node_eq_parts(self, x_parts):
        """Per-node equality residuals (quaternion unit norm)."""
        qw, qx, qy, qz = x_parts[3:7]
        return [qw * qw + qx * qx + qy * qy + qz * qz - 1.0]

    def node_eq_columns(self):
        return [np.arange(3, 7)]

    def node_eq_jac(self, x_parts):
        return [2.0 * np.stack(x_parts[3:7], axis=-1)]

    def input_ineq_parts(self, u_parts):
        return []

    def input_ineq_columns(self):
        return []

    def input_ineq_jac(self, u_parts):
        return []

    def char_accel(self) -> float:
        """Characteristic thrust acceleration, used only for scaling."""
        return 4.0 * self.cfg.thrust_max / self.cfg.mass

    def state_scale(self, s_p: float, s_v: float) -> np.ndarray:
        return np.concatenate([np.full(3, s_p), np.ones(4), np.full(3, s_v),
                               np.full(3, self.cfg.omega_max)])

    def input_scale(self) -> np.ndarray:
        return np.full(4, self.cfg.thrust_max)

    def hover_input(self) -> np.ndarray:
        return hover_thrusts(self.cfg)

    def initial_state(self, state: QuadState) -> np.ndarray:
        return state.normalized().as_vector()

    def terminal_rest_rows(self):
        """State indices pinned to zero by a hover end constraint.

        Velocity, body rate, and the quaternion vector part; together with
        the unit-norm constraint the latter forces q = +/- identity.
        """
        return np.r_[7:13, 4:7]
