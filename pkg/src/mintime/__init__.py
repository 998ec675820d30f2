"""Time-optimal quadrotor trajectories through ordered waypoint sequences."""

from .errors import (ConfigError, DimensionError, MintimeError, ParseError,
                     ValidationError)
from .quad import (QuadConfig, QuadModel, QuadState, drag_coefficient,
                   hover_thrusts, input_to_wrench, quat_multiply, rk4_step,
                   rotate_vector, state_derivative)
from .pointmass import (PointMassConfig, PointMassModel, bangbang_1d,
                        orientation_guess_from_accel, pointmass_problem)
from .transcription import (DecisionLayout, NlpProblem, ReplayReport, Terminal,
                            Track, Trajectory, assemble,
                            assemble_fixed_allocation, extract_trajectory,
                            pack_decision, replay_check)
from .derivatives import (SparseJacobian, constraint_jacobian, cost_gradient,
                          fd_check)

__version__ = "0.1.0"
