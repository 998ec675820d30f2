"""First derivatives of the assembled problem, plus a finite-difference check.

The Jacobian values come from the problem's forward-mode evaluation; this
module wraps them in an explicit triplet structure and provides the
independent central-difference validator used by the test suite and the
``check-gradients`` command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .transcription import NlpProblem

__all__ = ["SparseJacobian", "constraint_jacobian", "cost_gradient", "fd_check"]


@dataclass
class SparseJacobian:
    """Triplet Jacobian with a pattern fixed across evaluations."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def to_csr(self):
        from scipy.sparse import coo_matrix

        return coo_matrix((self.values, (self.rows, self.cols)),
                          shape=(self.n_rows, self.n_cols)).tocsr()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        np.add.at(out, (self.rows, self.cols), self.values)
        return out


def constraint_jacobian(problem: NlpProblem, z) -> SparseJacobian:
    """Exact Jacobian of the stacked (equality; inequality) residuals."""
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.layout.size,):
        raise DimensionError(
            f"decision vector has shape {z.shape}, expected ({problem.layout.size},)")
    return SparseJacobian(
        n_rows=problem.n_eq + problem.n_ineq,
        n_cols=problem.layout.size,
        rows=problem.jac_rows,
        cols=problem.jac_cols,
        values=problem.jacobian_values(z),
    )


def cost_gradient(problem: NlpProblem, z) -> np.ndarray:
    """Gradient of the total-time objective: a unit at the t entry.

    The time also enters the dynamics through dt = t/N; that coupling
    lives in the constraint Jacobian, not here.
    """
    g = np.zeros(problem.layout.size)
    g[problem.layout.t_index] = 1.0
    return g


def fd_check(problem: NlpProblem, z, eps: float = 1e-6, max_cols: int | None = None,
             seed: int = 0) -> float:
    """Worst relative mismatch between the Jacobian and central differences.

    Differences are taken column by column; when ``max_cols`` is given, a
    deterministic sample of columns is checked (the total-time column is
    always included since every dynamics row depends on it).
    """
    if not 1e-9 <= eps <= 1e-4:
        raise ValueError("eps out of the supported range [1e-9, 1e-4]")
    z = np.asarray(z, dtype=float)
    jac = constraint_jacobian(problem, z).to_csr().tocsc()

    n = problem.layout.size
    if max_cols is None or max_cols >= n:
        cols = np.arange(n)
    else:
        rng = np.random.default_rng(seed)
        cols = rng.choice(np.arange(1, n), size=max_cols - 1, replace=False)
        cols = np.unique(np.concatenate([[problem.layout.t_index], cols]))

    worst = 0.0
    for c in cols:
        step = eps * max(1.0, abs(z[c]))
        zp = z.copy()
        zp[c] += step
        zm = z.copy()
        zm[c] -= step
        fd = (problem.residual(zp) - problem.residual(zm)) / (2.0 * step)
        col = np.asarray(jac[:, c].todense()).ravel()
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(col)))
        worst = max(worst, float(np.max(np.abs(fd - col) / denom)))
    return worst
