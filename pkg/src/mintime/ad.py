"""Forward-mode automatic differentiation via operator-propagated dual values.

A :class:`Dual` carries a value array of shape ``S`` together with a
derivative array of shape ``S + (nd,)`` holding directional derivatives
along ``nd`` seed directions.  Arithmetic is overloaded so that ordinary
numpy expressions propagate both parts, batched over ``S``.  Seeding one
direction per independent variable of a small block (one shooting node,
say) and batching ``S`` over all nodes yields every block Jacobian of a
transcription in a handful of vectorized sweeps.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "Dual2", "seed", "seed2", "value", "jacobian_stack",
           "hessian_stack"]


def _expand(x):
    # align a value-shaped operand against the trailing derivative axis
    if isinstance(x, np.ndarray):
        return x[..., None]
    return x


class Dual:
    """Dual number batched over leading array axes."""

    __slots__ = ("val", "dot")

    def __init__(self, val, dot):
        self.val = val
        self.dot = dot

    @property
    def nd(self) -> int:
        return self.dot.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, nd={self.nd})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.dot * _expand(other.val) + _expand(self.val) * other.dot,
            )
        return Dual(self.val * other, self.dot * _expand(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.dot - _expand(val) * other.dot) * _expand(inv))
        return Dual(self.val / other, self.dot / _expand(other))

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -_expand(val * inv) * self.dot)

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only constant exponents are supported")
        return Dual(self.val**n, n * _expand(self.val ** (n - 1)) * self.dot)

    def sqrt(self):
        root = np.sqrt(self.val)
        return Dual(root, self.dot / _expand(2.0 * root))


def seed(val, direction: int, nd: int) -> Dual:
    """Wrap ``val`` as a Dual with unit seed along ``direction`` of ``nd``."""
    val = np.asarray(val, dtype=float)
    dot = np.zeros(val.shape + (nd,))
    dot[..., direction] = 1.0
    return Dual(val, dot)


class Dual2:
    """Second-order dual number: value, gradient, and Hessian parts.

    ``val`` has shape S, ``dot`` S + (nd,), ``ddot`` S + (nd, nd) symmetric.
    Only the operations needed by polynomial dynamics are implemented.
    """

    __slots__ = ("val", "dot", "ddot")

    def __init__(self, val, dot, ddot):
        self.val = val
        self.dot = dot
        self.ddot = ddot

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val + other.val, self.dot + other.dot,
                         self.ddot + other.ddot)
        return Dual2(self.val + other, self.dot, self.ddot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val - other.val, self.dot - other.dot,
                         self.ddot - other.ddot)
        return Dual2(self.val - other, self.dot, self.ddot)

    def __rsub__(self, other):
        return Dual2(other - self.val, -self.dot, -self.ddot)

    def __mul__(self, other):
        if isinstance(other, Dual2):
            cross = (self.dot[..., :, None] * other.dot[..., None, :])
            return Dual2(
                self.val * other.val,
                self.dot * _expand(other.val) + _expand(self.val) * other.dot,
                self.ddot * _expand2(other.val) + _expand2(self.val) * other.ddot
                + cross + np.swapaxes(cross, -1, -2),
            )
        return Dual2(self.val * other, self.dot * _expand(other),
                     self.ddot * _expand2(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            raise TypeError("division by a Dual2 is not supported")
        return Dual2(self.val / other, self.dot / _expand(other),
                     self.ddot / _expand2(other))

    def __neg__(self):
        return Dual2(-self.val, -self.dot, -self.ddot)


def _expand2(x):
    if isinstance(x, np.ndarray):
        return x[..., None, None]
    return x


def seed2(val, direction: int, nd: int) -> Dual2:
    """Wrap ``val`` as a Dual2 with unit seed along ``direction`` of ``nd``."""
    val = np.asarray(val, dtype=float)
    dot = np.zeros(val.shape + (nd,))
    dot[..., direction] = 1.0
    return Dual2(val, dot, np.zeros(val.shape + (nd, nd)))


def value(x):
    """Value part of ``x`` whether it is a Dual or a plain array/scalar."""
    return x.val if isinstance(x, Dual) else x


def hessian_stack(outputs, nd: int):
    """Stack per-output Hessian parts of Dual2 outputs into (n, m, nd, nd)."""
    n = None
    for out in outputs:
        if isinstance(out, Dual2):
            n = np.asarray(out.val).shape[0]
            break
    if n is None:
        raise ValueError("at least one output must be a Dual2")
    ddots = []
    for out in outputs:
        if isinstance(out, Dual2):
            ddots.append(np.broadcast_to(out.ddot, (n, nd, nd)))
        else:
            ddots.append(np.zeros((n, nd, nd)))
    return np.stack(ddots, axis=1)


def jacobian_stack(outputs, nd: int):
    """Stack a sequence of scalar-batched outputs into value and Jacobian arrays.

    ``outputs`` holds m entries, each a Dual (or constant) with value shape
    ``(n,)``.  Returns ``vals`` of shape ``(n, m)`` and ``jac`` of shape
    ``(n, m, nd)``; constants contribute zero derivative rows.
    """
    vals = []
    dots = []
    n = None
    for out in outputs:
        if isinstance(out, Dual):
            n = np.asarray(out.val).shape[0]
            break
    if n is None:
        raise ValueError("at least one output must be a Dual")
    for out in outputs:
        if isinstance(out, Dual):
            vals.append(np.broadcast_to(out.val, (n,)))
            dots.append(np.broadcast_to(out.dot, (n, nd)))
        else:
            vals.append(np.broadcast_to(np.asarray(out, dtype=float), (n,)))
            dots.append(np.zeros((n, nd)))
    return np.stack(vals, axis=1), np.stack(dots, axis=1)
