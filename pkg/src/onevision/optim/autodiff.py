"""Forward-mode automatic differentiation with dual numbers.

A Dual carries a float value array together with a batch of directional
derivatives (tangents) stacked along the last axis, so one rollout pass
propagates every direction of interest at once. This is the generic,
dependency-light path; the hot planning kernels implement the same
propagation rules in compiled loops.
"""

from __future__ import annotations

import numpy as np


class Dual:
    """value + tangents pair. `val` has shape S, `dot` has shape S + (D,)."""

    __slots__ = ("val", "dot")

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=np.float64)
        self.dot = np.asarray(dot, dtype=np.float64)
        if self.dot.shape[: self.val.ndim] != self.val.shape:
            raise ValueError(
                f"tangent shape {self.dot.shape} incompatible with value shape {self.val.shape}"
            )

    @property
    def ndirs(self) -> int:
        return self.dot.shape[-1]

    def __getitem__(self, idx) -> "Dual":
        return Dual(self.val[idx], self.dot[idx])

    # tangents broadcast against values with one trailing direction axis
    def _t(self, other):
        if isinstance(other, Dual):
            return other.val, other.dot
        return np.asarray(other, dtype=np.float64), 0.0

    def __add__(self, other):
        ov, od = self._t(other)
        return Dual(self.val + ov, self.dot + od)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        ov, od = self._t(other)
        return Dual(self.val - ov, self.dot - od)

    def __rsub__(self, other):
        ov, od = self._t(other)
        return Dual(ov - self.val, od - self.dot)

    def __mul__(self, other):
        ov, od = self._t(other)
        dot = self.dot * _exp_last(ov)
        if isinstance(other, Dual):
            dot = dot + od * _exp_last(self.val)
        return Dual(self.val * ov, dot)

    __rmul__ = __mul__

    def __truediv__(self, other):
        ov, od = self._t(other)
        val = self.val / ov
        dot = self.dot / _exp_last(ov)
        if isinstance(other, Dual):
            dot = dot - od * _exp_last(self.val / (ov * ov))
        return Dual(val, dot)

    def __rtruediv__(self, other):
        ov, _ = self._t(other)
        val = ov / self.val
        dot = -self.dot * _exp_last(ov / (self.val * self.val))
        return Dual(val, dot)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar powers are supported")
        return Dual(self.val**p, p * _exp_last(self.val ** (p - 1)) * self.dot)

    # comparisons act on values so control flow works transparently
    def __lt__(self, other):
        return self.val < self._t(other)[0]

    def __le__(self, other):
        return self.val <= self._t(other)[0]

    def __gt__(self, other):
        return self.val > self._t(other)[0]

    def __ge__(self, other):
        return self.val >= self._t(other)[0]

    def sum(self):
        axes = tuple(range(self.val.ndim))
        return Dual(self.val.sum(), self.dot.sum(axis=axes) if axes else self.dot)

    def __repr__(self):
        return f"Dual(val={self.val!r}, ndirs={self.dot.shape[-1] if self.dot.ndim else 0})"


def _exp_last(a):
    """Append a trailing axis so values broadcast against tangents."""
    a = np.asarray(a)
    return a[..., None] if a.ndim else a


def _lift(f_val, f_deriv):
    def op(x):
        if isinstance(x, Dual):
            return Dual(f_val(x.val), _exp_last(f_deriv(x.val)) * x.dot)
        return f_val(x)

    return op


sin = _lift(np.sin, np.cos)
cos = _lift(np.cos, lambda v: -np.sin(v))
tan = _lift(np.tan, lambda v: 1.0 / np.cos(v) ** 2)
exp = _lift(np.exp, np.exp)
log = _lift(np.log, lambda v: 1.0 / v)
sqrt = _lift(np.sqrt, lambda v: 0.5 / np.sqrt(v))
tanh = _lift(np.tanh, lambda v: 1.0 / np.cosh(v) ** 2)
arctan = _lift(np.arctan, lambda v: 1.0 / (1.0 + v * v))


def stack(items) -> Dual:
    """Stack scalars/Duals into a vector Dual (plain numbers get zero tangent)."""
    duals = [d for d in items if isinstance(d, Dual)]
    if not duals:
        raise ValueError("need at least one Dual to stack")
    ndirs = duals[0].ndirs
    vals, dots = [], []
    for it in items:
        if isinstance(it, Dual):
            vals.append(it.val)
            dots.append(it.dot)
        else:
            vals.append(np.asarray(it, dtype=np.float64))
            dots.append(np.zeros(np.shape(it) + (ndirs,)))
    return Dual(np.stack(vals), np.stack(dots))


def smooth_clamp(x, lo: float, hi: float, width: float = 0.01):
    """Box saturation for differentiated rollouts: the value is the hard
    clamp (what the plant applies), the derivative is a smooth sigmoid
    surrogate of the given width so saturation keeps a usable gradient."""
    if isinstance(x, Dual):
        d = _sigmoid((x.val - lo) / width) * _sigmoid((hi - x.val) / width)
        return Dual(np.clip(x.val, lo, hi), _exp_last(d) * x.dot)
    return np.clip(x, lo, hi)


def _sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def seed(x: np.ndarray) -> Dual:
    """Lift a flat decision vector to a Dual with identity tangents."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return Dual(x, np.eye(x.shape[0]))


def value_and_grad(f, x: np.ndarray):
    """Evaluate a scalar program on a lifted input; return (value, gradient)."""
    out = f(seed(x))
    if not isinstance(out, Dual) or out.val.ndim != 0:
        raise ValueError("program must return a scalar Dual")
    return float(out.val), np.array(out.dot, dtype=np.float64)


def forward_grad(f, x: np.ndarray) -> np.ndarray:
    """Gradient of a scalar program by dual-number forward mode."""
    return value_and_grad(f, x)[1]
