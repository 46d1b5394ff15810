"""Gradient-based trajectory optimization building blocks: forward-mode
automatic differentiation, an L-BFGS minimizer, and a discrete-time
Riccati solver."""

from onevision.optim.autodiff import (
    Dual,
    seed,
    value_and_grad,
    forward_grad,
    sin,
    cos,
    tan,
    exp,
    log,
    sqrt,
    tanh,
    arctan,
    smooth_clamp,
)
from onevision.optim.lbfgs import LbfgsOptions, LbfgsResult, lbfgs_minimize
from onevision.optim.riccati import DareSolution, solve_dare

__all__ = [
    "Dual",
    "seed",
    "value_and_grad",
    "forward_grad",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "arctan",
    "smooth_clamp",
    "LbfgsOptions",
    "LbfgsResult",
    "lbfgs_minimize",
    "DareSolution",
    "solve_dare",
]
