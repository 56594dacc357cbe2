"""Ginzburg-Landau model data: PDE coefficients, the cubic nonlinearity
with its real-coordinates linearization, and manufactured solutions.

The cubic map w -> |w|^2 w is not complex-differentiable, so its Newton
linearization is the 2x2 real Jacobian with respect to (Re w, Im w); it is
symmetric because the map is the gradient of the convex energy |w|^4 / 4.
"""

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import values_at_volume_points
from .mesh import Rect


@dataclass(frozen=True)
class GLParams:
    """Coefficients of u_t - (nu + i alpha) lap u + (kappa + i beta)|u|^2 u - gamma u."""

    nu: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    t_final: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.kappa > 0):
            raise ValueError("nu and kappa must be positive")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form exact solution with its time derivative, gradient and
    Laplacian; u must vanish on the boundary of `rect` for all t."""

    name: str
    rect: Rect
    params: GLParams
    u: Callable
    u_t: Callable
    grad_u: Callable
    lap_u: Callable

    def source(self, x, y, t):
        """Forcing that makes u an exact solution of the PDE."""
        p = self.params
        u = self.u(x, y, t)
        return (self.u_t(x, y, t)
                - (p.nu + 1j * p.alpha) * self.lap_u(x, y, t)
                + (p.kappa + 1j * p.beta) * np.abs(u) ** 2 * u
                - p.gamma * u)

    def with_params(self, **overrides):
        """Same exact solution under modified coefficients (source adapts)."""
        return dataclasses.replace(self, params=dataclasses.replace(self.params, **overrides))


def source_term(case, x, y, t):
    return case.source(x, y, t)


def cubic_weak(space, w, tab=None):
    """Weak cubic term: entries int |w|^2 w phi_j dx against all test functions."""
    tab = tab or space.tab
    vals = values_at_volume_points(w, tab)
    g = np.abs(vals) ** 2 * vals
    out = np.einsum("e,q,eq,qi->ei", space.mesh.elem_det, tab.vol_rule.weights,
                    g, tab.vol_phi, optimize=True)
    return out.reshape(-1)


def cubic_jacobian_blocks(w):
    """Real 2x2 Jacobian of |w|^2 w at each point of a complex array.

    With w = a + ib the blocks are [[3a^2+b^2, 2ab], [2ab, a^2+3b^2]];
    the output shape is w.shape + (2, 2).
    """
    w = np.asarray(w, dtype=complex)
    a, b = w.real, w.imag
    out = np.empty(w.shape + (2, 2))
    out[..., 0, 0] = 3.0 * a * a + b * b
    out[..., 0, 1] = 2.0 * a * b
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 1, 1] = a * a + 3.0 * b * b
    return out


def _example1():
    rect = Rect(0.0, 1.0, 0.0, 1.0)
    params = GLParams(nu=1, kappa=1, alpha=1, beta=1, gamma=1, t_final=1.0)
    pi = np.pi

    def u(x, y, t):
        return np.sin(pi * x) * np.sin(pi * y) * np.exp(1j * t**2)

    def u_t(x, y, t):
        return 2j * t * u(x, y, t)

    def grad_u(x, y, t):
        phase = np.exp(1j * t**2)
        return (pi * np.cos(pi * x) * np.sin(pi * y) * phase,
                pi * np.sin(pi * x) * np.cos(pi * y) * phase)

    def lap_u(x, y, t):
        return -2.0 * pi**2 * u(x, y, t)

    return ManufacturedCase("example1", rect, params, u, u_t, grad_u, lap_u)


def _example2():
    rect = Rect(-1.0, 1.0, -1.0, 1.0)
    params = GLParams(nu=1, kappa=1, alpha=1, beta=1, gamma=1, t_final=1.0)

    def g(s):
        return (1.0 - s * s) ** 4

    def dg(s):
        return -8.0 * s * (1.0 - s * s) ** 3

    def d2g(s):
        return (1.0 - s * s) ** 2 * (56.0 * s * s - 8.0)

    def u(x, y, t):
        return g(x) * g(y) * np.exp(1j * t)

    def u_t(x, y, t):
        return 1j * u(x, y, t)

    def grad_u(x, y, t):
        phase = np.exp(1j * t)
        return dg(x) * g(y) * phase, g(x) * dg(y) * phase

    def lap_u(x, y, t):
        return (d2g(x) * g(y) + g(x) * d2g(y)) * np.exp(1j * t)

    return ManufacturedCase("example2", rect, params, u, u_t, grad_u, lap_u)


def builtin_cases():
    return [_example1(), _example2()]


def get_case(name):
    for case in builtin_cases():
        if case.name == name:
            return case
    known = ", ".join(c.name for c in builtin_cases())
    raise KeyError(f"unknown case {name!r} (known: {known})")
