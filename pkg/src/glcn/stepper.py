"""Fully implicit Crank-Nicolson time stepping.

Each level solves the nonlinear system for the midpoint average w:

    (2/tau)(w - u_prev, v) + (nu + i alpha) a_h(w, v)
        + (kappa + i beta)(|w|^2 w, v) - gamma (w, v) = (f(t_mid), v)

for all discrete v, then advances u_next = 2 w - u_prev.  Newton runs on
the coupled real system of twice the complex dimension because the cubic
term is only real-differentiable; a lagged-coefficient fixed-point sweep
is available as a fallback when Newton fails.
"""

import time
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fem import Field, lp_norm
from .sipg import (LinearSolveFailed, LinearSolver, SipgConfig,
                   assemble_mass, assemble_stiffness, factorize, ritz_project,
                   solve_real_system)


class NewtonDiverged(Exception):
    """Newton failed to reduce the residual; carries the iteration history."""

    def __init__(self, message, residual_history=(), last_iterate=None):
        super().__init__(message)
        self.residual_history = list(residual_history)
        self.last_iterate = last_iterate
        self.level = None


@dataclass(frozen=True)
class StepConfig:
    """Time step size and nonlinear/linear solver settings."""

    tau: float
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    fixed_point_fallback: bool = True
    fixed_point_max_iter: int = 200
    linear: LinearSolver = dc_field(default_factory=LinearSolver)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.newton_tol < 1:
            raise ValueError("newton_tol must be in (0, 1)")


@dataclass
class StepReport:
    """Per-level solver diagnostics."""

    newton_iters: int
    residual: float
    linear_iters: Optional[int] = None
    wall_time: float = 0.0
    method: str = "newton"


def check_solvability_gate(tau, gamma):
    """Warn when tau * gamma >= 2 (each level's solvability guarantee fails)."""
    if tau * gamma >= 2.0:
        warnings.warn(
            f"tau*gamma = {tau * gamma:.3g} >= 2: the per-step nonlinear system "
            "is no longer guaranteed solvable", UserWarning, stacklevel=2)
        return False
    return True


class _StepContext:
    """Per-run precomputation: linearized blocks, quadrature tables and the
    scatter pattern of the elementwise cubic Jacobian blocks."""

    def __init__(self, space, A, M, params, cfg):
        self.space = space
        self.params = params
        self.cfg = cfg
        tab = space.tab
        self.phi = tab.vol_phi
        self.xq = tab.vol_points
        self.scaled_w = space.mesh.elem_det[:, None] * tab.vol_rule.weights[None, :]
        self.M = M.matrix
        self.A = A.matrix
        tau = cfg.tau
        self.K11 = ((2.0 / tau - params.gamma) * self.M + params.nu * self.A).tocsr()
        self.K12 = (-params.alpha) * self.A
        self.K21 = params.alpha * self.A
        nloc = space.nloc
        elems = np.arange(space.mesh.num_elements)
        i = np.arange(nloc)
        rows = elems[:, None, None] * nloc + i[None, :, None]
        cols = elems[:, None, None] * nloc + i[None, None, :]
        shape = (space.mesh.num_elements, nloc, nloc)
        self.block_rows = np.broadcast_to(rows, shape).ravel()
        self.block_cols = np.broadcast_to(cols, shape).ravel()

    def at_quad(self, coeffs):
        nloc = self.space.nloc
        return np.einsum("qi,ei->eq", self.phi, coeffs.reshape(-1, nloc))

    def load_vector(self, values_at_quad):
        out = np.einsum("eq,qi->ei", values_at_quad * self.scaled_w, self.phi)
        return out.reshape(-1)

    def cubic_term(self, coeffs):
        wq = self.at_quad(coeffs)
        return self.load_vector(np.abs(wq) ** 2 * wq)

    def residual(self, coeffs, rhs):
        zc = (self.K11 @ coeffs
              + 1j * (self.params.alpha * (self.A @ coeffs))
              + (self.params.kappa + 1j * self.params.beta) * self.cubic_term(coeffs))
        return zc - rhs

    def _weighted_block(self, weights):
        data = np.einsum("eq,qi,qj->eij", weights * self.scaled_w,
                         self.phi, self.phi, optimize=True)
        n = self.space.ndof
        return sp.coo_matrix((data.ravel(), (self.block_rows, self.block_cols)),
                             shape=(n, n)).tocsr()

    def jacobian(self, coeffs):
        p = self.params
        wq = self.at_quad(coeffs)
        a, b = wq.real, wq.imag
        j00 = 3.0 * a * a + b * b
        j01 = 2.0 * a * b
        j11 = a * a + 3.0 * b * b
        b00 = self._weighted_block(p.kappa * j00 - p.beta * j01)
        b01 = self._weighted_block(p.kappa * j01 - p.beta * j11)
        b10 = self._weighted_block(p.beta * j00 + p.kappa * j01)
        b11 = self._weighted_block(p.beta * j01 + p.kappa * j11)
        return sp.bmat([[self.K11 + b00, self.K12 + b01],
                        [self.K21 + b10, self.K11 + b11]], format="csc")

    def weighted_mass(self, weights):
        return self._weighted_block(weights)


def newton_solve(residual_fn, jacobian_fn, w0, cfg, scale=None):
    """Newton iteration on the coupled real system for a complex unknown.

    Convergence means ||F|| <= newton_tol * scale, where `scale` defaults
    to the initial residual norm.  The time stepper passes
    max(||F_0||, ||rhs||) instead: for very small time steps the 2/tau
    mass term amplifies floating-point cancellation in (w - u_prev) above
    newton_tol relative to the pure spatial residual, while relative to
    the equation's own terms the tolerance stays attainable.

    Returns (w, info); info holds the absolute residual history and the
    iteration count.  Raises NewtonDiverged on failure.
    """
    w = np.array(w0, dtype=complex)
    r = residual_fn(w)
    norm0 = float(np.linalg.norm(r))
    history = [norm0]
    if not np.isfinite(norm0):
        raise NewtonDiverged("initial residual is not finite", history, w)
    scale = norm0 if scale is None else max(float(scale), norm0)
    if norm0 == 0.0 or norm0 <= cfg.newton_tol * scale:
        return w, {"iterations": 0, "history": history,
                   "relative": norm0 / scale if scale > 0 else 0.0}
    linear = getattr(cfg, "linear", LinearSolver())
    linear_iters = 0
    for it in range(1, cfg.newton_max_iter + 1):
        J = jacobian_fn(w)
        rhs = np.concatenate([r.real, r.imag])
        if linear.method == "direct":
            delta = factorize(J).solve(-rhs)
        else:
            delta, used = solve_real_system(J, -rhs, linear)
            linear_iters += used
        n = len(w)
        w = w + delta[:n] + 1j * delta[n:]
        r = residual_fn(w)
        norm = float(np.linalg.norm(r))
        history.append(norm)
        if not np.isfinite(norm):
            raise NewtonDiverged("residual became non-finite", history, w)
        if norm <= cfg.newton_tol * scale:
            return w, {"iterations": it, "history": history,
                       "relative": norm / scale,
                       "linear_iters": linear_iters if linear.method != "direct" else None}
    raise NewtonDiverged(
        f"no convergence in {cfg.newton_max_iter} iterations "
        f"(scaled residual {history[-1] / scale:.3e})", history, w)


def _fixed_point_solve(ctx, rhs, w0, cfg, scale=None):
    """Lagged-cubic fallback: freeze |w|^2 and solve the complex linear system."""
    p = ctx.params
    tau = cfg.tau
    base = ((2.0 / tau - p.gamma) * ctx.M
            + (p.nu + 1j * p.alpha) * ctx.A)
    w = np.array(w0, dtype=complex)
    norm0 = float(np.linalg.norm(ctx.residual(w0, rhs)))
    scale = norm0 if scale is None else max(float(scale), norm0)
    if norm0 == 0.0:
        return w, {"iterations": 0, "history": [0.0], "relative": 0.0}
    history = [norm0]
    for it in range(1, cfg.fixed_point_max_iter + 1):
        wq = ctx.at_quad(w)
        W = ctx.weighted_mass(np.abs(wq) ** 2)
        mat = (base + (p.kappa + 1j * p.beta) * W).tocsc()
        w = factorize(mat).solve(rhs)
        norm = float(np.linalg.norm(ctx.residual(w, rhs)))
        history.append(norm)
        if norm <= cfg.newton_tol * scale:
            return w, {"iterations": it, "history": history,
                       "relative": norm / scale}
    raise NewtonDiverged(
        f"fixed-point fallback stalled after {cfg.fixed_point_max_iter} sweeps",
        history, w)


def cn_step(space, A, M, params, case, u_prev, t_prev, cfg,
            homogeneous=False, initial_guess=None, _ctx=None):
    """Advance one Crank-Nicolson level; returns (u_next, StepReport).

    The source is evaluated at the interval midpoint t_prev + tau/2, which
    preserves the scheme's second-order accuracy in time.  `homogeneous`
    forces a zero source (used by the decay and growth studies).
    """
    t0 = time.perf_counter()
    check_solvability_gate(cfg.tau, params.gamma)
    ctx = _ctx if _ctx is not None else _StepContext(space, A, M, params, cfg)
    rhs = (2.0 / cfg.tau) * (ctx.M @ u_prev.coeffs)
    if not homogeneous:
        if case is None:
            raise ValueError("a manufactured case is required unless homogeneous")
        t_mid = t_prev + 0.5 * cfg.tau
        f = case.source(ctx.xq[..., 0], ctx.xq[..., 1], t_mid)
        rhs = rhs + ctx.load_vector(np.asarray(f, dtype=complex))

    w0 = u_prev.coeffs if initial_guess is None else np.asarray(initial_guess, dtype=complex)
    scale = float(np.linalg.norm(rhs))
    method = "newton"
    try:
        w, info = newton_solve(lambda z: ctx.residual(z, rhs),
                               ctx.jacobian, w0, cfg, scale=scale)
    except NewtonDiverged:
        if not cfg.fixed_point_fallback:
            raise
        method = "fixed_point"
        w, info = _fixed_point_solve(ctx, rhs, w0, cfg, scale=scale)

    u_next = Field(space, 2.0 * w - u_prev.coeffs)
    report = StepReport(newton_iters=info["iterations"],
                        residual=info["relative"],
                        linear_iters=info.get("linear_iters"),
                        wall_time=time.perf_counter() - t0,
                        method=method)
    return u_next, report


def run(space, params, case, cfg, sipg_cfg=None, *, u0=None,
        homogeneous=False, observers=(), operators=None):
    """March from t = 0 to t = t_final in t_final/tau uniform steps.

    The initial datum is the elliptic projection of the exact solution at
    t = 0 unless `u0` is supplied.  Returns (trajectory, reports) with the
    trajectory holding the field at every level including t = 0; observers
    are called as observer(n, t_n, field) after each level.
    """
    T = params.t_final
    nsteps = int(round(T / cfg.tau))
    if nsteps < 1 or abs(nsteps * cfg.tau - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"t_final/tau = {T / cfg.tau!r} must be a positive integer")
    if sipg_cfg is None:
        sipg_cfg = SipgConfig.for_degree(space.degree)
    if operators is not None:
        A, M = operators
    else:
        A = assemble_stiffness(space, sipg_cfg)
        M = assemble_mass(space)
    if u0 is None:
        if case is None:
            raise ValueError("need a manufactured case (or explicit u0)")
        u0, _ = ritz_project(space, sipg_cfg,
                             lambda x, y: case.lap_u(x, y, 0.0),
                             stiffness=A, solver=cfg.linear)
    check_solvability_gate(cfg.tau, params.gamma)

    ctx = _StepContext(space, A, M, params, cfg)
    trajectory = [u0]
    reports = []
    for obs in observers:
        obs(0, 0.0, u0)
    u = u0
    for n in range(1, nsteps + 1):
        t_prev = (n - 1) * cfg.tau
        try:
            u, rep = cn_step(space, A, M, params, case, u, t_prev, cfg,
                             homogeneous=homogeneous, _ctx=ctx)
        except (NewtonDiverged, LinearSolveFailed) as exc:
            exc.level = n
            exc.args = (f"time level {n}: {exc.args[0]}",) + exc.args[1:]
            raise
        trajectory.append(u)
        reports.append(rep)
        for obs in observers:
            obs(n, n * cfg.tau, u)
    return trajectory, reports


def energy_identity_residual(space, A, M, params, u_prev, u_next, tau):
    """Residual of the real-part energy identity at a converged level.

    For the homogeneous scheme the converged midpoint average satisfies
    (|u^n|^2 - |u^{n-1}|^2)/(2 tau) + nu*a_h(w,w) + kappa*|w|_4^4
    - gamma*|w|^2 = 0 exactly; the returned (residual, scale) pair lets
    callers compare against the nonlinear solver tolerance.
    """
    w = Field(space, 0.5 * (u_next.coeffs + u_prev.coeffs))
    m_next = float(np.real(np.vdot(u_next.coeffs, M.matrix @ u_next.coeffs)))
    m_prev = float(np.real(np.vdot(u_prev.coeffs, M.matrix @ u_prev.coeffs)))
    kinetic = (m_next - m_prev) / (2.0 * tau)
    a_term = params.nu * float(np.real(np.vdot(w.coeffs, A.matrix @ w.coeffs)))
    quartic = params.kappa * lp_norm(w) ** 4
    mass_term = params.gamma * float(np.real(np.vdot(w.coeffs, M.matrix @ w.coeffs)))
    residual = kinetic + a_term + quartic - mass_term
    scale = abs(kinetic) + abs(a_term) + abs(quartic) + abs(mass_term)
    return residual, scale
