import dataclasses

import numpy as np
import pytest

from glcn import (DGSpace, Field, SipgConfig, StepConfig, assemble_mass,
                  assemble_stiffness, build_structured, cn_step,
                  energy_identity_residual, get_case, interpolate, l2_norm,
                  newton_solve, ritz_project, run)
from glcn.cli import random_smooth_field
from glcn.sipg import LinearSolver
from glcn.stepper import NewtonDiverged, _StepContext, check_solvability_gate


@pytest.fixture(scope="module")
def setup_n4_k1():
    case = get_case("example1")
    space = DGSpace(build_structured(case.rect, 4), 1)
    cfg = SipgConfig.for_degree(1)
    A = assemble_stiffness(space, cfg)
    M = assemble_mass(space)
    return case, space, A, M


@pytest.fixture(scope="module")
def setup_n8_k2():
    case = get_case("example1")
    space = DGSpace(build_structured(case.rect, 8), 2)
    cfg = SipgConfig.for_degree(2)
    A = assemble_stiffness(space, cfg)
    M = assemble_mass(space)
    return case, space, A, M


def test_zero_is_a_fixed_point(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    z = Field(space)
    u_next, rep = cn_step(space, A, M, case.params, None, z, 0.0,
                          StepConfig(tau=0.1), homogeneous=True)
    assert np.all(u_next.coeffs == 0)
    assert rep.newton_iters <= 1
    assert rep.residual <= 1e-11


def test_single_step_decay_bound(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, gamma=-1.0)
    cfg = StepConfig(tau=0.01)
    for _ in range(5):
        u_prev = random_smooth_field(space, case.rect, rng)
        u_next, _ = cn_step(space, A, M, params, None, u_prev, 0.0, cfg,
                            homogeneous=True)
        assert l2_norm(u_next) <= l2_norm(u_prev) + 10 * cfg.newton_tol


def test_single_step_growth_bound(setup_n4_k1, rng):
    # (1 - tau*gamma/2) |u^n| <= (1 + tau*gamma/2) |u^{n-1}| at gamma > 0
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, gamma=1.0)
    cfg = StepConfig(tau=0.01)
    for _ in range(5):
        u_prev = random_smooth_field(space, case.rect, rng)
        u_next, _ = cn_step(space, A, M, params, None, u_prev, 0.0, cfg,
                            homogeneous=True)
        factor = (1 + cfg.tau * params.gamma / 2) / (1 - cfg.tau * params.gamma / 2)
        assert l2_norm(u_next) <= factor * l2_norm(u_prev) + 10 * cfg.newton_tol


def _newton_history(ctx, M, u_prev, cfg):
    rhs = (2.0 / cfg.tau) * (M.matrix @ u_prev.coeffs)
    _, info = newton_solve(lambda z: ctx.residual(z, rhs), ctx.jacobian,
                           u_prev.coeffs, cfg, scale=np.linalg.norm(rhs))
    return info["history"]


def test_newton_superlinear_tail(setup_n8_k2, rng):
    case, space, A, M = setup_n8_k2
    cfg = StepConfig(tau=0.5)
    ctx = _StepContext(space, A, M, case.params, cfg)
    u_prev = random_smooth_field(space, case.rect, rng)
    u_prev = Field(space, 6.0 * u_prev.coeffs)  # make the cubic term matter
    history = _newton_history(ctx, M, u_prev, cfg)
    assert len(history) >= 4
    ratios = [history[i + 1] / history[i] for i in range(len(history) - 1)]
    floor = 1e-13 * history[0]
    active = [r for r, h in zip(ratios, history[1:]) if h > floor]
    # contraction accelerates (superlinear) and the tail at least halves
    assert all(r <= 0.5 for r in active[-2:])
    assert active[-1] < active[0]


def test_newton_example1_small_tau(setup_n8_k2):
    # mild setting (tiny step from the projected datum): converges fast
    # with a superlinear tail
    case, space, A, M = setup_n8_k2
    cfg = StepConfig(tau=1e-3)
    scfg = SipgConfig.for_degree(2)
    u0, _ = ritz_project(space, scfg, lambda x, y: case.lap_u(x, y, 0.0),
                         stiffness=A)
    ctx = _StepContext(space, A, M, case.params, cfg)
    rhs = (2.0 / cfg.tau) * (M.matrix @ u0.coeffs)
    f = case.source(ctx.xq[..., 0], ctx.xq[..., 1], cfg.tau / 2)
    rhs = rhs + ctx.load_vector(np.asarray(f, dtype=complex))
    w, info = newton_solve(lambda z: ctx.residual(z, rhs), ctx.jacobian,
                           u0.coeffs, cfg, scale=np.linalg.norm(rhs))
    h = info["history"]
    assert info["iterations"] <= 3
    assert all(h[i + 1] <= 0.5 * h[i] for i in range(len(h) - 1))


def test_newton_initial_guess_irrelevant(setup_n8_k2):
    case, space, A, M = setup_n8_k2
    cfg = StepConfig(tau=1e-3)
    scfg = SipgConfig.for_degree(2)
    u0, _ = ritz_project(space, scfg, lambda x, y: case.lap_u(x, y, 0.0),
                         stiffness=A)
    u1, _ = cn_step(space, A, M, case.params, case, u0, 0.0, cfg)
    u1b, _ = cn_step(space, A, M, case.params, case, u0, 0.0, cfg,
                     initial_guess=np.zeros(space.ndof, dtype=complex))
    denom = max(np.linalg.norm(u1.coeffs), 1.0)
    assert np.linalg.norm(u1.coeffs - u1b.coeffs) / denom < 1e-9


def test_jacobian_matches_finite_differences(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    cfg = StepConfig(tau=0.05)
    ctx = _StepContext(space, A, M, case.params, cfg)
    w = rng.standard_normal(space.ndof) + 1j * rng.standard_normal(space.ndof)
    d = rng.standard_normal(space.ndof) + 1j * rng.standard_normal(space.ndof)
    rhs = np.zeros(space.ndof, dtype=complex)
    eps = 1e-6
    fd = (ctx.residual(w + eps * d, rhs) - ctx.residual(w - eps * d, rhs)) / (2 * eps)
    jd = ctx.jacobian(w) @ np.concatenate([d.real, d.imag])
    jd = jd[:space.ndof] + 1j * jd[space.ndof:]
    assert np.linalg.norm(jd - fd) / np.linalg.norm(fd) < 1e-5


def test_run_single_step_equals_cn_step(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, t_final=0.25)
    cfg = StepConfig(tau=0.25)
    scfg = SipgConfig.for_degree(1)
    traj, reports = run(space, params, case, cfg, scfg, operators=(A, M))
    assert len(traj) == 2 and len(reports) == 1
    u1, _ = cn_step(space, A, M, params, case, traj[0], 0.0, cfg)
    assert np.array_equal(u1.coeffs, traj[1].coeffs)


def test_homogeneous_norm_never_grows(setup_n4_k1):
    # gamma = 0, f = 0: the discrete L2 norm is nonincreasing step by step
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, gamma=0.0, t_final=0.5)
    cfg = StepConfig(tau=0.05)
    scfg = SipgConfig.for_degree(1)
    traj, _ = run(space, params, case, cfg, scfg, operators=(A, M),
                  homogeneous=True)
    norms = [l2_norm(u) for u in traj]
    assert all(b <= a + 1e-10 for a, b in zip(norms, norms[1:]))


def test_energy_identity_at_each_step(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, gamma=-0.5, t_final=0.2)
    cfg = StepConfig(tau=0.02)
    u = random_smooth_field(space, case.rect, rng)
    ctx = _StepContext(space, A, M, params, cfg)
    for n in range(10):
        u_next, _ = cn_step(space, A, M, params, None, u, n * cfg.tau, cfg,
                            homogeneous=True, _ctx=ctx)
        resid, scale = energy_identity_residual(space, A, M, params, u, u_next, cfg.tau)
        assert abs(resid) <= 100 * cfg.newton_tol * max(scale, 1.0)
        u = u_next


def test_observers_and_trajectory(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, t_final=0.2)
    cfg = StepConfig(tau=0.05)
    seen = []
    traj, reports = run(space, params, case, cfg, SipgConfig.for_degree(1),
                        operators=(A, M),
                        observers=[lambda n, t, u: seen.append((n, t))])
    assert [n for n, _ in seen] == [0, 1, 2, 3, 4]
    assert seen[-1][1] == pytest.approx(0.2)
    assert len(traj) == 5
    assert all(rep.residual <= cfg.newton_tol for rep in reports)


def test_run_is_deterministic(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, t_final=0.1)
    cfg = StepConfig(tau=0.02)
    scfg = SipgConfig.for_degree(1)
    t1, _ = run(space, params, case, cfg, scfg, operators=(A, M))
    t2, _ = run(space, params, case, cfg, scfg, operators=(A, M))
    for a, b in zip(t1, t2):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_non_integer_step_count_rejected(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, t_final=1.0)
    with pytest.raises(ValueError):
        run(space, params, case, StepConfig(tau=0.3), SipgConfig.for_degree(1),
            operators=(A, M))


def test_solvability_gate_warning(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    assert check_solvability_gate(0.1, 1.0)
    with pytest.warns(UserWarning, match="tau\\*gamma"):
        check_solvability_gate(3.0, 1.0)


def test_fixed_point_fallback_matches_newton(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    cfg_newton = StepConfig(tau=0.1)
    # starve Newton so the fallback has to finish the job
    cfg_fp = StepConfig(tau=0.1, newton_max_iter=1, fixed_point_fallback=True)
    u_prev = random_smooth_field(space, case.rect, rng)
    a, rep_a = cn_step(space, A, M, case.params, case, u_prev, 0.0, cfg_newton)
    b, rep_b = cn_step(space, A, M, case.params, case, u_prev, 0.0, cfg_fp)
    assert rep_a.method == "newton"
    assert rep_b.method == "fixed_point"
    assert np.linalg.norm(a.coeffs - b.coeffs) <= 1e-8 * np.linalg.norm(a.coeffs)


def test_newton_diverged_carries_history_and_level(setup_n4_k1, rng):
    case, space, A, M = setup_n4_k1
    params = dataclasses.replace(case.params, t_final=0.2)
    cfg = StepConfig(tau=0.1, newton_max_iter=1, fixed_point_fallback=False)
    with pytest.raises(NewtonDiverged) as err:
        run(space, params, case, cfg, SipgConfig.for_degree(1), operators=(A, M))
    assert err.value.level == 1
    assert len(err.value.residual_history) >= 1
    assert "time level 1" in str(err.value)


def test_iterative_linear_solver_path(setup_n4_k1):
    case, space, A, M = setup_n4_k1
    cfg_d = StepConfig(tau=0.05)
    cfg_i = StepConfig(tau=0.05, linear=LinearSolver("iterative", tol=1e-12))
    u0, _ = ritz_project(space, SipgConfig.for_degree(1),
                         lambda x, y: case.lap_u(x, y, 0.0), stiffness=A)
    a, rep_a = cn_step(space, A, M, case.params, case, u0, 0.0, cfg_d)
    b, rep_b = cn_step(space, A, M, case.params, case, u0, 0.0, cfg_i)
    assert rep_b.linear_iters is not None and rep_b.linear_iters > 0
    assert np.linalg.norm(a.coeffs - b.coeffs) <= 1e-8 * np.linalg.norm(a.coeffs)


def test_table1_row_error_band(setup_n4_k1):
    # spatial error at h = 1/10, k = 1 lands within a factor 3 of the
    # reference value 1.3085e-2 (penalty-dependent beyond that)
    case = get_case("example1")
    space = DGSpace(build_structured(case.rect, 10), 1)
    params = dataclasses.replace(case.params, t_final=2e-6)
    cfg = StepConfig(tau=1e-7)
    traj, _ = run(space, params, case, cfg, SipgConfig.for_degree(1))
    from glcn import errors_vs_exact

    t_end = 20 * cfg.tau
    l2, _ = errors_vs_exact(traj[-1], lambda x, y: case.u(x, y, t_end),
                            lambda x, y: case.grad_u(x, y, t_end))
    assert 1.3085e-2 / 3 <= l2 <= 1.3085e-2 * 3


def test_config_validation():
    with pytest.raises(ValueError):
        StepConfig(tau=0.0)
    with pytest.raises(ValueError):
        StepConfig(tau=0.1, newton_tol=2.0)
