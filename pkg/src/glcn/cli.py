"""Command-line harness: single runs, convergence studies, the invariant
verification bundle and mesh dumps.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 solver failure.  Configuration comes from an optional JSON file plus
flags; flags win.
"""

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import fem, mesh as meshmod, model, quadrature, sipg, stepper
from .harness import StudyPlan, render, run_study, thread_budget


class ConfigError(Exception):
    """Inconsistent or incomplete configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of a single simulation run."""

    case: str
    k: int = 1
    n: int = None
    h: float = None
    tau: float = None
    steps: int = None
    t_final: float = None
    penalty: float = None
    nu: float = None
    alpha: float = None
    beta: float = None
    kappa: float = None
    gamma: float = None
    homogeneous: bool = False
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    linear_solver: str = "direct"
    report_jsonl: str = None
    dump_every: int = 0
    dump_dir: str = None

    def validate(self):
        if not self.case:
            raise ConfigError("a case name is required")
        if (self.n is None) == (self.h is None):
            raise ConfigError("exactly one of n / h must be given")
        if (self.tau is None) == (self.steps is None):
            raise ConfigError("exactly one of tau / steps must be given")
        if self.t_final is None or not self.t_final > 0:
            raise ConfigError("t-final must be a positive number")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        for name in ("tau", "h", "penalty", "newton_tol"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and positive")
        return self

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def _merge_config(args, fields):
    """File values below flag values below dataclass defaults."""
    raw = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw.update(json.loads(path.read_text()))
    for name in fields:
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    return raw


def resolve_run_config(args):
    raw = _merge_config(args, [f.name for f in dataclasses.fields(RunConfig)])
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "case" not in raw:
        raise ConfigError("a case name is required (--case)")
    return RunConfig(**raw).validate()


def _resolve_case(config):
    try:
        case = model.get_case(config.case)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    overrides = {name: getattr(config, name)
                 for name in ("nu", "alpha", "beta", "kappa", "gamma")
                 if getattr(config, name) is not None}
    if config.t_final is not None:
        overrides["t_final"] = config.t_final
    return case.with_params(**overrides)


def _resolve_grid(config, rect):
    if config.n is not None:
        n = int(config.n)
    else:
        n = round(rect.width / config.h)
        if n < 1 or abs(rect.width / n - config.h) > 1e-9 * config.h:
            raise ConfigError(f"h = {config.h} does not tile the domain width")
    tau = config.tau if config.tau is not None else config.t_final / config.steps
    return n, tau


def cmd_run(args):
    config = resolve_run_config(args)
    case = _resolve_case(config)
    n, tau = _resolve_grid(config, case.rect)
    grid = meshmod.build_structured(case.rect, n)
    space = fem.DGSpace(grid, config.k)
    sipg_cfg = sipg.SipgConfig.for_degree(config.k, config.penalty)
    cfg = stepper.StepConfig(
        tau=tau, newton_tol=config.newton_tol,
        newton_max_iter=config.newton_max_iter,
        linear=sipg.LinearSolver(method=config.linear_solver))

    observers = []
    if config.dump_every > 0:
        dump_dir = Path(config.dump_dir or ".")
        dump_dir.mkdir(parents=True, exist_ok=True)

        def dump(nlevel, t, u, _dir=dump_dir, m=config.dump_every):
            if nlevel % m == 0:
                (_dir / f"field_{nlevel:05d}.csv").write_text(fem.field_csv(u))

        observers.append(dump)

    trajectory, reports = stepper.run(
        space, case.params, case, cfg, sipg_cfg,
        homogeneous=config.homogeneous, observers=observers)

    if config.report_jsonl:
        with open(config.report_jsonl, "w") as fh:
            for i, rep in enumerate(reports, start=1):
                fh.write(json.dumps({
                    "n": i, "t": i * tau,
                    "newton_iters": rep.newton_iters,
                    "residual": rep.residual,
                }) + "\n")

    total_iters = sum(r.newton_iters for r in reports)
    print(f"case={case.name} k={config.k} n={n} tau={tau:g} "
          f"T={case.params.t_final:g} penalty={sipg_cfg.penalty:g}")
    print(f"newton_total={total_iters}")
    if config.homogeneous:
        print("norm history:")
        for i, u in enumerate(trajectory):
            print(f"  n={i} t={i * tau:.6g} l2={fem.l2_norm(u):.12e}")
    else:
        t_end = len(reports) * tau
        l2, dg = fem.errors_vs_exact(trajectory[-1],
                                     lambda x, y: case.u(x, y, t_end),
                                     lambda x, y: case.grad_u(x, y, t_end))
        print(f"l2_error={l2:.6e}")
        print(f"dg_error={dg:.6e}")
    return 0


def load_plan(spec_name):
    path = Path(spec_name)
    if path.exists():
        return StudyPlan.from_json(path.read_text())
    name = spec_name if spec_name.endswith(".json") else spec_name + ".json"
    try:
        text = resources.files("glcn").joinpath("plans", name).read_text()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise ConfigError(f"plan not found: {spec_name}") from exc
    return StudyPlan.from_json(text)


def cmd_study(args):
    try:
        plan = load_plan(args.plan)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid plan: {exc}") from exc
    include_timing = not args.no_timing
    report = run_study(plan, threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.plan).stem
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    for fmt in formats:
        ext = {"csv": "csv", "markdown": "md", "md": "md", "json": "json"}.get(fmt)
        if ext is None:
            raise ConfigError(f"unknown report format {fmt!r}")
        text = render(report, fmt, include_timing=include_timing)
        (out_dir / f"{stem}.{ext}").write_text(text)
    sys.stdout.write(render(report, "markdown", include_timing=include_timing))
    return 0


def cmd_dump_mesh(args):
    rect = meshmod.Rect(*args.rect)
    grid = meshmod.build_structured(rect, args.n)
    text = meshmod.dump_mesh(grid)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# verification suites


def _suite_quadrature():
    for degree in range(0, 15):
        rule = quadrature.triangle_rule(degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                approx = float(np.sum(rule.weights * rule.points[:, 0] ** a
                                      * rule.points[:, 1] ** b))
                exact = quadrature.reference_monomial_integral(a, b)
                if abs(approx - exact) > 1e-12 * abs(exact):
                    return False, f"triangle degree {degree} misses x^{a} y^{b}"
        erule = quadrature.edge_rule(degree)
        for a in range(degree + 1):
            approx = float(np.sum(erule.weights * erule.points ** a))
            if abs(approx - 1.0 / (a + 1)) > 1e-12 / (a + 1):
                return False, f"edge degree {degree} misses t^{a}"
    return True, "triangle and edge rules exact through degree 14"


def _suite_mesh():
    for n in (1, 2, 5):
        for rect in (meshmod.Rect(0, 1, 0, 1), meshmod.Rect(-1, 1, -1, 1)):
            diag = meshmod.check_invariants(meshmod.build_structured(rect, n), rect)
            if abs(diag["quasi_uniformity"] - 1.0) > 1e-12:
                return False, "structured family is not quasi-uniform"
    return True, "conformity, orientation, Euler formula, areas"


def _suite_coercivity(penalty):
    worst = np.inf
    for k in (1, 2, 3):
        cfg = sipg.SipgConfig.for_degree(k, penalty)
        for n in (2, 4):
            grid = meshmod.build_structured(meshmod.Rect(0, 1, 0, 1), n)
            space = fem.DGSpace(grid, k)
            worst = min(worst, sipg.coercivity_min_eig(space, cfg))
    ok = worst > 1e-8
    return ok, f"min a_h(v,v)/|v|_DG^2 = {worst:.4f}"


def _suite_jacobian_fd():
    grid = meshmod.build_structured(meshmod.Rect(0, 1, 0, 1), 3)
    space = fem.DGSpace(grid, 2)
    case = model.get_case("example1")
    cfg = stepper.StepConfig(tau=0.01)
    sipg_cfg = sipg.SipgConfig.for_degree(2)
    A = sipg.assemble_stiffness(space, sipg_cfg)
    M = sipg.assemble_mass(space)
    ctx = stepper._StepContext(space, A, M, case.params, cfg)
    rng = np.random.default_rng(7)
    w = rng.standard_normal(space.ndof) + 1j * rng.standard_normal(space.ndof)
    d = rng.standard_normal(space.ndof) + 1j * rng.standard_normal(space.ndof)
    rhs = np.zeros(space.ndof, dtype=complex)
    eps = 1e-6
    fd = (ctx.residual(w + eps * d, rhs) - ctx.residual(w - eps * d, rhs)) / (2 * eps)
    J = ctx.jacobian(w)
    jd = J @ np.concatenate([d.real, d.imag])
    jd = jd[:space.ndof] + 1j * jd[space.ndof:]
    rel = np.linalg.norm(jd - fd) / np.linalg.norm(fd)
    return rel < 1e-5, f"directional Jacobian error {rel:.2e}"


def random_smooth_field(space, rect, rng, modes=3):
    """Random low-mode Fourier sum with zero boundary trace, interpolated."""
    coeffs = (rng.standard_normal((modes, modes))
              + 1j * rng.standard_normal((modes, modes)))

    def f(x, y):
        sx = (x - rect.x0) / rect.width
        sy = (y - rect.y0) / rect.height
        out = np.zeros(np.broadcast(x, y).shape, dtype=complex)
        for p in range(1, modes + 1):
            for q in range(1, modes + 1):
                out = out + (coeffs[p - 1, q - 1] / (p * p + q * q)
                             * np.sin(np.pi * p * sx) * np.sin(np.pi * q * sy))
        return out

    return fem.interpolate(space, f)


def _decay_run(space, A, M, params, u0, cfg, nsteps):
    norms = [fem.l2_norm(u0)]
    u = u0
    ctx = stepper._StepContext(space, A, M, params, cfg)
    for n in range(nsteps):
        u, _ = stepper.cn_step(space, A, M, params, None, u, n * cfg.tau, cfg,
                               homogeneous=True, _ctx=ctx)
        norms.append(fem.l2_norm(u))
    return norms


def _suite_decay(seed=0, samples=5):
    rect = meshmod.Rect(0, 1, 0, 1)
    grid = meshmod.build_structured(rect, 4)
    space = fem.DGSpace(grid, 1)
    sipg_cfg = sipg.SipgConfig.for_degree(1)
    A = sipg.assemble_stiffness(space, sipg_cfg)
    M = sipg.assemble_mass(space)
    params = dataclasses.replace(model.get_case("example1").params,
                                 gamma=-1.0, t_final=1.0)
    cfg = stepper.StepConfig(tau=0.01)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        u0 = random_smooth_field(space, rect, rng)
        norms = _decay_run(space, A, M, params, u0, cfg, nsteps=20)
        jumps = np.diff(norms)
        worst = max(worst, float(jumps.max()))
    ok = worst <= 1e-9
    return ok, f"max norm increase {worst:.2e} over {samples} runs"


def _suite_growth(seed=1, samples=5):
    rect = meshmod.Rect(0, 1, 0, 1)
    grid = meshmod.build_structured(rect, 4)
    space = fem.DGSpace(grid, 1)
    sipg_cfg = sipg.SipgConfig.for_degree(1)
    A = sipg.assemble_stiffness(space, sipg_cfg)
    M = sipg.assemble_mass(space)
    params = dataclasses.replace(model.get_case("example1").params,
                                 gamma=1.0, t_final=5.0)
    cfg = stepper.StepConfig(tau=0.5)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        u0 = random_smooth_field(space, rect, rng)
        norms = _decay_run(space, A, M, params, u0, cfg, nsteps=10)
        for n, norm in enumerate(norms):
            bound = np.exp(2.0 * params.gamma * n * cfg.tau) * norms[0] + 1e-8
            worst = max(worst, norm - bound)
    ok = worst <= 0.0
    return ok, f"max bound excess {worst:.2e} over {samples} runs"


def _suite_ritz_orders(penalty=None):
    pi = np.pi

    def u(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def lap(x, y):
        return -2.0 * pi**2 * u(x, y)

    def gradu(x, y):
        return (pi * np.cos(pi * x) * np.sin(pi * y),
                pi * np.sin(pi * x) * np.cos(pi * y))

    detail = []
    ok = True
    for k in (1, 2, 3):
        cfg = sipg.SipgConfig.for_degree(k, penalty)
        errs_l2, errs_dg, hs = [], [], []
        for n in (4, 8, 16):
            grid = meshmod.build_structured(meshmod.Rect(0, 1, 0, 1), n)
            space = fem.DGSpace(grid, k)
            proj, _ = sipg.ritz_project(space, cfg, lap)
            l2, dg = fem.errors_vs_exact(proj, u, gradu)
            errs_l2.append(l2)
            errs_dg.append(dg)
            hs.append(grid.h)
        p_l2 = np.log(errs_l2[-2] / errs_l2[-1]) / np.log(hs[-2] / hs[-1])
        p_dg = np.log(errs_dg[-2] / errs_dg[-1]) / np.log(hs[-2] / hs[-1])
        detail.append(f"k={k}: L2 {p_l2:.2f} DG {p_dg:.2f}")
        ok = ok and abs(p_l2 - (k + 1)) <= 0.2 and abs(p_dg - k) <= 0.2
    return ok, "; ".join(detail)


def cmd_verify(args):
    penalty = args.penalty
    if args.tau is not None and args.gamma is not None:
        if args.tau * args.gamma >= 2.0:
            print(f"WARNING: tau*gamma = {args.tau * args.gamma:g} >= 2 "
                  "(per-step solvability is not guaranteed)")
        else:
            print(f"solvability gate ok: tau*gamma = {args.tau * args.gamma:g} < 2")
    suites = [
        ("quadrature", _suite_quadrature),
        ("mesh", _suite_mesh),
        ("coercivity", lambda: _suite_coercivity(penalty)),
        ("jacobian_fd", _suite_jacobian_fd),
        ("decay", _suite_decay),
        ("growth", _suite_growth),
        ("ritz_orders", lambda: _suite_ritz_orders(penalty)),
    ]
    failures = 0
    for name, fn in suites:
        ok, detail = fn()
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{status:4s}  {name:12s}  {detail}")
    return 0 if failures == 0 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="glcn",
        description="Crank-Nicolson interior-penalty DG solver for the "
                    "2D complex Ginzburg-Landau equation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single simulation")
    p_run.add_argument("--config", help="JSON config file (flags win)")
    p_run.add_argument("--case", required=False)
    p_run.add_argument("--k", type=int)
    p_run.add_argument("--n", type=int)
    p_run.add_argument("--h", type=float)
    p_run.add_argument("--tau", type=float)
    p_run.add_argument("--steps", type=int)
    p_run.add_argument("--t-final", dest="t_final", type=float)
    p_run.add_argument("--lambda", dest="penalty", type=float,
                       help="interior penalty (default 10(k+1)^2)")
    for name in ("nu", "alpha", "beta", "kappa", "gamma"):
        p_run.add_argument(f"--{name}", type=float)
    p_run.add_argument("--homogeneous", action="store_true", default=None,
                       help="force a zero source term")
    p_run.add_argument("--newton-tol", dest="newton_tol", type=float)
    p_run.add_argument("--newton-max-iter", dest="newton_max_iter", type=int)
    p_run.add_argument("--linear-solver", dest="linear_solver",
                       choices=("direct", "iterative"))
    p_run.add_argument("--report-jsonl", dest="report_jsonl")
    p_run.add_argument("--dump-every", dest="dump_every", type=int)
    p_run.add_argument("--dump-dir", dest="dump_dir")
    p_run.set_defaults(func=cmd_run, subparser=p_run)

    p_study = sub.add_parser("study", help="convergence study from a plan file")
    p_study.add_argument("--plan", required=True,
                         help="plan path or shipped name (table1..table8)")
    p_study.add_argument("--out-dir", dest="out_dir", default=".")
    p_study.add_argument("--format", default="csv,markdown",
                         help="comma list of csv, markdown, json")
    p_study.add_argument("--no-timing", dest="no_timing", action="store_true",
                         help="suppress wall-time columns (byte-stable output)")
    p_study.add_argument("--threads", type=int, default=None,
                         help=f"grid-point parallelism (default GLCN_THREADS={thread_budget()})")
    p_study.set_defaults(func=cmd_study)

    p_verify = sub.add_parser("verify", help="run the invariant suites")
    p_verify.add_argument("--lambda", dest="penalty", type=float)
    p_verify.add_argument("--tau", type=float)
    p_verify.add_argument("--gamma", type=float)
    p_verify.set_defaults(func=cmd_verify)

    p_dump = sub.add_parser("dump-mesh", help="write a plain-text mesh dump")
    p_dump.add_argument("--n", type=int, required=True)
    p_dump.add_argument("--rect", type=float, nargs=4, default=[0.0, 1.0, 0.0, 1.0],
                        metavar=("X0", "X1", "Y0", "Y1"))
    p_dump.add_argument("--out")
    p_dump.set_defaults(func=cmd_dump_mesh)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sub = getattr(args, "subparser", None)
        if sub is not None:
            print(sub.format_usage(), end="", file=sys.stderr)
        return 2
    except (stepper.NewtonDiverged, sipg.LinearSolveFailed) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
