"""Convergence-study orchestration: run (h, tau, k) grids, compute errors
and observed orders, split the error into projection and discrete parts,
and render reports as CSV, markdown or JSON.
"""

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import DGSpace, Field, dg_norm, errors_vs_exact, l2_norm
from .mesh import build_structured
from .model import get_case
from .sipg import SipgConfig, default_penalty, ritz_project
from .stepper import StepConfig, run

CSV_COLUMNS = ("param", "l2_error", "l2_order", "dg_error", "dg_order",
               "newton_total", "seconds")


@dataclass(frozen=True)
class StudyPlan:
    """One refinement study: which example, which direction, which grids.

    Spatial mode varies `ns` (cells per side) at a fixed number of steps;
    temporal mode varies `steps` with either a fixed mesh (`n`) or the
    coupling tau = h (`tau_eq_h`).
    """

    case: str
    mode: str
    k: int
    t_final: float
    ns: tuple = None
    steps: object = None
    n: int = None
    tau_eq_h: bool = False
    penalty: float = None
    newton_tol: float = 1e-11
    note: str = ""

    def __post_init__(self):
        if self.mode not in ("spatial", "temporal"):
            raise ValueError("mode must be 'spatial' or 'temporal'")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode == "spatial":
            ns = self.ns
            if ns is None or len(ns) < 2:
                raise ValueError("orders need >= 2 grid points")
            if any(b <= a for a, b in zip(ns, ns[1:])):
                raise ValueError("ns must be strictly increasing")
            if not isinstance(self.steps, int) or self.steps < 1:
                raise ValueError("spatial mode needs a fixed positive step count")
            object.__setattr__(self, "ns", tuple(int(n) for n in ns))
        else:
            steps = self.steps
            if steps is None or not np.iterable(steps) or len(steps) < 2:
                raise ValueError("orders need >= 2 grid points")
            if any(b <= a for a, b in zip(steps, steps[1:])):
                raise ValueError("steps must be strictly increasing")
            if (self.n is None) == (not self.tau_eq_h):
                raise ValueError("temporal mode needs exactly one of n / tau_eq_h")
            object.__setattr__(self, "steps", tuple(int(s) for s in steps))

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        if "ns" in raw and raw["ns"] is not None:
            raw["ns"] = tuple(raw["ns"])
        if "steps" in raw and isinstance(raw["steps"], list):
            raw["steps"] = tuple(raw["steps"])
        return cls(**raw)

    def to_json(self):
        d = dataclasses.asdict(self)
        d["ns"] = list(self.ns) if self.ns is not None else None
        d["steps"] = list(self.steps) if isinstance(self.steps, tuple) else self.steps
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def grid(self, rect_width):
        """List of (n, nsteps, param) tuples, one per refinement level."""
        if self.mode == "spatial":
            return [(n, self.steps, rect_width / n) for n in self.ns]
        points = []
        for nsteps in self.steps:
            tau = self.t_final / nsteps
            if self.tau_eq_h:
                n = round(rect_width * nsteps / self.t_final)
                if abs(rect_width / n - tau) > 1e-12 * tau:
                    raise ValueError(f"tau = {tau} is not a mesh size for width {rect_width}")
            else:
                n = self.n
            points.append((n, nsteps, tau))
        return points


@dataclass
class ConvergenceReport:
    """Per-level errors and pairwise observed orders plus run metadata."""

    metadata: dict
    rows: list = field(default_factory=list)

    def fill_orders(self):
        for prev, row in zip(self.rows, self.rows[1:]):
            ratio = math.log(prev["param"] / row["param"])
            row["l2_order"] = math.log(prev["l2_error"] / row["l2_error"]) / ratio
            row["dg_order"] = math.log(prev["dg_error"] / row["dg_error"]) / ratio
        if self.rows:
            self.rows[0]["l2_order"] = None
            self.rows[0]["dg_order"] = None


def observed_order(errors, params):
    """log(e0/e1)/log(m0/m1) for the last consecutive pair."""
    return (math.log(errors[-2] / errors[-1])
            / math.log(params[-2] / params[-1]))


def _run_point(case, k, n, nsteps, t_final, penalty, newton_tol):
    started = time.perf_counter()
    mesh = build_structured(case.rect, n)
    space = DGSpace(mesh, k)
    sipg_cfg = SipgConfig.for_degree(k, penalty)
    params = dataclasses.replace(case.params, t_final=t_final)
    cfg = StepConfig(tau=t_final / nsteps, newton_tol=newton_tol)
    trajectory, reports = run(space, params, case, cfg, sipg_cfg)
    final = trajectory[-1]
    t_end = nsteps * cfg.tau
    l2, dg = errors_vs_exact(final,
                             lambda x, y: case.u(x, y, t_end),
                             lambda x, y: case.grad_u(x, y, t_end))
    return {
        "l2_error": l2,
        "dg_error": dg,
        "newton_total": int(sum(r.newton_iters for r in reports)),
        "seconds": time.perf_counter() - started,
    }


def thread_budget():
    """Worker cap from GLCN_THREADS; 0 (the default) means sequential."""
    try:
        return max(0, int(os.environ.get("GLCN_THREADS", "0")))
    except ValueError:
        return 0


def run_study(plan, threads=None):
    """Execute a StudyPlan and return the filled ConvergenceReport.

    Grid points are independent and may run on a thread pool; rows are
    always assembled in plan order and each run is internally
    deterministic, so the report does not depend on the thread count.
    """
    case = get_case(plan.case)
    grid = plan.grid(case.rect.width)
    penalty = plan.penalty

    def point(args):
        n, nsteps, param = args
        row = {"param": param, "n": n, "steps": nsteps}
        row.update(_run_point(case, plan.k, n, nsteps, plan.t_final,
                              penalty, plan.newton_tol))
        return row

    workers = thread_budget() if threads is None else threads
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(g) for g in grid]

    report = ConvergenceReport(
        metadata={
            "case": plan.case,
            "mode": plan.mode,
            "k": plan.k,
            "t_final": plan.t_final,
            "penalty": penalty if penalty is not None else default_penalty(plan.k),
            "newton_tol": plan.newton_tol,
            "note": plan.note,
        },
        rows=rows,
    )
    report.fill_orders()
    return report


def error_split(space, sipg_cfg, case, t, u_h, stiffness=None):
    """Distance to the elliptic projection of the exact solution.

    Returns (xi_l2, eta_l2, eta_dg): the projection error of the exact
    solution in L2 and the L2/DG norms of the discrete deviation from the
    projection.
    """
    proj, _ = ritz_project(space, sipg_cfg,
                           lambda x, y: case.lap_u(x, y, t),
                           stiffness=stiffness)
    xi_l2, _ = errors_vs_exact(proj, lambda x, y: case.u(x, y, t))
    diff = Field(space, proj.coeffs - u_h.coeffs)
    return xi_l2, l2_norm(diff), dg_norm(diff)


def _fmt_param(p):
    return f"{p:.10g}"


def _fmt_err(e):
    return f"{e:.6e}"


def _fmt_order(o):
    return "" if o is None else f"{o:.4f}"


def render_csv(report, include_timing=True):
    lines = [",".join(CSV_COLUMNS)]
    for row in report.rows:
        seconds = f"{row['seconds']:.3f}" if include_timing else ""
        lines.append(",".join([
            _fmt_param(row["param"]),
            _fmt_err(row["l2_error"]),
            _fmt_order(row.get("l2_order")),
            _fmt_err(row["dg_error"]),
            _fmt_order(row.get("dg_order")),
            str(row["newton_total"]),
            seconds,
        ]))
    return "\n".join(lines) + "\n"


def render_markdown(report, include_timing=True):
    meta = report.metadata
    head = (f"case={meta['case']} mode={meta['mode']} k={meta['k']} "
            f"T={meta['t_final']:g} penalty={meta['penalty']:g}")
    lines = [head, "",
             "| param | L2 error | order | DG error | order | newton | seconds |",
             "| --- | --- | --- | --- | --- | --- | --- |"]
    for row in report.rows:
        l2o = row.get("l2_order")
        dgo = row.get("dg_order")
        seconds = f"{row['seconds']:.3f}" if include_timing else "--"
        lines.append("| {} | {} | {} | {} | {} | {} | {} |".format(
            _fmt_param(row["param"]),
            _fmt_err(row["l2_error"]),
            "--" if l2o is None else f"{l2o:.4f}",
            _fmt_err(row["dg_error"]),
            "--" if dgo is None else f"{dgo:.4f}",
            row["newton_total"],
            seconds,
        ))
    return "\n".join(lines) + "\n"


def render_json(report, include_timing=True):
    rows = []
    for row in report.rows:
        out = dict(row)
        if not include_timing:
            out.pop("seconds", None)
        rows.append(out)
    return json.dumps({"metadata": report.metadata, "rows": rows},
                      indent=2, sort_keys=True) + "\n"


def render(report, fmt, include_timing=True):
    if fmt == "csv":
        return render_csv(report, include_timing)
    if fmt in ("markdown", "md"):
        return render_markdown(report, include_timing)
    if fmt == "json":
        return render_json(report, include_timing)
    raise ValueError(f"unknown report format {fmt!r}")
