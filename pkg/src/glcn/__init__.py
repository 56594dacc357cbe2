"""Fully implicit Crank-Nicolson interior-penalty DG solver for the 2D
complex Ginzburg-Landau equation, with a manufactured-solution harness."""

from .basis import ReferenceBasis
from .fem import (DGSpace, Field, dg_norm, errors_vs_exact, evaluate,
                  interpolate, l2_norm, lp_norm, zero_field)
from .harness import ConvergenceReport, StudyPlan, error_split, render, run_study
from .mesh import Mesh, Rect, build_structured, check_invariants, edge_trace_pairing
from .model import (GLParams, ManufacturedCase, builtin_cases, cubic_jacobian_blocks,
                    cubic_weak, get_case, source_term)
from .quadrature import QuadratureRule, edge_rule, triangle_rule
from .sipg import (LinearSolveFailed, LinearSolver, SipgConfig, SparseOperator,
                   assemble_dg_gram, assemble_mass, assemble_stiffness,
                   coercivity_min_eig, default_penalty, ritz_project)
from .stepper import (NewtonDiverged, StepConfig, StepReport, cn_step,
                      energy_identity_residual, newton_solve, run)

__version__ = "0.1.0"
