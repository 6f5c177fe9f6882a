"""Newton solvers with residual-driven per-element Hessian projection."""
from .assembly import BlockSparseMatrix, ElementSystem, ElementStencil
from .integrator import Model, SimState, StepConfig, simulate, step, quasistatic_solve
from .linsolve import SolveStatus, llt_solve, pcg_solve
from .newton import Convergence, SolverVariant, StepReport, minimize
from .smalldense import CLAMP, MIRROR, EigenFilter, eig_sym, project_spd

__all__ = [
    "BlockSparseMatrix", "CLAMP", "Convergence", "EigenFilter", "ElementStencil", "ElementSystem",
    "MIRROR", "Model", "SimState", "SolveStatus", "SolverVariant", "StepConfig", "StepReport",
    "eig_sym", "llt_solve", "minimize", "pcg_solve", "project_spd", "quasistatic_solve",
    "simulate", "step",
]
