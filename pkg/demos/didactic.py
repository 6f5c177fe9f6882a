"""Three 2x2 element Hessians, one indefinite sum, and a fix that touches one element.

Run: python demos/didactic.py
"""
import numpy as np

from ppn.assembly import ElementSystem
from ppn.energies import QuadraticGroup
from ppn.linsolve import llt_solve
from ppn.newton import Convergence, NewtonError, SolverVariant, minimize
from ppn.smalldense import eig_sym

A = np.diag([-1.0, 2.0])
B = np.diag([2.0, 2.0])
C = np.diag([-10.0, 1.0])


def system(*mats, linear=None):
    return ElementSystem([QuadraticGroup([[0, 1]] * len(mats), np.array(mats), linear)], 2, 1)


def global_matrix(*mats):
    s = system(*mats)
    H = s.new_matrix()
    s.assemble(np.zeros(2), H, np.zeros(2))
    return H


print("element eigenvalues")
for name, m in [("A", A), ("B", B), ("A+B", A + B), ("A+B+C", A + B + C)]:
    print(f"  {name:6} {eig_sym(m).eigenvalues}")

# A alone is indefinite, yet A + B is SPD: projecting A would have been wasted work
print("\nLLT on A+B:  ", llt_solve(global_matrix(A, B), np.ones(2)).status.name)
print("LLT on A+B+C:", llt_solve(global_matrix(A, B, C), np.ones(2)).status.name)

# Give C's degrees of freedom the large residual so only C crosses the threshold.
# Separate stencils let the residual tell the elements apart.
lin = np.array([[0.1, 0.0], [0.0, 0.1], [0.0, 10.0]])
sep = ElementSystem([QuadraticGroup([[0, 1], [0, 1], [1, 2]], [A, B, C], lin)], 3, 1)
for kind in ("pn", "ppn"):
    try:
        minimize(sep, np.zeros(3), SolverVariant(kind=kind, linear_solver="llt", max_iterations=1),
                 Convergence(dt=1.0, tol_v=1e-12))
    except NewtonError as exc:
        rec = exc.report.records[0]
        print(f"\n{kind}: first iteration projected {rec.projected} of 3 elements "
              f"({rec.modified} changed), {rec.solve_attempts} solve attempts")
