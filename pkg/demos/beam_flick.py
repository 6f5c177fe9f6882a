"""Compare the four Newton variants on a flicked cantilever beam.

Plain Newton gives up as soon as the global Hessian turns indefinite. PN
eigendecomposes every element in every iteration. PDN does the same, but only
after a failed solve. PPN projects only the elements with large residuals.

Run: python demos/beam_flick.py [scene]
"""
import sys

from ppn.bench import make_variant, run_scene, summarize
from ppn.scenes import load_scene

spec = load_scene(sys.argv[1] if len(sys.argv) > 1 else "beam2d")
records = []
for name in ("plain", "pn", "pdn", "ppn"):
    rec, _ = run_scene(spec, make_variant(name))
    records.append(rec)
    a = rec.aggregates
    status = f"stopped at {rec.failure}" if rec.failed else "ok"
    print(f"{name:6} steps {a.n_steps:3}  Newton {a.total_newton_iterations:5}  "
          f"projected {a.total_projected:7}  eig {a.total_eigendecompositions:7}  {status}")

print()
print(summarize([r for r in records if not r.failed])[0])
