"""Benchmark sweeps over scene x solver variant, CSV persistence and summary tables."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .integrator import kinetic_energy, quasistatic_solve, step
from .newton import PHASES, NewtonError, SolverVariant, StepReport
from .scenes import SceneSpec, build_model
from .smalldense import CLAMP, MIRROR

VARIANTS = ("plain", "pn", "pdn", "ppn")


class MissingBaseline(LookupError):
    """A scene group has no PN record to normalize against."""


class MissingData(ValueError):
    """A record without any completed step."""


@dataclass
class StepRow:
    step: int
    t: float
    newton_iterations: int
    hessians: int
    candidates: int
    projected: int
    distinct_projected: int
    eigendecompositions: int
    modified: int
    solve_attempts: int
    solve_failures: int
    linear_iterations: int
    gamma_min: float
    converged: bool
    kinetic_energy: float
    max_descent: float
    """Largest dx.g over accepted steps (negative for descent)."""
    min_decrease: float
    """Smallest energy decrease over accepted steps."""
    t_assemble: float = 0.0
    t_project: float = 0.0
    t_solve: float = 0.0
    t_line_search: float = 0.0
    t_other: float = 0.0

    @classmethod
    def from_report(cls, index: int, t: float, rep: StepReport, ke: float) -> "StepRow":
        acc = [r for r in rep.records if r.accepted]
        return cls(
            step=index, t=t, newton_iterations=rep.newton_iterations, hessians=rep.n_hessians,
            candidates=rep.n_candidates, projected=rep.n_projected,
            distinct_projected=rep.n_distinct_projected, eigendecompositions=rep.n_eigendecompositions,
            modified=rep.n_modified, solve_attempts=rep.n_solve_attempts,
            solve_failures=rep.n_solve_failures,
            linear_iterations=sum(r.linear_iterations for r in rep.records),
            gamma_min=rep.gamma_min, converged=rep.converged and rep.failure is None, kinetic_energy=ke,
            max_descent=max((r.descent for r in acc), default=-math.inf),
            min_decrease=min((r.energy - r.energy_after for r in acc), default=math.inf),
            **{f"t_{p}": rep.timings[p] for p in PHASES})


@dataclass
class Aggregates:
    scene: str
    variant: str
    dt: float
    tol_v: float
    n_steps: int
    total_newton_iterations: int
    total_hessians: int
    total_projected: int
    total_eigendecompositions: int
    total_modified: int
    total_solve_attempts: int
    total_solve_failures: int
    total_linear_iterations: int
    ph_per_iter: float
    ph_per_step: float
    gamma_min: float
    t_assemble: float
    t_project: float
    t_solve: float
    t_line_search: float
    t_other: float
    failure: str = ""

    @property
    def mean_iterations(self) -> float:
        return self.total_newton_iterations / self.n_steps if self.n_steps else math.nan

    @property
    def runtime(self) -> float:
        return sum(getattr(self, f"t_{p}") for p in PHASES)


def _ratio(num, den) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


def aggregate(scene: str, variant: str, dt: float, tol_v: float, rows: list, failure: str = "") -> Aggregates:
    """Sums over the per-step series; ``ph_per_iter`` divides projections by
    candidates x Hessians, ``ph_per_step`` divides distinct projected elements
    by candidates x steps."""
    def total(name):
        return sum(getattr(r, name) for r in rows)

    evals = sum(r.candidates * r.hessians for r in rows)
    slots = total("candidates")
    return Aggregates(
        scene=scene, variant=variant, dt=dt, tol_v=tol_v, n_steps=len(rows),
        total_newton_iterations=total("newton_iterations"), total_hessians=total("hessians"),
        total_projected=total("projected"), total_eigendecompositions=total("eigendecompositions"),
        total_modified=total("modified"), total_solve_attempts=total("solve_attempts"),
        total_solve_failures=total("solve_failures"), total_linear_iterations=total("linear_iterations"),
        ph_per_iter=total("projected") / evals if evals else 0.0,
        ph_per_step=total("distinct_projected") / slots if slots else 0.0,
        gamma_min=min((r.gamma_min for r in rows), default=1.0),
        failure=failure, **{f"t_{p}": total(f"t_{p}") for p in PHASES})


@dataclass
class RunRecord:
    scene: str
    variant: str
    dt: float
    tol_v: float
    steps: list = field(default_factory=list)
    failure: str = ""

    @property
    def aggregates(self) -> Aggregates:
        return aggregate(self.scene, self.variant, self.dt, self.tol_v, self.steps, self.failure)

    @property
    def failed(self) -> bool:
        return bool(self.failure)


def variant_label(variant: SolverVariant) -> str:
    return variant.kind if variant.filter == CLAMP else f"{variant.kind}-{variant.filter.kind}"


def make_variant(name: str, **kw) -> SolverVariant:
    """``"ppn"``, ``"pn-mirror"`` etc.; keyword overrides go to :class:`SolverVariant`."""
    kind, _, filt = name.partition("-")
    if filt:
        kw["filter"] = {"clamp": CLAMP, "mirror": MIRROR}[filt]
    return SolverVariant(kind=kind, **kw)


def run_scene(spec: SceneSpec, variant: SolverVariant, n_steps: int | None = None,
              keep_states: bool = False):
    """Simulate one scene with one variant; returns ``(RunRecord, states)``.

    A solver failure ends the run; it is recorded, not raised.
    """
    model, state, config = build_model(spec)
    rec = RunRecord(spec.name, variant_label(variant), spec.dt, spec.tol_v)
    states = [state] if keep_states else []
    quasi = spec.mode == "quasistatic"
    for k in range(spec.n_steps if n_steps is None else n_steps):
        t_next = state.t + spec.dt
        try:
            if quasi:
                state, rep = quasistatic_solve(replace(state, t=t_next), model, config, variant)
            else:
                state, rep = step(state, model, config, variant)
        except NewtonError as exc:
            rep = getattr(exc, "report", None)
            if rep is not None:
                rec.steps.append(StepRow.from_report(k, t_next, rep, math.nan))
            rec.failure = f"step {k}: {type(exc).__name__}: {exc}"
            break
        rec.steps.append(StepRow.from_report(k, state.t, rep, kinetic_energy(state)))
        if keep_states:
            states.append(state)
    return rec, states


# --- CSV -----------------------------------------------------------------------------

def _fields(cls):
    return [(f.name, f.type) for f in dataclasses.fields(cls)]


def _to_csv(rows, cls) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([n for n, _ in _fields(cls)])
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])
    return buf.getvalue()


def _parse(value: str, typ: str):
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    if typ == "bool":
        return value == "True"
    return value


def _from_csv(text: str, cls) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    types = dict(_fields(cls))
    if set(header) != set(types):
        raise ValueError(f"unexpected CSV header for {cls.__name__}: {header}")
    return [cls(**{h: _parse(v, types[h]) for h, v in zip(header, row)}) for row in reader if row]


def emit_aggregates(aggs) -> str:
    return _to_csv(aggs, Aggregates)


def parse_aggregates(text: str) -> list:
    return _from_csv(text, Aggregates)


def emit_steps(rows) -> str:
    return _to_csv(rows, StepRow)


def parse_steps(text: str) -> list:
    return _from_csv(text, StepRow)


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _stem(rec: RunRecord) -> str:
    return f"{rec.scene}__{rec.variant}__dt{rec.dt:g}__tol{rec.tol_v:g}"


# --- sweeps and summaries ----------------------------------------------------------------

def run_benchmark(specs, variants, out=None, workers: int = 1) -> list:
    """One :class:`RunRecord` per (scene, variant).

    With ``out`` set, writes ``<run>_steps.csv`` per run, ``aggregate.csv`` and
    ``summary.txt``/``summary.csv`` (ratios vs PN, where a PN run exists).
    """
    jobs = [(s, v) for s in specs for v in variants]

    def job(sv):
        rec, _ = run_scene(*sv)
        if out is not None:
            write_atomic(Path(out) / f"{_stem(rec)}_steps.csv", emit_steps(rec.steps))
        return rec

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(job, jobs))
    else:
        records = [job(j) for j in jobs]
    if out is not None:
        write_atomic(Path(out) / "aggregate.csv", emit_aggregates([r.aggregates for r in records]))
        groups = _groups([r.aggregates for r in records])
        with_pn = [a for g in groups.values() if any(_kind(x.variant) == "pn" for x in g) for a in g]
        if with_pn:
            text, table = summarize(with_pn)
            write_atomic(Path(out) / "summary.txt", text)
            write_atomic(Path(out) / "summary.csv", _table_csv(table))
    return records


def _kind(label: str) -> str:
    return label.partition("-")[0]


def _groups(aggs) -> dict:
    groups: dict = {}
    for a in aggs:
        groups.setdefault((a.scene, a.dt, a.tol_v), []).append(a)
    return groups


def _baseline(group, variant: str):
    pns = [a for a in group if _kind(a.variant) == "pn"]
    if not pns:
        raise MissingBaseline(f"no PN run for scene {group[0].scene!r}")
    suffix = variant.partition("-")[2]
    same = [a for a in pns if a.variant.partition("-")[2] == suffix]
    return (same or pns)[0]


def summarize(records):
    """Per-scene table of #N, ph and phase runtimes with ratios against PN.

    Accepts :class:`RunRecord` or :class:`Aggregates`; returns ``(text, rows)``.
    """
    aggs = [r.aggregates if isinstance(r, RunRecord) else r for r in records]
    if not aggs:
        raise MissingData("no records")
    for a in aggs:
        if a.n_steps == 0:
            raise MissingData(f"{a.scene}/{a.variant} has no completed steps")
    rows = []
    lines = []
    for (scene, dt, tol), group in _groups(aggs).items():
        lines.append(f"scene {scene}  dt={dt:g}  tol={tol:g}")
        lines.append(f"  {'variant':<12}{'#N':>8}{'ph %':>9}{'eig':>9}{'fail':>6}"
                     + "".join(f"{p:>12}" for p in PHASES)
                     + f"{'ph/PN':>8}{'N/PN':>8}{'eig/PN':>8}{'t/PN':>8}")
        for a in group:
            base = _baseline(group, a.variant)
            row = {
                "scene": scene, "dt": dt, "tol_v": tol, "variant": a.variant,
                "mean_iterations": a.mean_iterations, "ph_per_iter": a.ph_per_iter,
                "ph_per_step": a.ph_per_step, "eigendecompositions": a.total_eigendecompositions,
                "solve_failures": a.total_solve_failures,
                **{f"t_{p}": getattr(a, f"t_{p}") for p in PHASES},
                "ph_ratio": _ratio(a.ph_per_iter, base.ph_per_iter),
                "iteration_ratio": _ratio(a.total_newton_iterations, base.total_newton_iterations),
                "eig_ratio": _ratio(a.total_eigendecompositions, base.total_eigendecompositions),
                "time_ratio": _ratio(a.runtime, base.runtime),
                "failure": a.failure,
            }
            rows.append(row)
            lines.append(f"  {a.variant:<12}{a.mean_iterations:>8.2f}{100 * a.ph_per_iter:>9.3f}"
                         f"{a.total_eigendecompositions:>9d}{a.total_solve_failures:>6d}"
                         + "".join(f"{getattr(a, f't_{p}'):>12.3f}" for p in PHASES)
                         + f"{row['ph_ratio']:>8.3f}{row['iteration_ratio']:>8.3f}"
                         f"{row['eig_ratio']:>8.3f}{row['time_ratio']:>8.3f}"
                         + (f"  FAILED: {a.failure}" if a.failure else ""))
        lines.append("")
    return "\n".join(lines), rows


def _table_csv(rows) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def summary_csv(records) -> str:
    return _table_csv(summarize(records)[1])


def kinetic_energy_series(rec: RunRecord) -> np.ndarray:
    return np.array([r.kinetic_energy for r in rec.steps])


__all__ = [
    "Aggregates", "MissingBaseline", "MissingData", "RunRecord", "StepRow", "VARIANTS",
    "aggregate", "emit_aggregates", "emit_steps", "kinetic_energy_series", "make_variant",
    "parse_aggregates", "parse_steps", "run_benchmark", "run_scene", "summarize",
    "summary_csv", "variant_label", "write_atomic",
]
