"""Newton-type minimizers: plain Newton, PN, PDN and PPN (projection driven by element residuals).

All four share one loop (:func:`minimize`); they differ only in how a
search direction is obtained from the unprojected Hessian when it turns out
to be indefinite.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .assembly import ElementSystem
from .linsolve import (DEFAULT_RTOL, MaxIterationsExceeded, SolveOutcome, SolveStatus,
                       build_block_jacobi, llt_solve, pcg_solve)
from .smalldense import CLAMP, EigenFilter

ARMIJO_C = 1e-4
MAX_HALVINGS = 64
DELTA_FLOOR_RTOL = 1e-12
MAX_TIGHTENINGS = 50
PHASES = ("assemble", "project", "solve", "line_search", "other")

Variant = Literal["plain", "pn", "pdn", "ppn"]


class NewtonError(RuntimeError):
    pass


class LineSearchFailure(NewtonError):
    pass


class IterationLimit(NewtonError):
    pass


class IndefiniteHessian(NewtonError):
    """Plain Newton met an indefinite Hessian it is not allowed to modify."""


class LinearSolveFailure(NewtonError):
    """A fully projected system still could not be solved."""


@dataclass(frozen=True)
class SolverVariant:
    kind: Variant = "ppn"
    alpha: float = 0.5
    beta: float = 2.0
    countdown: int = 4
    filter: EigenFilter = CLAMP
    linear_solver: Literal["pcg", "llt"] = "pcg"
    pcg_rtol: float = DEFAULT_RTOL
    max_iterations: int = 500
    validate: bool = False

    def __post_init__(self):
        if self.kind not in ("plain", "pn", "pdn", "ppn"):
            raise ValueError(f"unknown variant {self.kind!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.beta >= 1:
            raise ValueError("beta must be >= 1")
        if self.countdown < 1:
            raise ValueError("countdown must be >= 1")
        if self.linear_solver not in ("pcg", "llt"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass(frozen=True)
class Convergence:
    """Dynamic (``dt`` set) or quasistatic (``domain_size`` set) stopping rule."""

    dt: float | None = None
    tol_v: float = 1e-3
    domain_size: float | None = None
    rel_size: float = 1e-3

    def __post_init__(self):
        if self.dt is None and self.domain_size is None:
            raise ValueError("need dt (dynamic) or domain_size (quasistatic)")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    def measure(self, dx) -> float:
        """Quantity compared against :meth:`threshold`."""
        n = float(np.max(np.abs(dx))) if np.size(dx) else 0.0
        return n / self.dt if self.dt is not None else n

    @property
    def threshold(self) -> float:
        return self.tol_v if self.dt is not None else self.rel_size * self.domain_size

    def converged(self, dx) -> bool:
        return self.measure(dx) < self.threshold


def check_converged(dx, dt=None, tol_v: float = 1e-3, domain_size=None) -> bool:
    """Velocity-step test ``|dx|_inf / dt < tol_v`` or ``|dx|_inf < 0.1% domain size``."""
    return Convergence(dt=dt, tol_v=tol_v, domain_size=domain_size).converged(dx)


@dataclass
class ProjectionLedger:
    candidate: np.ndarray
    delta: float = math.inf
    projected: np.ndarray | None = None
    g_inf: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.candidate = np.asarray(self.candidate, dtype=bool)
        self.reset_iteration()

    def reset_iteration(self):
        self.projected = np.zeros_like(self.candidate)

    def set_delta(self, event: str, value: float):
        self.history.append((event, self.delta, value))
        self.delta = value


def select_elements(residuals: np.ndarray, delta: float, ledger: ProjectionLedger) -> np.ndarray:
    """Ids of candidate elements not yet projected whose residual exceeds ``delta``.

    Falls back to every remaining candidate once ``delta`` drops below
    ``1e-12 * |g|_inf``.
    """
    remaining = ledger.candidate & ~ledger.projected
    if math.isinf(delta):
        return np.zeros(0, dtype=np.int64)
    if delta < DELTA_FLOOR_RTOL * ledger.g_inf:
        return np.flatnonzero(remaining)
    return np.flatnonzero(remaining & (residuals > delta))


@dataclass
class IterationRecord:
    energy: float
    g_inf: float
    solve_attempts: int = 0
    solve_failures: int = 0
    linear_iterations: int = 0
    projected: int = 0
    decomposed: int = 0
    modified: int = 0
    fallback: bool = False
    step_inf: float = 0.0
    descent: float = 0.0
    gamma: float = 0.0
    energy_after: float = math.nan
    accepted: bool = False


@dataclass
class StepReport:
    variant: str
    n_candidates: int
    records: list = field(default_factory=list)
    converged: bool = False
    failure: str | None = None
    timings: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    delta_history: list = field(default_factory=list)
    validation_measure: float | None = None
    n_distinct_projected: int = 0
    """Elements projected at least once during the solve."""

    @property
    def newton_iterations(self) -> int:
        """Accepted Newton steps."""
        return sum(r.accepted for r in self.records)

    @property
    def n_hessians(self) -> int:
        """Hessians assembled and solved (accepted steps plus the final converged check)."""
        return len(self.records)

    @property
    def n_projected(self) -> int:
        return sum(r.projected for r in self.records)

    @property
    def n_eigendecompositions(self) -> int:
        return sum(r.decomposed for r in self.records)

    @property
    def n_modified(self) -> int:
        return sum(r.modified for r in self.records)

    @property
    def n_solve_attempts(self) -> int:
        return sum(r.solve_attempts for r in self.records)

    @property
    def n_solve_failures(self) -> int:
        return sum(r.solve_failures for r in self.records)

    @property
    def gamma_min(self) -> float:
        gs = [r.gamma for r in self.records if r.accepted]
        return min(gs) if gs else 1.0


def line_search(system: ElementSystem, x, dx, g, energy0=None, c: float = ARMIJO_C,
                max_halvings: int = MAX_HALVINGS) -> tuple[float, float]:
    """Backtracking (halving) Armijo search; returns ``(gamma, energy)``."""
    slope = float(dx @ g)
    if not slope < 0:
        raise ValueError("line search needs a descent direction")
    e0 = system.energy(x) if energy0 is None else energy0
    gamma = 1.0
    for _ in range(max_halvings + 1):
        e = system.energy(x + gamma * dx)
        if np.isfinite(e) and e <= e0 + c * gamma * slope:
            return gamma, e
        gamma *= 0.5
    raise LineSearchFailure(f"no sufficient decrease after {max_halvings} halvings")


class _Driver:
    def __init__(self, system: ElementSystem, variant: SolverVariant, report: StepReport):
        self.system = system
        self.v = variant
        self.report = report
        self.ledger = ProjectionLedger(system.candidate)
        self.all_candidates = np.flatnonzero(system.candidate)
        self.countdown = 0
        self.ever = np.zeros(system.n_elements, dtype=bool)

    def _tick(self, phase, t0):
        t = time.perf_counter()
        self.report.timings[phase] += t - t0
        return t

    def solve(self, H, g, rec: IterationRecord, solver=None) -> SolveOutcome:
        t0 = time.perf_counter()
        solver = solver or self.v.linear_solver
        rec.solve_attempts += 1
        if solver == "llt":
            out = llt_solve(H, -g)
        else:
            try:
                out = pcg_solve(H, -g, build_block_jacobi(H, self.v.filter), rtol=self.v.pcg_rtol)
                rec.linear_iterations += out.detail
            except MaxIterationsExceeded as exc:
                rec.linear_iterations += exc.iterations
                out = SolveOutcome(SolveStatus.INDEFINITE, None, exc.iterations)
        if out.solved and not float(out.step @ g) < 0:
            out = SolveOutcome(SolveStatus.INDEFINITE, None, out.detail)
        if not out.solved:
            rec.solve_failures += 1
        self._tick("solve", t0)
        return out

    def project(self, ids, H, rec: IterationRecord):
        if len(ids) == 0:
            return
        t0 = time.perf_counter()
        dec, mod = self.system.project(ids, H, self.v.filter)
        self.ledger.projected[ids] = True
        self.ever[ids] = True
        self.report.n_distinct_projected = int(self.ever.sum())
        rec.projected += len(ids)
        rec.decomposed += dec
        rec.modified += mod
        self._tick("project", t0)

    def project_all(self, H, rec):
        self.project(np.flatnonzero(self.ledger.candidate & ~self.ledger.projected), H, rec)

    def solve_projected(self, H, g, rec) -> SolveOutcome:
        """Solve a fully projected system, falling back to the direct solver."""
        out = self.solve(H, g, rec)
        if not out.solved and self.v.linear_solver != "llt":
            out = self.solve(H, g, rec, solver="llt")
        if not out.solved:
            raise LinearSolveFailure("fully projected Hessian is not numerically SPD")
        return out

    def direction(self, H, g, rec) -> np.ndarray:
        kind = self.v.kind
        if kind == "pn":
            self.project_all(H, rec)
            return self.solve_projected(H, g, rec).step

        if kind == "pdn" and self.countdown > 0:
            self.countdown -= 1
            self.project_all(H, rec)
            return self.solve_projected(H, g, rec).step

        out = self.solve(H, g, rec)
        if out.solved:
            if kind == "ppn":
                self._release()
            return out.step
        if kind == "plain":
            raise IndefiniteHessian("unprojected Hessian is indefinite")
        if kind == "pdn":
            self.project_all(H, rec)
            self.countdown = self.v.countdown
            return self.solve_projected(H, g, rec).step
        return self._ppn_inner(H, g, rec)

    def _release(self):
        led = self.ledger
        if not math.isinf(led.delta):
            led.set_delta("release", self.v.beta * led.delta)

    def _ppn_inner(self, H, g, rec) -> np.ndarray:
        led = self.ledger
        if math.isinf(led.delta):
            led.set_delta("init", self.v.alpha * led.g_inf)
        residuals = self.system.residual_inf(g)
        tightenings = 0
        while True:
            forced = tightenings >= MAX_TIGHTENINGS or led.delta < DELTA_FLOOR_RTOL * led.g_inf
            ids = (np.flatnonzero(led.candidate & ~led.projected) if forced
                   else select_elements(residuals, led.delta, led))
            if forced:
                rec.fallback = True
            out = None
            if len(ids):
                self.project(ids, H, rec)
                out = self.solve(H, g, rec)
            if out is not None and out.solved:
                self._release()
                return out.step
            if not np.any(led.candidate & ~led.projected):
                out = self.solve_projected(H, g, rec)
                rec.fallback = True
                self._release()
                return out.step
            led.set_delta("tighten", self.v.alpha * led.delta)
            tightenings += 1

    def run(self, x0, conv: Convergence):
        system, rep = self.system, self.report
        x = np.array(x0, dtype=float)
        H = system.new_matrix()
        g = np.zeros(system.n_dof)
        t_start = time.perf_counter()
        for _ in range(self.v.max_iterations + 1):
            t0 = time.perf_counter()
            energy = system.assemble(x, H, g)
            self._tick("assemble", t0)
            g_inf = float(np.max(np.abs(g))) if g.size else 0.0
            if g_inf == 0.0:
                rep.converged = True
                break
            if len(rep.records) >= self.v.max_iterations:
                raise IterationLimit(f"no convergence after {self.v.max_iterations} Newton iterations")
            rec = IterationRecord(energy=energy, g_inf=g_inf)
            rep.records.append(rec)
            self.ledger.reset_iteration()
            self.ledger.g_inf = g_inf
            dx = self.direction(H, g, rec)
            rec.step_inf = float(np.max(np.abs(dx)))
            rec.descent = float(dx @ g)
            if conv.converged(dx):
                rep.converged = True
                break
            t0 = time.perf_counter()
            gamma, e_new = line_search(system, x, dx, g, energy)
            self._tick("line_search", t0)
            x = x + gamma * dx
            rec.gamma = gamma
            rec.energy_after = e_new
            rec.accepted = True
        rep.delta_history = list(self.ledger.history)
        spent = sum(rep.timings[p] for p in PHASES if p != "other")
        rep.timings["other"] = max(time.perf_counter() - t_start - spent, 0.0)
        if self.v.validate:
            rep.validation_measure = validation_measure(system, x, conv, self.v.filter)
        return x


def validation_measure(system: ElementSystem, x, conv: Convergence, f: EigenFilter = CLAMP) -> float:
    """Convergence measure of one fully projected LLT step taken from ``x``."""
    H = system.new_matrix()
    g = np.zeros(system.n_dof)
    system.assemble(x, H, g)
    system.project(np.flatnonzero(system.candidate), H, f)
    out = llt_solve(H, -g)
    if not out.solved:
        return math.inf
    return conv.measure(out.step)


def minimize(system: ElementSystem, x0, variant: SolverVariant, conv: Convergence):
    """Minimize the system's energy from ``x0``; returns ``(x, StepReport)``.

    Raises a :class:`NewtonError` subclass on failure; the partial report is
    attached as ``exc.report``.
    """
    report = StepReport(variant=variant.kind, n_candidates=system.n_candidates)
    driver = _Driver(system, variant, report)
    try:
        x = driver.run(x0, conv)
    except NewtonError as exc:
        report.failure = f"{type(exc).__name__}: {exc}"
        report.delta_history = list(driver.ledger.history)
        exc.report = report
        raise
    return x, report


def pdn_drive(system: ElementSystem, x0, conv: Convergence, countdown: int = 4, **kwargs):
    return minimize(system, x0, SolverVariant(kind="pdn", countdown=countdown, **kwargs), conv)
