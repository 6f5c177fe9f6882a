"""Backward-Euler incremental-potential time stepping and quasistatic solves."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .assembly import ElementSystem
from .energies import BarrierParams, DirichletGroup, HalfspaceBarrierGroup, InertiaGroup
from .newton import Convergence, NewtonError, SolverVariant, StepReport, minimize


@dataclass
class SimState:
    x: np.ndarray
    v: np.ndarray
    masses: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        self.v = np.array(self.v, dtype=float).reshape(self.x.shape)
        self.masses = np.array(self.masses, dtype=float)
        if self.masses.shape != self.x.shape[:1]:
            raise ValueError("one mass per vertex required")

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1 / 30
    mode: Literal["dynamic", "quasistatic"] = "dynamic"
    tol_v: float = 1e-3
    gravity: tuple = (0.0, -9.81, 0.0)

    def __post_init__(self):
        if self.mode not in ("dynamic", "quasistatic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "dynamic" and not self.dt > 0:
            raise ValueError("dt must be positive in dynamic mode")

    def gravity_vector(self, dim: int) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)[:dim]


@dataclass
class DirichletScript:
    """Penalty-pinned vertices whose targets follow ``targets(t)``."""

    vertices: np.ndarray
    targets: Callable[[float], np.ndarray]
    stiffness: float = 1e8
    release: float | None = None

    def active(self, t: float) -> bool:
        return self.release is None or t < self.release

    def group(self, t: float) -> DirichletGroup:
        return DirichletGroup(self.vertices, self.targets(t), self.stiffness)


@dataclass
class Plane:
    """Half-space ``normal . y >= offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def distance(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1, self.normal.size) @ self.normal - self.offset


@dataclass
class Model:
    """Everything but the state: elastic elements, boundary scripts and contact."""

    rest: np.ndarray
    elastic: list = field(default_factory=list)
    dirichlet: list = field(default_factory=list)
    planes: list = field(default_factory=list)
    barrier: BarrierParams = field(default_factory=BarrierParams)

    @property
    def dim(self) -> int:
        return self.rest.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.rest.shape[0]

    @property
    def domain_size(self) -> float:
        return float(np.linalg.norm(self.rest.max(axis=0) - self.rest.min(axis=0)))

    def contact_groups(self, *positions) -> list:
        """Barrier elements for vertices within the contact distance of a plane."""
        groups = []
        for pl in self.planes:
            near = np.zeros(self.n_vertices, dtype=bool)
            for p in positions:
                near |= pl.distance(p) < self.barrier.dhat
            idx = np.flatnonzero(near)
            if idx.size:
                groups.append(HalfspaceBarrierGroup(idx, pl.normal, pl.offset, self.barrier))
        return groups

    def constraints(self) -> list:
        return [lambda x, pl=pl: bool(np.all(pl.distance(x) > 0)) for pl in self.planes]

    def elastic_energy(self, x: np.ndarray) -> float:
        flat = np.ravel(x)
        return float(sum(np.sum(g.energy(flat)) for g in self.elastic))


def predict(state: SimState, config: StepConfig) -> np.ndarray:
    """Inertial target ``x + dt v + dt^2 g``."""
    if config.mode != "dynamic":
        raise ValueError("prediction only exists in dynamic mode")
    dt = config.dt
    return state.x + dt * state.v + dt * dt * config.gravity_vector(state.dim)


def kinetic_energy(state: SimState) -> float:
    return 0.5 * float(np.sum(state.masses * np.einsum("ij,ij->i", state.v, state.v)))


def gravity_energy(state: SimState, config: StepConfig) -> float:
    return -float(np.sum(state.masses * (state.x @ config.gravity_vector(state.dim))))


def incremental_system(state: SimState, model: Model, config: StepConfig) -> ElementSystem:
    dim = state.dim
    n = state.x.shape[0]
    groups = []
    if config.mode == "dynamic":
        x_tilde = predict(state, config)
        groups.append(InertiaGroup(np.arange(n), state.masses, x_tilde, config.dt))
        t_next = state.t + config.dt
        contact = model.contact_groups(state.x, x_tilde)
    else:
        t_next = state.t
        contact = model.contact_groups(state.x)
    groups += list(model.elastic)
    groups += [d.group(t_next) for d in model.dirichlet if d.active(t_next)]
    groups += contact
    return ElementSystem(groups, n * dim, dim, constraints=model.constraints())


def step(state: SimState, model: Model, config: StepConfig, variant: SolverVariant):
    """One backward-Euler step; returns ``(new_state, StepReport)``."""
    system = incremental_system(state, model, config)
    conv = Convergence(dt=config.dt, tol_v=config.tol_v)
    x, report = minimize(system, state.x.ravel(), variant, conv)
    x = x.reshape(state.x.shape)
    v = (x - state.x) / config.dt
    return SimState(x, v, state.masses, state.t + config.dt), report


def quasistatic_solve(state: SimState, model: Model, config: StepConfig, variant: SolverVariant):
    """Inertia-free equilibrium at the Dirichlet targets of ``state.t``."""
    if not model.dirichlet:
        raise ValueError("quasistatic solve needs at least one Dirichlet anchor")
    config = replace(config, mode="quasistatic")
    system = incremental_system(state, model, config)
    conv = Convergence(domain_size=model.domain_size)
    x, report = minimize(system, state.x.ravel(), variant, conv)
    x = x.reshape(state.x.shape)
    return SimState(x, np.zeros_like(x), state.masses, state.t), report


@dataclass
class Trajectory:
    states: list
    reports: list
    failure: str | None = None
    failed_report: StepReport | None = None


def simulate(state: SimState, model: Model, config: StepConfig, variant: SolverVariant,
             n_steps: int, keep_states: bool = True) -> Trajectory:
    """Advance ``n_steps``; a solver failure stops the run and is recorded."""
    traj = Trajectory([state] if keep_states else [], [])
    for _ in range(n_steps):
        try:
            state, rep = step(state, model, config, variant)
        except NewtonError as exc:
            traj.failure = f"t={state.t:.4f}: {type(exc).__name__}: {exc}"
            traj.failed_report = getattr(exc, "report", None)
            break
        traj.reports.append(rep)
        if keep_states:
            traj.states.append(state)
    if not keep_states:
        traj.states.append(state)
    return traj
