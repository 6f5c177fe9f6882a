"""Scene descriptions: parsing, validation and construction of simulation models.

Scene files are TOML with a fixed set of sections; unknown keys are rejected.
See ``README.md`` for the schema and ``ppn/scenes/*.toml`` for samples.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .energies import BarrierParams, MaterialParams, NeoHookeanTriGroup, SpringGroup, StableNeoHookeanTetGroup
from .integrator import DirichletScript, Model, Plane, SimState, StepConfig
from .meshes import grid_tet_mesh, grid_tri_mesh, lumped_masses, read_mesh

SCHEMA_VERSION = 1
GENERATORS = ("block2d", "block3d", "chain")


class ParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class ValidationError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class MeshSpec:
    generator: str | None = "block2d"
    file: str | None = None
    resolution: list = field(default_factory=lambda: [8, 4])
    size: list = field(default_factory=lambda: [1.0, 0.5])
    origin: list | None = None


@dataclass
class MaterialSpec:
    youngs_modulus: float = 1e5
    poisson_ratio: float = 0.4
    density: float = 1000.0
    thickness: float = 1.0
    spring_stiffness: float = 1e3
    prestretch: float = 1.0


@dataclass
class DirichletSpec:
    region: str | None = None
    box: list | None = None
    vertices: list | None = None
    keyframes: list = field(default_factory=lambda: [[0.0]])
    stiffness: float = 1e8
    release: float | None = None


@dataclass
class ContactSpec:
    normal: list
    offset: float = 0.0


@dataclass
class InitialSpec:
    velocity: list | None = None
    angular_velocity: float = 0.0
    perturbation: float = 0.0
    seed: int = 0
    place_dirichlet: bool = False
    scale: float = 1.0


@dataclass
class SceneSpec:
    name: str
    mesh: MeshSpec = field(default_factory=MeshSpec)
    material: MaterialSpec = field(default_factory=MaterialSpec)
    dirichlet: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    barrier: BarrierParams = field(default_factory=BarrierParams)
    initial: InitialSpec = field(default_factory=InitialSpec)
    gravity: list | None = None
    duration: float = 1.0
    dt: float = 1 / 30
    mode: str = "dynamic"
    tol_v: float = 1e-3
    schema_version: int = SCHEMA_VERSION

    @property
    def dim(self) -> int:
        if self.mesh.file is not None:
            return read_mesh(self.mesh.file)[0].shape[1]
        if self.mesh.generator == "chain":
            return len(self.mesh.size)
        return 3 if self.mesh.generator == "block3d" else 2

    @property
    def n_steps(self) -> int:
        """Time steps, or load steps (one equilibrium solve each) when quasistatic."""
        return max(1, int(round(self.duration / self.dt)))


# --- parsing -----------------------------------------------------------------------

_TOP_KEYS = {"schema_version", "name", "gravity", "duration", "dt", "mode", "tol_v",
             "mesh", "material", "dirichlet", "contact", "barrier", "initial"}


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ValidationError(name, "expected a table")
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(name, str(exc)) from None


def parse_scene(text: str, base=None) -> SceneSpec:
    """Parse and validate a TOML scene description.

    Relative mesh file paths resolve against ``base`` (the working directory if None).
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = re.search(r"line (\d+), column (\d+)", msg)
        raise ParseError(msg.split(" (at")[0], *(map(int, m.groups()) if m else (None, None))) from None
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    if "name" not in data:
        raise ValidationError("name", "missing")
    kw = {k: data[k] for k in ("name", "gravity", "duration", "dt", "mode", "tol_v", "schema_version") if k in data}
    spec = SceneSpec(**kw)
    if "mesh" in data:
        spec.mesh = _section(MeshSpec, data["mesh"], "mesh")
        if spec.mesh.file is not None and base is not None and not Path(spec.mesh.file).is_absolute():
            spec.mesh.file = str(Path(base) / spec.mesh.file)
    if "material" in data:
        spec.material = _section(MaterialSpec, data["material"], "material")
    if "barrier" in data:
        spec.barrier = _section(BarrierParams, data["barrier"], "barrier")
    if "initial" in data:
        spec.initial = _section(InitialSpec, data["initial"], "initial")
    spec.dirichlet = [_section(DirichletSpec, d, f"dirichlet[{i}]") for i, d in enumerate(data.get("dirichlet", []))]
    spec.contact = [_section(ContactSpec, c, f"contact[{i}]") for i, c in enumerate(data.get("contact", []))]
    validate(spec)
    return spec


def load_scene(name_or_path) -> SceneSpec:
    """Load a scene file, or a bundled sample by name (e.g. ``"press2d"``)."""
    path = Path(name_or_path)
    if path.suffix != ".toml" or not path.exists():
        bundled = resources.files("ppn") / "scenes" / f"{name_or_path}.toml"
        if not bundled.is_file():
            raise FileNotFoundError(f"no scene file or bundled scene named {name_or_path!r}")
        return parse_scene(bundled.read_text())
    return parse_scene(path.read_text(), base=path.parent)


def bundled_scenes() -> list[str]:
    root = resources.files("ppn") / "scenes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def validate(spec: SceneSpec) -> None:
    if spec.schema_version != SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported version {spec.schema_version}")
    if spec.mode not in ("dynamic", "quasistatic"):
        raise ValidationError("mode", f"unknown mode {spec.mode!r}")
    if not spec.dt > 0:
        raise ValidationError("dt", "must be positive")
    if not spec.duration > 0:
        raise ValidationError("duration", "must be positive")
    if not spec.tol_v > 0:
        raise ValidationError("tol_v", "must be positive")
    mesh = spec.mesh
    if mesh.file is None and mesh.generator not in GENERATORS:
        raise ValidationError("mesh.generator", f"unknown generator {mesh.generator!r}")
    if mesh.file is not None:
        try:
            read_mesh(mesh.file)
        except (OSError, ValueError) as exc:
            raise ValidationError("mesh.file", str(exc)) from None
    dim = spec.dim
    if mesh.file is None:
        want = {"block2d": 2, "block3d": 3, "chain": 1}[mesh.generator]
        if len(mesh.resolution) != want or any(int(r) < 1 for r in mesh.resolution):
            raise ValidationError("mesh.resolution", f"expected {want} positive integers")
        if mesh.generator != "chain" and len(mesh.size) != dim:
            raise ValidationError("mesh.size", f"expected {dim} values")
    if mesh.file is None and mesh.generator == "chain":
        if len(mesh.size) not in (2, 3) or not np.linalg.norm(mesh.size) > 0:
            raise ValidationError("mesh.size", "chain size is a nonzero 2- or 3-vector")
    elif mesh.file is None and any(not s > 0 for s in mesh.size):
        raise ValidationError("mesh.size", "must be positive")
    mat = spec.material
    try:
        MaterialParams(mat.youngs_modulus, mat.poisson_ratio)
    except ValueError as exc:
        raise ValidationError("material", str(exc)) from None
    if not (mat.density > 0 and mat.thickness > 0 and mat.spring_stiffness > 0 and mat.prestretch > 0):
        raise ValidationError("material", "density, thickness, spring_stiffness and prestretch must be positive")
    if not spec.initial.scale > 0:
        raise ValidationError("initial.scale", "must be positive")
    if spec.gravity is not None and len(spec.gravity) != dim:
        raise ValidationError("gravity", f"expected {dim} components")
    n_vertices = None
    for i, d in enumerate(spec.dirichlet):
        name = f"dirichlet[{i}]"
        given = [d.region is not None, d.box is not None, d.vertices is not None]
        if sum(given) != 1:
            raise ValidationError(name, "give exactly one of region, box, vertices")
        if d.region is not None and d.region not in _REGIONS:
            raise ValidationError(f"{name}.region", f"unknown region {d.region!r}")
        if not d.keyframes or any(len(k) not in (1, dim + 1) for k in d.keyframes):
            raise ValidationError(f"{name}.keyframes", f"rows must be [t] or [t, {dim} displacements]")
        times = [k[0] for k in d.keyframes]
        if times != sorted(times):
            raise ValidationError(f"{name}.keyframes", "times must be increasing")
        if not d.stiffness > 0:
            raise ValidationError(f"{name}.stiffness", "must be positive")
        if d.vertices is not None:
            if n_vertices is None:
                n_vertices = len(build_mesh(spec)[0])
            if any(not 0 <= int(v) < n_vertices for v in d.vertices):
                raise ValidationError(f"{name}.vertices", "references a vertex that does not exist")
    for i, c in enumerate(spec.contact):
        if len(c.normal) != dim or not np.linalg.norm(c.normal) > 0:
            raise ValidationError(f"contact[{i}].normal", f"expected a nonzero {dim}-vector")
    if spec.initial.velocity is not None and len(spec.initial.velocity) != dim:
        raise ValidationError("initial.velocity", f"expected {dim} components")


# --- construction ------------------------------------------------------------------

_REGIONS = ("left", "right", "bottom", "top", "front", "back", "first", "last", "all")


def build_mesh(spec: SceneSpec):
    m = spec.mesh
    if m.file is not None:
        return read_mesh(m.file)
    if m.generator == "block2d":
        return grid_tri_mesh(*map(int, m.resolution), m.size, m.origin or (0.0, 0.0))
    if m.generator == "block3d":
        return grid_tet_mesh(*map(int, m.resolution), m.size, m.origin or (0.0, 0.0, 0.0))
    n = int(m.resolution[0])
    direction = np.asarray(m.size, dtype=float)
    origin = np.zeros_like(direction) if m.origin is None else np.asarray(m.origin, dtype=float)
    verts = origin + np.linspace(0.0, 1.0, n + 1)[:, None] * direction
    edges = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return verts, edges


def select_vertices(verts: np.ndarray, d: DirichletSpec) -> np.ndarray:
    if d.vertices is not None:
        return np.asarray(d.vertices, dtype=np.int64)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    tol = 1e-9 * max(float(np.max(hi - lo)), 1.0)
    if d.box is not None:
        a, b = np.asarray(d.box[0], float), np.asarray(d.box[1], float)
        return np.flatnonzero(np.all((verts >= a - tol) & (verts <= b + tol), axis=1))
    axis, side = {"left": (0, 0), "right": (0, 1), "bottom": (1, 0), "top": (1, 1),
                  "back": (2, 0), "front": (2, 1)}.get(d.region, (None, None))
    if d.region == "all":
        return np.arange(len(verts))
    if d.region in ("first", "last"):
        return np.array([0 if d.region == "first" else len(verts) - 1])
    ref = hi[axis] if side else lo[axis]
    return np.flatnonzero(np.abs(verts[:, axis] - ref) <= tol)


def keyframe_displacement(keyframes, t: float, dim: int) -> np.ndarray:
    """Piecewise-linear displacement, held constant outside the keyframe range."""
    rows = [k if len(k) > 1 else [k[0]] + [0.0] * dim for k in keyframes]
    kf = np.asarray(rows, dtype=float)
    return np.array([np.interp(t, kf[:, 0], kf[:, 1 + i]) for i in range(dim)])


def build_model(spec: SceneSpec) -> tuple[Model, SimState, StepConfig]:
    """Model, initial state and step configuration for a scene."""
    verts, cells = build_mesh(spec)
    dim = verts.shape[1]
    mat = spec.material
    params = MaterialParams(mat.youngs_modulus, mat.poisson_ratio)
    if spec.mesh.file is None and spec.mesh.generator == "chain":
        lengths = np.linalg.norm(verts[cells[:, 1]] - verts[cells[:, 0]], axis=1)
        elastic = [SpringGroup(cells, lengths / mat.prestretch, mat.spring_stiffness, dim)]
        masses = np.zeros(len(verts))
        np.add.at(masses, cells.ravel(), np.repeat(0.5 * mat.density * lengths, 2))
    elif dim == 2:
        elastic = [NeoHookeanTriGroup(cells, verts, params, mat.thickness)]
        masses = lumped_masses(verts, cells, mat.density, mat.thickness)
    else:
        elastic = [StableNeoHookeanTetGroup(cells, verts, params)]
        masses = lumped_masses(verts, cells, mat.density)

    scripts = []
    for d in spec.dirichlet:
        idx = select_vertices(verts, d)
        base = verts[idx].copy()
        scripts.append(DirichletScript(
            idx, lambda t, base=base, kf=d.keyframes: base + keyframe_displacement(kf, t, dim),
            d.stiffness, d.release))
    planes = [Plane(c.normal, c.offset) for c in spec.contact]
    model = Model(verts, elastic, scripts, planes, spec.barrier)

    lo = verts.min(axis=0)
    x = lo + spec.initial.scale * (verts - lo)
    if spec.initial.place_dirichlet:
        for s in scripts:
            x[s.vertices] = s.targets(0.0)
    if spec.initial.perturbation:
        rng = np.random.default_rng(spec.initial.seed)
        x += spec.initial.perturbation * rng.standard_normal(x.shape)
    if any(np.any(pl.distance(x) <= 0) for pl in planes):
        raise ValidationError("initial", "initial state penetrates a contact plane")
    v = np.zeros_like(x)
    if spec.initial.velocity is not None:
        v += np.asarray(spec.initial.velocity, dtype=float)
    if spec.initial.angular_velocity and dim == 2:
        r = verts - verts.mean(axis=0)
        v += spec.initial.angular_velocity * np.column_stack([-r[:, 1], r[:, 0]])
    gravity = spec.gravity if spec.gravity is not None else ([0.0, -9.81, 0.0][:dim])
    config = StepConfig(dt=spec.dt, mode=spec.mode, tol_v=spec.tol_v, gravity=tuple(gravity))
    return model, SimState(x, v, masses), config
