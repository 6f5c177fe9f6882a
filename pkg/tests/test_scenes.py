import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppn.meshes import grid_tri_mesh, read_mesh, write_mesh
from ppn.scenes import (ParseError, ValidationError, build_model, bundled_scenes, keyframe_displacement,
                        load_scene, parse_scene)

MINIMAL = """
schema_version = 1
name = "beam"
duration = 1.0
dt = 0.05
gravity = [0.0, -9.81]

[mesh]
generator = "block2d"
resolution = [8, 2]
size = [1.0, 0.1]
"""


def test_minimal_scene():
    spec = parse_scene(MINIMAL)
    assert spec.name == "beam" and spec.dim == 2 and spec.n_steps == 20
    model, state, cfg = build_model(spec)
    assert state.x.shape == (27, 2)
    assert np.allclose(cfg.gravity_vector(2), [0.0, -9.81])
    assert model.dirichlet == [] and model.planes == []


def test_negative_dt():
    with pytest.raises(ValidationError) as info:
        parse_scene(MINIMAL.replace("dt = 0.05", "dt = -0.05"))
    assert info.value.field == "dt"


def test_press2d_sample():
    spec = load_scene("press2d")
    assert len(spec.dirichlet) == 2 and len(spec.contact) == 1
    model, state, _ = build_model(spec)
    assert len(model.dirichlet) == 2 and len(model.planes) == 1
    assert np.all(model.planes[0].distance(state.x) > 0)


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError) as info:
        parse_scene(MINIMAL + "colour = 'red'\n")
    with pytest.raises(ValidationError) as info:
        parse_scene(MINIMAL + "wobble = 3\n")
    assert info.value.field == "mesh.wobble"


def test_parse_error_location():
    with pytest.raises(ParseError) as info:
        parse_scene('name = "x"\ndt = = 3\n')
    assert info.value.line == 2 and info.value.column is not None


@pytest.mark.parametrize("edit,field", [
    (("generator = \"block2d\"", "generator = \"torus\""), "mesh.generator"),
    (("resolution = [8, 2]", "resolution = [8]"), "mesh.resolution"),
    (("duration = 1.0", "duration = 0.0"), "duration"),
    (("gravity = [0.0, -9.81]", "gravity = [0.0, -9.81, 0.0]"), "gravity"),
    (("schema_version = 1", "schema_version = 7"), "schema_version"),
])
def test_validation_names_field(edit, field):
    with pytest.raises(ValidationError) as info:
        parse_scene(MINIMAL.replace(*edit))
    assert info.value.field == field


def test_dirichlet_vertex_must_exist():
    text = MINIMAL + "[[dirichlet]]\nvertices = [0, 999]\nkeyframes = [[0.0]]\n"
    with pytest.raises(ValidationError) as info:
        parse_scene(text)
    assert info.value.field == "dirichlet[0].vertices"


def test_all_bundled_scenes_build():
    names = bundled_scenes()
    assert {"press2d", "slingshot2d", "stretch2d", "chain", "beam2d", "block3d", "spin2d", "buckle"} <= set(names)
    for name in names:
        spec = load_scene(name)
        model, state, cfg = build_model(spec)
        assert state.x.shape == (model.n_vertices, spec.dim)
        assert np.all(state.masses > 0)


def test_mesh_file_roundtrip(tmp_path):
    verts, tris = grid_tri_mesh(3, 2, size=(0.3, 0.2))
    write_mesh(tmp_path / "m.txt", verts, tris)
    v2, t2 = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(verts, v2) and np.array_equal(tris, t2)
    scene = MINIMAL.replace('generator = "block2d"\nresolution = [8, 2]\nsize = [1.0, 0.1]', 'file = "m.txt"')
    (tmp_path / "s.toml").write_text(scene)
    spec = load_scene(tmp_path / "s.toml")
    model, state, _ = build_model(spec)
    assert np.array_equal(state.x, verts)


def test_bad_mesh_file(tmp_path):
    (tmp_path / "bad.txt").write_text("v 0 0\nv 1 0\nc 0 1 7\n")
    scene = MINIMAL.replace('generator = "block2d"\nresolution = [8, 2]\nsize = [1.0, 0.1]', 'file = "bad.txt"')
    (tmp_path / "s.toml").write_text(scene)
    with pytest.raises(ValidationError) as info:
        load_scene(tmp_path / "s.toml")
    assert info.value.field == "mesh.file"


def test_missing_scene():
    with pytest.raises(FileNotFoundError):
        load_scene("no_such_scene")


@given(st.floats(-1.0, 3.0))
def test_keyframes_piecewise_linear(t):
    kf = [[0.0, 0.0, 0.0], [1.0, 2.0, -1.0], [2.0, 2.0, 0.0]]
    u = keyframe_displacement(kf, t, 2)
    if t <= 0:
        assert np.allclose(u, [0, 0])
    elif t <= 1:
        assert np.allclose(u, [2 * t, -t])
    elif t <= 2:
        assert np.allclose(u, [2.0, -1 + (t - 1)])
    else:
        assert np.allclose(u, [2.0, 0.0])


def test_seeded_perturbation_is_deterministic():
    text = MINIMAL + "[initial]\nperturbation = 0.01\nseed = 4\n"
    a = build_model(parse_scene(text))[1].x
    b = build_model(parse_scene(text))[1].x
    c = build_model(parse_scene(text.replace("seed = 4", "seed = 5")))[1].x
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_penetrating_start_rejected():
    spec = load_scene("press2d")
    spec.initial.perturbation = 0.01
    with pytest.raises(ValidationError) as info:
        build_model(spec)
    assert info.value.field == "initial"
