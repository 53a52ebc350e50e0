import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbm.errors import ConfigError
from sbm.grid import Field, GridSpec, initial_field

G = GridSpec(-8, 8, 1024)


@pytest.mark.parametrize("desc", [
    {"kind": "triangle", "center": 0, "width": 1, "mass": 1},
    {"kind": "gaussian-bump", "center": 0.5, "sigma": 0.3, "mass": 2.5},
    {"kind": "uniform", "left": -1, "right": 2, "mass": 0.7},
])
def test_initial_mass_exact(desc):
    f = initial_field(desc, G)
    assert f.mass == pytest.approx(desc["mass"], rel=1e-13)
    assert f.is_nonnegative()


def test_triangle_shape():
    f = initial_field({"kind": "triangle", "center": 0, "width": 1, "mass": 1}, G)
    # x = 0 is a face; the neighbouring centres sit dx/2 down the slopes
    assert f.at(0.0) == pytest.approx(1.0 - G.dx / 2, abs=1e-12)
    assert np.all(f.values[np.abs(G.x) > 1 + G.dx] == 0)
    assert np.allclose(f.values, f.values[::-1], atol=1e-14)


def test_zero_mass_and_errors():
    assert initial_field({"kind": "uniform", "left": 0, "right": 1, "mass": 0}, G).mass == 0
    bad = [
        {"kind": "spike"},
        {"kind": "triangle", "center": 0, "width": 0, "mass": 1},
        {"kind": "triangle", "center": 0, "width": 1, "mass": -1},
        {"kind": "gaussian-bump", "center": 0, "sigma": -1, "mass": 1},
        {"kind": "uniform", "left": 1, "right": 0, "mass": 1},
        {"kind": "uniform", "left": 20, "right": 21, "mass": 1},
        {"kind": "triangle", "center": 0, "mass": 1},
    ]
    for d in bad:
        with pytest.raises(ConfigError):
            initial_field(d, G)


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec(1, 0, 64)
    with pytest.raises(ConfigError):
        GridSpec(0, 1, 4)
    with pytest.raises(ConfigError):
        GridSpec(0, 1, 64, "periodic")
    with pytest.raises(ConfigError):
        Field(G, np.zeros(10))
    with pytest.raises(ConfigError):
        Field(G, np.full(G.nx, np.nan))


def test_face_index():
    assert G.face_index(0.0) == 512
    assert G.face_index(-8.0) == 0 and G.face_index(8.0) == 1024
    assert G.face_index(0.001) is None
    assert G.face_index(9.0) is None
    assert G.refined(2).nx == 2048


def test_mass_right_of():
    f = initial_field({"kind": "uniform", "left": -1, "right": 1, "mass": 0.5}, G)
    assert f.mass_right_of(0.0) == pytest.approx(0.25, abs=1e-14)
    assert f.mass_right_of(-20) == f.mass and f.mass_right_of(20) == 0.0
    # half a cell
    a = G.faces[600] + 0.5 * G.dx
    assert f.mass_right_of(a) == pytest.approx(f.mass_right_of(G.faces[601]) + 0.5 * G.dx * f.values[600], abs=1e-15)


@given(st.floats(-9, 9), st.floats(-9, 9))
def test_mass_right_of_monotone(a, b):
    f = initial_field({"kind": "gaussian-bump", "center": 0.3, "sigma": 1, "mass": 1}, G)
    lo, hi = min(a, b), max(a, b)
    assert f.mass_right_of(lo) >= f.mass_right_of(hi) - 1e-15
    assert 0 <= f.mass_right_of(hi) <= f.mass + 1e-15
