import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_green.errors import MeshError
from neumann_green.mesh import (
    BallCylinder,
    DomainCylinder,
    SpaceTimePoint,
    build_interval_mesh,
    build_l_shape_mesh,
    build_polygon_mesh,
    build_rectangle_mesh,
    dist_to_parabolic_boundary,
    dump_mesh,
    load_mesh,
    parabolic_distance,
)


def test_interval_basic():
    m = build_interval_mesh(0.0, 1.0, 4)
    assert m.num_nodes == 5
    assert m.num_elements == 4
    assert m.dimension == 1
    assert m.domain_measure == pytest.approx(1.0)
    assert m.mesh_size == pytest.approx(0.25)


def test_interval_shifted():
    m = build_interval_mesh(-2.0, 2.0, 8)
    assert m.domain_measure == pytest.approx(4.0)
    assert m.mesh_size == pytest.approx(0.5)
    assert m.diameter == pytest.approx(4.0)


@pytest.mark.parametrize("a,b,cells", [(1.0, 0.0, 4), (0.0, 1.0, 0), (0.0, 1.0, 2.5)])
def test_interval_rejects_bad_input(a, b, cells):
    with pytest.raises(MeshError):
        build_interval_mesh(a, b, cells)


def test_unit_square_area_and_size():
    m = build_rectangle_mesh(0, 1, 0, 1, 0.25)
    assert m.domain_measure == pytest.approx(1.0)
    assert m.mesh_size <= 0.25 + 1e-12
    assert np.all(m.element_measures > 0)


def test_l_shape_area():
    m = build_l_shape_mesh(0.25)
    assert m.domain_measure == pytest.approx(0.75)


def test_polygon_square_matches_rectangle_area():
    m = build_polygon_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], 0.2)
    assert m.domain_measure == pytest.approx(1.0)


@pytest.mark.parametrize("verts", [
    [(0, 0), (1, 0), (2, 0)],                      # collinear
    [(0, 0), (1, 1), (1, 0), (0, 1)],              # self-intersecting bow tie
    [(0, 0), (1, 0)],
])
def test_polygon_rejects_degenerate(verts):
    with pytest.raises(MeshError):
        build_polygon_mesh(verts, 0.2)


def test_boundary_distance_square():
    m = build_rectangle_mesh(0, 1, 0, 1, 0.25)
    d = m.boundary_distance([[0.5, 0.5], [0.1, 0.6], [0.0, 0.3]])
    assert d == pytest.approx([0.5, 0.1, 0.0], abs=1e-12)


def test_refine_halves_size_and_keeps_area():
    m = build_rectangle_mesh(0, 1, 0, 1, 0.5)
    r = m.refine()
    assert r.domain_measure == pytest.approx(m.domain_measure)
    assert r.mesh_size == pytest.approx(0.5 * m.mesh_size)
    assert r.num_elements == 4 * m.num_elements


def test_dump_load_round_trip(tmp_path):
    m = build_l_shape_mesh(0.25)
    path = tmp_path / "l.npz"
    dump_mesh(m, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.nodes, m.nodes)
    np.testing.assert_array_equal(back.elements, m.elements)


def test_parabolic_distance_values():
    X = SpaceTimePoint((0.0, 0.0), 16.0)
    Y = SpaceTimePoint((3.0, 0.0), 0.0)
    assert parabolic_distance(X, Y) == pytest.approx(4.0)
    Z = SpaceTimePoint((3.0, 0.0), 15.0)
    assert parabolic_distance(X, Z) == pytest.approx(3.0)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_parabolic_distance_is_symmetric(v):
    X = SpaceTimePoint(v[:2], v[2])
    Y = SpaceTimePoint(v[3:5], v[5])
    assert parabolic_distance(X, Y) == pytest.approx(parabolic_distance(Y, X))
    assert parabolic_distance(X, X) == 0.0


def test_distance_to_parabolic_boundary():
    m = build_rectangle_mesh(0, 1, 0, 1, 0.25)
    X = SpaceTimePoint((0.5, 0.5), 1.0)
    assert dist_to_parabolic_boundary(X, DomainCylinder(m)) == pytest.approx(0.5)
    assert dist_to_parabolic_boundary(X, DomainCylinder(m, t_start=0.96)) == pytest.approx(0.2)
    ball = BallCylinder(SpaceTimePoint((0.5, 0.5), 1.0), 0.4, "minus")
    assert ball.time_interval == pytest.approx((0.84, 1.0))
    assert dist_to_parabolic_boundary(SpaceTimePoint((0.6, 0.5), 1.0), ball) == pytest.approx(0.3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.5))
def test_rectangle_size_never_exceeds_target(h):
    m = build_rectangle_mesh(0, 1, 0, 0.5, h)
    assert m.mesh_size <= h * (1 + 1e-12)
    assert math.isclose(m.domain_measure, 0.5, rel_tol=1e-12)
