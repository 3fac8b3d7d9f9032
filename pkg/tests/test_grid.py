import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freebound.grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    ball_domain_integral,
    ball_integral,
    integrate_box,
    integrate_domain,
    integrate_domain_sharp,
    read_fld1,
    region_volfrac,
    sample_values,
    sphere_points,
    surface_measure,
    volume,
    write_fld1,
)


def test_box_spacing_and_shape():
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 128)
    assert g.h == pytest.approx(1.0 / 32.0)
    assert g.node_shape == (129, 129)
    assert np.allclose(g.axis(0)[[0, -1]], [-2.0, 2.0])


def test_box_rejects_bad_aspect():
    with pytest.raises(ValueError):
        Grid.box([0.0, 0.0], [1.0, 2.0], 32)


def test_half_square_volume():
    g = Grid.box([0.0, 0.0], [1.0, 1.0], 64)
    dom = DomainRep.from_callable(g, lambda X, Y: 0.5 - X)
    assert volume(dom) == pytest.approx(0.5, abs=1e-12)


def test_disk_volume():
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 256)
    dom = DomainRep.from_callable(g, lambda X, Y: 1.0 - np.sqrt(X**2 + Y**2))
    assert volume(dom) == pytest.approx(np.pi, abs=2e-4)


def test_ball_volume_3d():
    g = Grid.box([-1.5] * 3, [1.5] * 3, 48)
    dom = DomainRep.from_callable(
        g, lambda X, Y, Z: 1.0 - np.sqrt(X**2 + Y**2 + Z**2)
    )
    assert volume(dom) == pytest.approx(4.0 * np.pi / 3.0, rel=2e-3)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.1, 0.9))
def test_halfplane_volfrac_exact(c):
    g = Grid.box([0.0, 0.0], [1.0, 1.0], 32)
    X, _ = g.nodes()
    frac = region_volfrac(g, c - X)
    area = float(frac.sum() * g.h**2)
    assert area == pytest.approx(c, abs=2e-3)


def test_integrate_domain_vs_sharp_disk():
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 256)
    dom = DomainRep.from_callable(g, lambda X, Y: 1.0 - np.sqrt(X**2 + Y**2))
    ones = np.ones(g.node_shape)
    assert integrate_domain(dom, ones) == pytest.approx(np.pi, abs=2e-4)
    assert integrate_domain_sharp(dom, ones) == pytest.approx(np.pi, abs=2e-3)


def test_integrate_box_constant():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 32)
    assert integrate_box(g, np.ones(g.node_shape)) == pytest.approx(4.0)


def test_sphere_points_unit_norm():
    for dim in (2, 3):
        pts = sphere_points(dim)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_surface_measure_oracles():
    assert surface_measure(2, 1.5) == pytest.approx(2.0 * np.pi * 1.5)
    assert surface_measure(3, 2.0) == pytest.approx(4.0 * np.pi * 4.0)


def test_ball_integral_constant():
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 128)
    f = ScalarField.constant(g, 1.0)
    ball = BallRegion(np.zeros(2), 0.8)
    assert ball_integral(f, ball, "volume") == pytest.approx(
        np.pi * 0.64, rel=1e-3
    )
    assert ball_integral(f, ball, "surface") == pytest.approx(
        2.0 * np.pi * 0.8, rel=1e-6
    )


def test_ball_domain_integral_half_disk():
    # ball of radius 0.5 centered on the straight edge of a half-plane
    # domain covers exactly half its area
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 256)
    dom = DomainRep.from_callable(g, lambda X, Y: -X)
    ball = BallRegion(np.zeros(2), 0.5)
    ones = np.ones(g.node_shape)
    got = ball_domain_integral(ones, dom, ball)
    assert got == pytest.approx(np.pi * 0.25 / 2.0, rel=2e-3)
    got_sharp = ball_domain_integral(ones, dom, ball, sharp=True)
    assert got_sharp == pytest.approx(np.pi * 0.25 / 2.0, rel=2e-3)


@settings(max_examples=20, deadline=None)
@given(
    cx=st.floats(-0.5, 0.5),
    cy=st.floats(-0.5, 0.5),
    r=st.floats(0.3, 0.9),
)
def test_ball_region_contains_its_center(cx, cy, r):
    ball = BallRegion(np.array([cx, cy]), r)
    assert ball.radius == r
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 64)
    assert g.contains_ball(ball.center, ball.radius)


def test_sample_at_nodes_is_exact():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 16)
    X, Y = g.nodes()
    f = ScalarField(g, X + 2.0 * Y)
    got = f.sample(g.node_coords())
    assert np.allclose(got, (X + 2.0 * Y).ravel())


def test_sample_is_bilinear_exact_on_affine():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 16)
    X, Y = g.nodes()
    vals = 1.0 + 3.0 * X - 2.0 * Y
    pts = np.array([[0.123, -0.457], [0.9, 0.9], [-0.99, 0.01]])
    got = sample_values(g, vals, pts)
    want = 1.0 + 3.0 * pts[:, 0] - 2.0 * pts[:, 1]
    assert np.allclose(got, want)


def test_fld_round_trip(tmp_path):
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 24)
    X, Y = g.nodes()
    f = ScalarField(g, np.sin(X) * np.cos(Y))
    path = str(tmp_path / "f.fld")
    write_fld1(path, f)
    back = read_fld1(path)
    assert back.grid.node_shape == g.node_shape
    assert np.array_equal(back.values, f.values)
    assert np.allclose(back.grid.origin, g.origin)


def test_empty_domain_flag():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 16)
    dom = DomainRep.from_callable(g, lambda X, Y: -1.0 + 0.0 * X)
    assert dom.is_empty()
