import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freebound.blowup import (
    classify_boundary,
    halfplane_fit,
    reference_grid,
    reports_to_csv,
    rescale,
    weiss_trace,
)
from freebound.calculus import ProblemData
from freebound.errors import BallOutsideGrid, ScaleBelowGrid
from freebound.grid import DomainRep, Grid, ScalarField


def _halfplane_field(n=512, nu=(1.0, 0.0), alpha=1.0):
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], n)
    X, Y = g.nodes()
    s = nu[0] * X + nu[1] * Y
    u = ScalarField(g, alpha * np.clip(s, 0.0, None))
    dom = DomainRep.from_phi(ScalarField(g, s))
    return g, u, dom


def test_reference_grid_covers_unit_ball():
    for dim in (2, 3):
        ref = reference_grid(dim)
        assert ref.dim == dim
        assert ref.contains_ball(np.zeros(dim), 1.0)


def test_rescale_homogeneous_function_invariant():
    # u(x) = (x . e1)_+ is 1-homogeneous: u_{0,r} = u for every r
    g, u, _ = _halfplane_field(256)
    ref = reference_grid(2)
    for r in (0.5, 0.25, 0.1):
        ur = rescale(u, np.zeros(2), r)
        X, _ = ref.nodes()
        assert np.abs(ur.values - np.clip(X, 0.0, None)).max() < 1e-12


@settings(max_examples=15, deadline=None)
@given(
    a=st.floats(0.3, 3.0),
    x0=st.floats(-0.4, 0.4),
    r=st.floats(0.15, 0.5),
)
def test_rescale_covariance_on_linear(a, x0, r):
    # for linear u the blow-up formula u(x0 + r y)/r is exact on nodes
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 128)
    X, Y = g.nodes()
    u = ScalarField(g, a * X + 0.5 * Y)
    ur = rescale(u, np.array([x0, 0.0]), r)
    Xr, Yr = ur.grid.nodes()
    want = (a * (x0 + r * Xr) + 0.5 * r * Yr) / r
    assert np.abs(ur.values - want).max() < 1e-10 * max(1.0, a / r)


def test_rescale_rejects_tiny_radius():
    g, u, _ = _halfplane_field(64)
    with pytest.raises(ScaleBelowGrid):
        rescale(u, np.zeros(2), 2.0 * g.h)


def test_rescale_rejects_ball_outside():
    g, u, _ = _halfplane_field(64)
    with pytest.raises(BallOutsideGrid):
        rescale(u, np.array([1.9, 0.0]), 0.5)


def test_weiss_halfplane_constant():
    # W = pi/2 for the half-plane with Lam = 1 in d = 2
    g, u, dom = _halfplane_field(512)
    radii = [1.2 * 0.75**k for k in range(6)]
    tr = weiss_trace(u, np.zeros(2), 1.0, radii, dom=dom)
    W = np.array(tr.W)
    assert np.abs(W - np.pi / 2.0).max() < 2e-3
    assert max(tr.D) < 1e-4
    assert tr.defect <= 1e-3


def test_weiss_radii_must_decrease():
    g, u, dom = _halfplane_field(128)
    with pytest.raises(ValueError):
        weiss_trace(u, np.zeros(2), 1.0, [0.5, 0.6], dom=dom)


def test_weiss_csv(tmp_path):
    g, u, dom = _halfplane_field(256)
    tr = weiss_trace(u, np.zeros(2), 1.0, [0.8, 0.6], dom=dom)
    path = tmp_path / "w.csv"
    tr.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "r,W,D"
    assert len(lines) == 3


@settings(max_examples=10, deadline=None)
@given(
    theta=st.floats(0.0, 2.0 * np.pi),
    alpha=st.floats(0.4, 2.0),
    beta=st.floats(0.4, 2.0),
)
def test_halfplane_fit_recovers_pair(theta, alpha, beta):
    ref = reference_grid(2)
    X, Y = ref.nodes()
    nu = np.array([np.cos(theta), np.sin(theta)])
    s = np.clip(nu[0] * X + nu[1] * Y, 0.0, None)
    u = ScalarField(ref, alpha * s)
    v = ScalarField(ref, beta * s)
    rep = halfplane_fit(u, v, Qx0=alpha * beta)
    assert rep.verdict == "regular"
    assert rep.fit_error < 0.02
    assert rep.alpha == pytest.approx(alpha, rel=0.05)
    assert rep.beta == pytest.approx(beta, rel=0.05)
    assert float(np.dot(rep.best_nu, nu)) > 0.999


def test_halfplane_fit_flags_two_plane_as_singular():
    # |x . nu| is the two-plane profile; no single half-plane fits it
    ref = reference_grid(2)
    X, Y = ref.nodes()
    u = ScalarField(ref, np.abs(X))
    rep = halfplane_fit(u, u, Qx0=1.0)
    assert rep.verdict == "singular"
    assert rep.fit_error >= 0.3


def test_classify_halfplane_regular():
    g, u, dom = _halfplane_field(512)
    # pass the exact harmonic pair directly so no PDE solve is needed
    data = ProblemData.constants(2, f=1.0, g=1.0, Q=1.0)
    reports = classify_boundary(
        dom, data, [np.array([0.0, 0.0])], u=u, v=u
    )
    assert len(reports) == 1
    rep = reports[0]
    assert rep.verdict == "regular"
    assert abs(rep.alpha * rep.beta - 1.0) <= 0.1


def test_reports_csv(tmp_path):
    ref = reference_grid(2)
    X, _ = ref.nodes()
    u = ScalarField(ref, np.clip(X, 0.0, None))
    rep = halfplane_fit(u, u, Qx0=1.0)
    path = tmp_path / "r.csv"
    reports_to_csv([rep], str(path))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("x,y,z,nu_x")
    assert lines[1].endswith("regular")
