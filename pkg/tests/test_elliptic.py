import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freebound.elliptic import (
    DirichletOperator,
    DirichletProblem,
    DivFormProblem,
    residual_check,
    solve_dirichlet,
    solve_divform,
)
from freebound.errors import EmptyDomain
from freebound.grid import DomainRep, Grid, ScalarField


def _disk(n=128, r=1.0, box=2.0):
    g = Grid.box([-box, -box], [box, box], n)
    dom = DomainRep.from_callable(g, lambda X, Y: r - np.sqrt(X**2 + Y**2))
    return g, dom


def test_poisson_disk_center_value():
    # -Lap u = 1 on the unit disk has u = (1 - r^2)/4, so u(0) = 1/4
    g, dom = _disk(128)
    u = solve_dirichlet(DirichletProblem(dom, ScalarField.constant(g, 1.0)))
    X, Y = g.nodes()
    exact = np.clip(1.0 - X**2 - Y**2, 0.0, None) / 4.0
    mask = dom.inside_mask()
    assert np.abs(u.values - exact)[mask].max() < 2e-4
    i = g.node_shape[0] // 2
    assert u.values[i, i] == pytest.approx(0.25, abs=1e-4)


def test_manufactured_convergence_rate():
    # inhomogeneous Dirichlet data taken from u* = sin(pi x) sin(pi y)
    errs = []
    for n in (96, 192):
        g = Grid.box([-1.5, -1.5], [1.5, 1.5], n)
        X, Y = g.nodes()
        dom = DomainRep.from_phi(ScalarField(g, 1.0 - np.sqrt(X**2 + Y**2)))
        ue = np.sin(np.pi * X) * np.sin(np.pi * Y)
        u = solve_dirichlet(
            DirichletProblem(
                dom,
                ScalarField(g, 2.0 * np.pi**2 * ue),
                boundary_data=ScalarField(g, ue),
            )
        )
        errs.append(np.abs(u.values - ue)[dom.inside_mask()].max())
    assert errs[0] / errs[1] > 1.9


def test_residual_check_small():
    g, dom = _disk(64)
    p = DirichletProblem(dom, ScalarField.constant(g, 1.0), tol=1e-10)
    u = solve_dirichlet(p)
    assert residual_check(u, p) < 1e-8


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-5.0, 5.0))
def test_solution_is_linear_in_rhs(a):
    g, dom = _disk(48)
    op = DirichletOperator(dom)
    u1 = solve_dirichlet(
        DirichletProblem(dom, ScalarField.constant(g, 1.0), tol=1e-12), op=op
    )
    ua = solve_dirichlet(
        DirichletProblem(dom, ScalarField.constant(g, a), tol=1e-12), op=op
    )
    assert np.abs(ua.values - a * u1.values).max() < 1e-8 * max(1.0, abs(a))


def test_bilinear_form_symmetric_positive():
    g, dom = _disk(48)
    op = DirichletOperator(dom)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(g.node_shape) * dom.inside_mask()
    y = rng.standard_normal(g.node_shape) * dom.inside_mask()
    assert op.bilinear(x, y) == pytest.approx(op.bilinear(y, x), rel=1e-12)
    assert op.bilinear(x, x) > 0.0


def test_dirichlet_form_matches_gradient_energy():
    # for -Lap u = 1 on the unit disk, int |grad u|^2 = pi/8
    g, dom = _disk(192)
    op = DirichletOperator(dom)
    u = solve_dirichlet(
        DirichletProblem(dom, ScalarField.constant(g, 1.0), tol=1e-10), op=op
    )
    # the cut-cell quadrature clips the boundary band, so expect O(h)
    assert op.dirichlet_form(u.values, u.values) == pytest.approx(
        np.pi / 8.0, abs=0.5 * g.h
    )


def test_divform_oracle():
    # with F = grad psi, psi = (1 - r^2)/4: div F = -1, so -Lap w = -1
    # and w = -psi on the disk
    g, dom = _disk(128)
    X, Y = g.nodes()
    flux = (-X / 2.0, -Y / 2.0)
    w = solve_divform(DivFormProblem(dom, flux))
    exact = -np.clip(1.0 - X**2 - Y**2, 0.0, None) / 4.0
    assert np.abs(w.values - exact)[dom.inside_mask()].max() < 5e-3


def test_empty_domain_raises():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 16)
    dom = DomainRep.from_callable(g, lambda X, Y: -1.0 + 0.0 * X)
    with pytest.raises(EmptyDomain):
        solve_dirichlet(DirichletProblem(dom, ScalarField.constant(g, 1.0)))


def test_solve_3d_ball_center_value():
    # -Lap u = 1 on the unit ball in R^3 has u = (1 - r^2)/6
    g = Grid.box([-1.5] * 3, [1.5] * 3, 48)
    dom = DomainRep.from_callable(
        g, lambda X, Y, Z: 1.0 - np.sqrt(X**2 + Y**2 + Z**2)
    )
    u = solve_dirichlet(DirichletProblem(dom, ScalarField.constant(g, 1.0)))
    i = g.node_shape[0] // 2
    assert u.values[i, i, i] == pytest.approx(1.0 / 6.0, abs=2e-3)
