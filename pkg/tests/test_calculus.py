import numpy as np
import pytest

from freebound.analytic import AnalyticScalar, BumpField
from freebound.calculus import (
    ProblemData,
    energy_Ef,
    energy_F,
    energy_G,
    first_variation_forms,
    one_phase_variations,
    second_variation,
    solve_state_pair,
)
from freebound.grid import BallRegion, DomainRep, Grid, ScalarField


def test_problem_data_constants_resolve(grid128, constant_data):
    C1, C2, c_Q, C_Q = constant_data.resolved_constants(grid128)
    assert (C1, C2) == (1.0, 1.0)
    assert (c_Q, C_Q) == (0.25, 0.25)
    constant_data.validate_on(grid128)


def test_problem_data_rejects_negative_q(grid128):
    bad = ProblemData(
        f=AnalyticScalar.constant(1.0, 2),
        g=AnalyticScalar.constant(1.0, 2),
        Q=AnalyticScalar.constant(-1.0, 2),
    )
    with pytest.raises(ValueError):
        bad.validate_on(grid128)


def test_energy_Ef_unit_disk(unit_ball_128, constant_data):
    # u = (1 - r^2)/4 gives int |grad u|^2 = pi/8 and int u = pi/8,
    # so E_f = pi/16 - pi/8 = -pi/16
    # discrete gradients see the boundary kink, so the error is O(h)
    u, _, _ = solve_state_pair(unit_ball_128, constant_data, tol=1e-10)
    E = energy_Ef(u, constant_data, unit_ball_128)
    assert E == pytest.approx(-np.pi / 16.0, abs=0.3 * unit_ball_128.grid.h)


def test_energy_F_unit_disk(unit_ball_128, constant_data):
    # F(B1) = -int u + Q pi = -pi/8 + pi/4 = pi/8 for Q = 1/4
    F = energy_F(unit_ball_128, constant_data)
    assert F == pytest.approx(np.pi / 8.0, abs=2e-3)


def test_energy_F_scales_with_g(unit_ball_128):
    base = ProblemData.constants(2, f=1.0, g=1.0, Q=0.25)
    doubled = ProblemData.constants(2, f=1.0, g=2.0, Q=0.25)
    F1 = energy_F(unit_ball_128, base)
    F2 = energy_F(unit_ball_128, doubled)
    # -int g u doubles while the measure term is unchanged
    assert F2 - F1 == pytest.approx(-(np.pi / 8.0), abs=2e-3)


def test_first_variation_forms_agree(unit_ball_128, constant_data):
    spec = BumpField(2, (0.7, 0.1), 0.5, amplitude=1.0, kind="axis", axis=0)
    vol, surf = first_variation_forms(unit_ball_128, constant_data, spec)
    h = unit_ball_128.grid.h
    assert abs(vol - surf) < 5.0 * h


def test_first_variation_vanishes_at_radial_optimum(
    unit_ball_128, constant_data
):
    # at radius d*sqrt(Q) = 1 the optimality residual Q - |grad u||grad v|
    # vanishes on the boundary, so dF = 0 for every field
    h = unit_ball_128.grid.h
    for kind, center in (("axis", (0.8, 0.0)), ("radial", (0.5, 0.5))):
        spec = BumpField(2, center, 0.5, amplitude=1.0, kind=kind)
        vol, surf = first_variation_forms(unit_ball_128, constant_data, spec)
        assert abs(vol) < 2.0 * h * h
        # boundary gradient sampling is first order, so surf is O(h)
        assert abs(surf) < 0.5 * h


def test_second_variation_taylor_ladder_quick(constant_data):
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 192)
    dom = DomainRep.from_callable(g, lambda X, Y: 1.0 - np.sqrt(X**2 + Y**2))
    spec = BumpField(2, (0.55, 0.0), 0.55, amplitude=6.0, kind="axis", axis=0)
    rep = second_variation(dom, constant_data, spec)
    assert rep.delta2F > 0.0
    assert abs(rep.deltaF) < 10.0 * g.h
    # at this coarse resolution the last rung sits near the grid-error
    # floor, so only the first halving shows the full cubic decay
    assert rep.remainder_exponents()[0] > 2.5
    rems = [r for _, r in rep.taylor_remainders]
    assert rems[0] > rems[1] > rems[2]


def test_energy_G_halfplane():
    # u = (x . e1)_+ on B1 with lam = 1: pi/2 Dirichlet + pi/2 measure
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 256)
    X, _ = g.nodes()
    u = ScalarField(g, np.clip(X, 0.0, None))
    G = energy_G(u, 1.0, BallRegion(np.zeros(2), 1.0))
    # the positivity set is located from the clamped u, an O(h) offset
    assert G == pytest.approx(np.pi, abs=1.5 * g.h)


def test_one_phase_variations_halfplane_critical():
    # the half-plane solution with lam = |grad u|^2 = 1 is a critical
    # point of G: dG = 0 and d2G is finite
    g = Grid.box([-1.6, -1.6], [1.6, 1.6], 192)
    X, Y = g.nodes()
    u = ScalarField(g, np.clip(X, 0.0, None))
    phi = ScalarField(g, X)
    spec = BumpField(2, (0.0, 0.0), 0.5, amplitude=1.0, kind="axis", axis=0)
    dG, d2G = one_phase_variations(u, 1.0, spec, phi=phi)
    assert abs(dG) < 5.0 * g.h * g.h
    assert np.isfinite(d2G)
