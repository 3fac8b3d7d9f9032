import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freebound.analytic import (
    AnalyticScalar,
    BumpField,
    FlowMap,
    rotation_generator,
)
from freebound.errors import MissingDerivatives
from freebound.grid import Grid


def _fd_jacobian(fn, pts, eps=1e-6):
    pts = np.atleast_2d(pts)
    n, d = pts.shape
    base = fn(pts)
    out = np.zeros(base.shape + (d,))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        out[..., j] = (fn(pts + e) - fn(pts - e)) / (2.0 * eps)
    return out


point = st.floats(-0.45, 0.45)


@settings(max_examples=40, deadline=None)
@given(
    x=point,
    y=point,
    kind=st.sampled_from(["axis", "radial", "rotational"]),
    amp=st.floats(0.5, 4.0),
)
def test_bump_jacobian_matches_fd(x, y, kind, amp):
    spec = BumpField(2, (0.1, -0.05), 0.7, amplitude=amp, kind=kind)
    pts = np.array([[x, y]])
    J = spec.dxi(pts)
    Jfd = _fd_jacobian(spec.xi, pts)
    assert np.abs(J - Jfd).max() < 1e-5 * max(1.0, np.abs(J).max())


@settings(max_examples=25, deadline=None)
@given(x=point, y=point, kind=st.sampled_from(["axis", "radial"]))
def test_bump_hessian_matches_fd(x, y, kind):
    spec = BumpField(2, (0.0, 0.0), 0.8, amplitude=2.0, kind=kind)
    pts = np.array([[x, y]])
    H = spec.d2xi(pts)
    Hfd = _fd_jacobian(spec.dxi, pts, eps=1e-5)
    assert np.abs(H - Hfd).max() < 2e-4 * max(1.0, np.abs(H).max())


def test_bump_vanishes_outside_support():
    spec = BumpField(2, (0.0, 0.0), 0.5, amplitude=3.0, kind="radial")
    pts = np.array([[0.5, 0.0], [0.7, 0.7], [-2.0, 1.0]])
    assert np.all(spec.xi(pts) == 0.0)
    assert np.all(spec.dxi(pts) == 0.0)
    assert np.all(spec.d2xi(pts) == 0.0)
    assert spec.support.radius == 0.5


def test_bump_rejects_unknown_kind():
    with pytest.raises(ValueError):
        BumpField(2, (0.0, 0.0), 0.5, kind="twist")


def test_rotation_generator_antisymmetric():
    M = rotation_generator(3, (0, 2))
    assert np.allclose(M, -M.T)
    assert M[2, 0] == 1.0


def test_constant_preset():
    f = AnalyticScalar.constant(2.5, 2)
    pts = np.array([[0.1, 0.2], [1.0, -1.0]])
    assert np.allclose(f.value(pts), 2.5)
    assert np.allclose(f.grad(pts), 0.0)


def test_affine_preset():
    f = AnalyticScalar.affine(1.0, [2.0, -3.0])
    pts = np.array([[0.5, 0.5]])
    assert f.value(pts)[0] == pytest.approx(1.0 + 1.0 - 1.5)
    assert np.allclose(f.grad(pts), [[2.0, -3.0]])
    assert np.allclose(f.hess(pts), 0.0)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-1.0, 1.0), y=st.floats(-1.0, 1.0))
def test_gaussian_derivatives_match_fd(x, y):
    f = AnalyticScalar.gaussian(0.5, 2.0, [0.2, -0.1], 0.7)
    pts = np.array([[x, y]])
    gfd = _fd_jacobian(f.value, pts)
    assert np.abs(f.grad(pts) - gfd).max() < 1e-6
    hfd = _fd_jacobian(f.grad, pts, eps=1e-5)
    assert np.abs(f.hess(pts) - hfd).max() < 1e-4


def test_missing_derivatives_raise():
    f = AnalyticScalar(fn=lambda p: p[:, 0])
    with pytest.raises(MissingDerivatives):
        f.grad(np.zeros((1, 2)))


def test_sample_onto_grid():
    g = Grid.box([-1.0, -1.0], [1.0, 1.0], 16)
    f = AnalyticScalar.affine(0.0, [1.0, 0.0]).sample(g)
    X, _ = g.nodes()
    assert np.allclose(f.values, X)


def test_flow_map_advances_along_field():
    spec = BumpField(2, (0.0, 0.0), 1.0, amplitude=1.0, kind="axis", axis=0)
    flow = FlowMap(spec)
    p0 = np.array([[0.0, 0.0]])
    t = 0.01
    p1 = flow.advance(p0, t)
    # at the bump center xi = amp * eta(0) * e1 = e^{-1} e1
    assert p1[0, 0] == pytest.approx(t * np.exp(-1.0), rel=1e-4)
    assert p1[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_flow_jacobian_matches_fd():
    spec = BumpField(2, (0.1, 0.0), 0.8, amplitude=2.0, kind="radial")
    flow = FlowMap(spec)
    t = 0.02
    pts = np.array([[0.2, -0.1], [0.05, 0.3]])
    _, J = flow.advance_with_jacobian(pts, t)
    Jfd = _fd_jacobian(lambda p: flow.advance(p, t), pts)
    assert np.abs(J - Jfd).max() < 1e-5
