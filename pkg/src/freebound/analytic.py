"""Analytic data fields and perturbation vector fields.

Shape calculus needs first and second spatial derivatives of the data
(f, g, Q) and of the perturbation field xi.  Differentiating sampled grids
would put O(1/h) noise exactly where the second-variation formulas are most
sensitive, so both kinds of object carry closed-form derivatives:

* ``AnalyticScalar`` -- scalar data with value/gradient/Hessian callables
  (presets: constant, affine, gaussian).
* ``BumpField`` -- compactly supported vector fields
  xi(x) = amp * eta(|x-c|/rho) * direction, with eta(s) = exp(1/(s^2-1))
  for s < 1 and direction an axis vector, the radial field, or an
  in-plane rotation.
* ``FlowMap`` -- the flow of xi, integrated by classical fourth-order
  Runge-Kutta with a fixed number of sub-steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import MissingDerivatives
from .grid import BallRegion, Grid, ScalarField

__all__ = ["AnalyticScalar", "BumpField", "FlowMap", "rotation_generator"]


@dataclass(frozen=True)
class AnalyticScalar:
    """Scalar function with pointwise value, gradient and Hessian.

    All callables take an (N, d) point array; ``grad_fn`` returns (N, d)
    and ``hess_fn`` returns (N, d, d).  Missing derivative callables raise
    ``MissingDerivatives`` when requested.
    """

    fn: object
    grad_fn: object = None
    hess_fn: object = None
    label: str = ""

    def value(self, pts: NDArray) -> NDArray:
        return np.asarray(self.fn(np.atleast_2d(pts)), dtype=float)

    def grad(self, pts: NDArray) -> NDArray:
        if self.grad_fn is None:
            raise MissingDerivatives(f"{self.label or 'field'}: no gradient")
        return np.asarray(self.grad_fn(np.atleast_2d(pts)), dtype=float)

    def hess(self, pts: NDArray) -> NDArray:
        if self.hess_fn is None:
            raise MissingDerivatives(f"{self.label or 'field'}: no Hessian")
        return np.asarray(self.hess_fn(np.atleast_2d(pts)), dtype=float)

    def sample(self, grid: Grid) -> ScalarField:
        vals = self.value(grid.node_coords()).reshape(grid.node_shape)
        return ScalarField(grid, vals)

    # -- presets ---------------------------------------------------------

    @classmethod
    def constant(cls, c: float, dim: int) -> "AnalyticScalar":
        c = float(c)
        return cls(
            fn=lambda p: np.full(p.shape[0], c),
            grad_fn=lambda p: np.zeros((p.shape[0], dim)),
            hess_fn=lambda p: np.zeros((p.shape[0], dim, dim)),
            label=f"constant:{c}",
        )

    @classmethod
    def affine(cls, a0: float, coeffs) -> "AnalyticScalar":
        a0 = float(a0)
        a = np.asarray(coeffs, dtype=float)
        dim = a.size
        return cls(
            fn=lambda p: a0 + p @ a,
            grad_fn=lambda p: np.broadcast_to(a, (p.shape[0], dim)).copy(),
            hess_fn=lambda p: np.zeros((p.shape[0], dim, dim)),
            label="affine:" + ",".join(f"{x:g}" for x in [a0, *a]),
        )

    @classmethod
    def gaussian(cls, base: float, amp: float, center, sigma: float) -> "AnalyticScalar":
        c = np.asarray(center, dtype=float)
        dim = c.size
        base, amp, sigma = float(base), float(amp), float(sigma)

        def val(p):
            d2 = ((p - c) ** 2).sum(axis=1)
            return base + amp * np.exp(-d2 / (2 * sigma**2))

        def grad(p):
            d = p - c
            e = amp * np.exp(-(d**2).sum(axis=1) / (2 * sigma**2))
            return -e[:, None] * d / sigma**2

        def hess(p):
            d = p - c
            e = amp * np.exp(-(d**2).sum(axis=1) / (2 * sigma**2))
            outer = d[:, :, None] * d[:, None, :] / sigma**4
            eye = np.eye(dim) / sigma**2
            return e[:, None, None] * (outer - eye)

        return cls(
            fn=val,
            grad_fn=grad,
            hess_fn=hess,
            label=f"gaussian:{base:g},{amp:g},{','.join(f'{x:g}' for x in c)},{sigma:g}",
        )


def rotation_generator(dim: int, plane: tuple = (0, 1)) -> NDArray:
    """Antisymmetric generator of a rotation in the given coordinate plane."""
    M = np.zeros((dim, dim))
    i, j = plane
    M[i, j] = -1.0
    M[j, i] = 1.0
    return M


def _eta_terms(s: NDArray):
    """eta(s)=exp(1/(s^2-1)) for s<1 and the two radial combinations needed
    for gradients and Hessians of eta(|p|/rho):

      q0 = eta(s)
      q1 = eta'(s)/s          (finite at s=0, -2/e)
      q2 = (eta''(s) - eta'(s)/s)/s^2   (finite at s=0, -4/e)
    """
    s = np.asarray(s, dtype=float)
    inside = s < 1.0 - 1e-9
    tiny = s < 1e-5
    mid = inside & ~tiny
    q0 = np.zeros_like(s)
    q1 = np.zeros_like(s)
    q2 = np.zeros_like(s)

    sm = s[mid]
    d = sm * sm - 1.0
    g1 = -2.0 * sm / d**2
    g2 = (6.0 * sm * sm + 2.0) / d**3
    e = np.exp(1.0 / d)
    q0[mid] = e
    q1[mid] = g1 * e / sm
    # eta'' = (g2 + g1^2) eta ;  q2 = (eta'' - eta'/s)/s^2
    q2[mid] = ((g2 + g1 * g1) * e - g1 * e / sm) / (sm * sm)

    einv = float(np.exp(-1.0))
    q0[tiny] = einv
    q1[tiny] = -2.0 * einv
    q2[tiny] = -4.0 * einv
    return q0, q1, q2


@dataclass(frozen=True)
class BumpField:
    """Compactly supported perturbation field with analytic derivatives.

    xi(x) = amp * eta(|x - c|/rho) * u(x) where the direction u is an axis
    vector e_k (kind="axis"), the scaled radial field (x-c)/rho
    (kind="radial"), or M(x-c)/rho with M a rotation generator
    (kind="rotational").  xi and all its derivatives vanish for
    |x - c| >= rho.
    """

    dim: int
    center: NDArray
    rho: float
    amplitude: float = 1.0
    kind: str = "axis"
    axis: int = 0
    plane: tuple = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.kind not in ("axis", "radial", "rotational"):
            raise ValueError(f"unknown bump kind {self.kind!r}")

    @property
    def support(self) -> BallRegion:
        return BallRegion(self.center, self.rho)

    def _direction(self, p: NDArray):
        """Direction field u and its constant Jacobian M (u = e + M p / rho)."""
        n, d = p.shape
        if self.kind == "axis":
            e = np.zeros(d)
            e[self.axis] = 1.0
            u = np.broadcast_to(e, (n, d)).copy()
            M = np.zeros((d, d))
        elif self.kind == "radial":
            u = p / self.rho
            M = np.eye(d)
        else:
            M = rotation_generator(d, self.plane)
            u = p @ M.T / self.rho
        return u, M / self.rho

    def _amp_terms(self, p: NDArray):
        r = np.linalg.norm(p, axis=1)
        s = r / self.rho
        q0, q1, q2 = _eta_terms(s)
        a = self.amplitude * q0
        # grad a = amp*q1*p/rho^2 ; hess a = amp*(q2 p p^T / rho^4 + q1 I/rho^2)
        ga = self.amplitude * q1[:, None] * p / self.rho**2
        ha = self.amplitude * (
            q2[:, None, None] * p[:, :, None] * p[:, None, :] / self.rho**4
            + q1[:, None, None] * np.eye(p.shape[1]) / self.rho**2
        )
        return a, ga, ha

    def xi(self, pts: NDArray) -> NDArray:
        p = np.atleast_2d(np.asarray(pts, dtype=float)) - self.center
        u, _ = self._direction(p)
        a, _, _ = self._amp_terms(p)
        return a[:, None] * u

    def dxi(self, pts: NDArray) -> NDArray:
        """Jacobian; [n, i, j] = d xi_i / d x_j."""
        p = np.atleast_2d(np.asarray(pts, dtype=float)) - self.center
        u, M = self._direction(p)
        a, ga, _ = self._amp_terms(p)
        return u[:, :, None] * ga[:, None, :] + a[:, None, None] * M

    def d2xi(self, pts: NDArray) -> NDArray:
        """Second derivatives; [n, i, j, k] = d^2 xi_i / (d x_j d x_k)."""
        p = np.atleast_2d(np.asarray(pts, dtype=float)) - self.center
        u, M = self._direction(p)
        a, ga, ha = self._amp_terms(p)
        out = u[:, :, None, None] * ha[:, None, :, :]
        out += ga[:, None, :, None] * M[None, :, None, :]  # (grad a)_j * M_ik
        out += ga[:, None, None, :] * M[None, :, :, None]  # (grad a)_k * M_ij
        return out


@dataclass(frozen=True)
class FlowMap:
    """Flow Phi_t of a bump field, classical RK4 with fixed sub-stepping."""

    spec: BumpField
    substeps: int = 16

    def advance(self, pts: NDArray, t: float) -> NDArray:
        """Phi_t applied to an (N, d) array of points (t may be negative)."""
        x = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        if t == 0.0:
            return x
        dt = t / self.substeps
        f = self.spec.xi
        for _ in range(self.substeps):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x += (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    def advance_with_jacobian(self, pts: NDArray, t: float) -> tuple:
        """Phi_t and its spatial Jacobian D Phi_t, integrated jointly.

        The Jacobian solves dJ/dt = Dxi(Phi_t) J along the flow, with the
        same RK4 stepping; Dxi is analytic, so the pair is accurate to the
        integrator order.
        """
        x = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        n, d = x.shape
        J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if t == 0.0:
            return x, J
        dt = t / self.substeps
        f = self.spec.xi
        Df = self.spec.dxi

        for _ in range(self.substeps):
            k1x = f(x)
            k1J = np.einsum("nij,njk->nik", Df(x), J)
            x2 = x + 0.5 * dt * k1x
            J2 = J + 0.5 * dt * k1J
            k2x = f(x2)
            k2J = np.einsum("nij,njk->nik", Df(x2), J2)
            x3 = x + 0.5 * dt * k2x
            J3 = J + 0.5 * dt * k2J
            k3x = f(x3)
            k3J = np.einsum("nij,njk->nik", Df(x3), J3)
            x4 = x + dt * k3x
            J4 = J + dt * k3J
            k4x = f(x4)
            k4J = np.einsum("nij,njk->nik", Df(x4), J4)
            x += (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            J += (dt / 6.0) * (k1J + 2 * k2J + 2 * k3J + k4J)
        return x, J

    def pullback_levelset(self, phi: ScalarField, t: float) -> ScalarField:
        """Level set of the advected domain Omega_t = Phi_t(Omega):
        phi_t(x) = phi(Phi_{-t}(x)), sampled at the grid nodes.

        Cubic resampling: multilinear interpolation of phi would shift the
        zero crossing by O(h^2) with cell-periodic kinks, which is visible
        in Taylor-remainder studies of the energy.
        """
        from .grid import sample_values_cubic

        pts = phi.grid.node_coords()
        back = self.advance(pts, -t)
        vals = sample_values_cubic(phi.grid, phi.values, back)
        return ScalarField(phi.grid, vals.reshape(phi.grid.node_shape))
