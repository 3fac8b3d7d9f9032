"""Stability laboratory for 1-homogeneous solutions on spherical-cap cones.

A 1-homogeneous harmonic function u = r phi(theta) on the axially
symmetric cone {theta < theta0} reduces to the profile ODE

    phi'' + (d-2) cot(theta) phi' + (d-1) phi = 0,   phi(0)=1, phi'(0)=0,

whose solution must vanish exactly at the cap edge theta0 for the cone to
carry a one-phase solution with |grad u| = 1 on the boundary.  The module
solves that shooting problem, evaluates the boundary mean curvature, and
tests the stability quadratic form

    B[w] = int_{Omega_u} |grad w|^2 - int_{dOmega_u} H w^2

over a separable test family, plus a grid-level cross-check of the
inequality B[phi] >= (1/2) d2G(u)[phi grad u] that connects the form to
the second variation of the one-phase energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .analytic import _eta_terms
from .calculus import one_phase_variations, _interface_elements
from .grid import BallRegion, DomainRep, Grid, ScalarField, integrate_domain

__all__ = [
    "ConeSpec",
    "NoSolution",
    "RayleighReport",
    "solve_cap",
    "mean_curvature",
    "cap_eigenmodes",
    "cjk_form",
    "cross_check_delta2G",
]


_SHOOT_TOL = 1e-10
_ODE_EPS = 1e-4  # series start, avoids the cot singularity at theta = 0


@dataclass(frozen=True)
class ConeSpec:
    """Profile of the 1-homogeneous solution u = r phi(theta) on the cap
    {theta < theta0}, normalized to |phi'(theta0)| = 1."""

    dim: int
    theta0: float
    theta: NDArray
    phi: NDArray
    dphi: NDArray

    def profile(self):
        """Cubic interpolants (phi, phi') of the cap profile."""
        return (
            CubicSpline(self.theta, self.phi),
            CubicSpline(self.theta, self.dphi),
        )

    def to_csv(self, path: str) -> None:
        lines = ["theta,phi,dphi\n"]
        for t, p, dp in zip(self.theta, self.phi, self.dphi):
            lines.append(f"{t:.17g},{p:.17g},{dp:.17g}\n")
        with open(path, "w") as fh:
            fh.writelines(lines)


@dataclass(frozen=True)
class NoSolution:
    """Shooting failure: the regular profile does not vanish at theta0."""

    dim: int
    theta0: float
    residual: float


@dataclass(frozen=True)
class RayleighReport:
    """Stability-form values over a test family.

    A negative value certifies instability; all-nonnegative only means no
    instability was found in this (axisymmetric, separable) family.
    """

    description: str
    s_values: tuple
    modes: tuple  # cap eigenvalues used
    values: tuple  # one row (tuple) per s, one column per mode
    min_value: float

    def to_csv(self, path: str) -> None:
        lines = ["s," + ",".join(f"mode{k}" for k in range(len(self.modes))) + "\n"]
        for s, row in zip(self.s_values, self.values):
            lines.append(f"{s:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        with open(path, "w") as fh:
            fh.writelines(lines)


# ---------------------------------------------------------------------------
# Cap profile (shooting)
# ---------------------------------------------------------------------------


def _integrate_profile(dim: int, eig: float, theta_end: float, n_out: int = 2001):
    """Integrate y'' + (d-2) cot(t) y' + eig * y = 0 with the regular start
    y(0)=1, y'(0)=0; returns (theta, y, y') arrays."""
    d = dim

    def rhs(t, y):
        return [y[1], -((d - 2) / np.tan(t)) * y[1] - eig * y[0]]

    # series start: y = 1 + a t^2 + b t^4 with a, b from the ODE
    a = -eig / (2.0 * (d - 1))
    b = a * (2.0 * (d - 2) / 3.0 - eig) / (12.0 + 4.0 * (d - 2))
    t0 = _ODE_EPS
    y0 = [1.0 + a * t0**2 + b * t0**4, 2.0 * a * t0 + 4.0 * b * t0**3]
    ts = np.linspace(t0, theta_end, n_out)
    sol = solve_ivp(
        rhs, (t0, theta_end), y0, t_eval=ts, method="DOP853",
        rtol=1e-12, atol=1e-14,
    )
    if not sol.success:
        raise RuntimeError(f"profile integration failed: {sol.message}")
    theta = np.concatenate([[0.0], sol.t])
    y = np.concatenate([[1.0], sol.y[0]])
    dy = np.concatenate([[0.0], sol.y[1]])
    return theta, y, dy


def solve_cap(dim: int, theta0: float):
    """The 1-homogeneous harmonic cap profile, or NoSolution.

    The regular solution of the reduced ODE is unique up to scale, so the
    cap carries a 1-homogeneous solution exactly when that profile
    vanishes at theta0 (within the shooting tolerance) while staying
    positive inside; the result is rescaled to unit edge gradient.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if not 0.0 < theta0 < np.pi:
        raise ValueError("theta0 must lie in (0, pi)")
    theta, y, dy = _integrate_profile(dim, float(dim - 1), theta0)
    residual = abs(y[-1])
    if residual > _SHOOT_TOL or np.any(y[:-1] <= 0.0):
        return NoSolution(dim=dim, theta0=theta0, residual=float(residual))
    scale = abs(dy[-1])
    y = y / scale
    y[-1] = 0.0  # pin the edge zero exactly
    return ConeSpec(dim=dim, theta0=theta0, theta=theta, phi=y, dphi=dy / scale)


def mean_curvature(spec: ConeSpec, r: float) -> float:
    """Mean curvature of the lateral cone boundary {theta = theta0} at
    distance r from the apex, oriented toward the complement."""
    if not r > 0:
        raise ValueError("r must be positive")
    return (spec.dim - 2) / np.tan(spec.theta0) / r


# ---------------------------------------------------------------------------
# Cap eigenbasis and the CJK quadratic form
# ---------------------------------------------------------------------------


def cap_eigenmodes(dim: int, theta0: float, count: int = 8):
    """First axisymmetric Neumann eigenpairs of the spherical Laplacian on
    the cap: psi'' + (d-2) cot psi' + lam psi = 0, psi'(theta0) = 0.

    Returns a list of (lam, theta grid, psi values).  Neumann modes keep
    nonzero boundary values, which is what the curvature term of the
    stability form probes.
    """
    if dim == 2:
        # flat angular Laplacian on (-theta0, theta0); even modes
        out = []
        ts = np.linspace(0.0, theta0, 1001)
        for k in range(count):
            lam = (k * np.pi / theta0) ** 2
            out.append((lam, ts, np.cos(k * np.pi * ts / theta0)))
        return out

    def edge_slope(lam):
        _, _, dy = _integrate_profile(dim, lam, theta0, n_out=400)
        return dy[-1]

    modes = []
    theta, y, _ = _integrate_profile(dim, 0.0, theta0)
    modes.append((0.0, theta, y))
    lam_grid = np.linspace(1e-3, 60.0 * count, 40 * count)
    slopes = [edge_slope(lam) for lam in lam_grid]
    for lo, hi, s1, s2 in zip(lam_grid, lam_grid[1:], slopes, slopes[1:]):
        if len(modes) >= count:
            break
        if s1 == 0.0 or s1 * s2 > 0.0:
            continue
        lam = brentq(edge_slope, lo, hi, xtol=1e-12)
        theta, y, _ = _integrate_profile(dim, lam, theta0)
        modes.append((float(lam), theta, y))
    return modes[:count]


def _cap_weight(dim: int, theta: NDArray) -> NDArray:
    """Angular measure density on the cap (axisymmetric reduction)."""
    if dim == 2:
        return 2.0 * np.ones_like(theta)  # both signed angles
    if dim == 3:
        return 2.0 * np.pi * np.sin(theta)
    # |S^{d-2}| sin^{d-2}(theta)
    k = dim - 1
    area = 2.0 * np.pi ** (k / 2.0) / math.gamma(k / 2.0)
    return area * np.sin(theta) ** (dim - 2)


def _edge_measure(dim: int, theta0: float) -> float:
    """Angular density of the lateral boundary {theta = theta0}."""
    if dim == 2:
        return 2.0
    k = dim - 1
    area = 2.0 * np.pi ** (k / 2.0) / math.gamma(k / 2.0)
    return area * np.sin(theta0) ** (dim - 2)


def _log_bump(r: NDArray, r_lo: float = 0.5, r_hi: float = 2.0) -> tuple:
    """Smooth annulus window in log radius; returns (b, b')."""
    t = np.log(r)
    c = 0.5 * (np.log(r_lo) + np.log(r_hi))
    w = 0.5 * (np.log(r_hi) - np.log(r_lo))
    s = np.abs((t - c) / w)
    q0, q1, _ = _eta_terms(s)
    b = q0
    db = q1 * (t - c) / (w * w) / r  # chain rule through s(t(r)); q1 = eta'/s
    return b, db


def cjk_form(
    spec: ConeSpec,
    n_s: int = 9,
    n_modes: int = 8,
    n_r: int = 4000,
) -> RayleighReport:
    """Stability form over the separable family rho(|x|) |x|^s psi(theta).

    The radial factor is a smooth annulus bump times |x|^s with s scanned
    around the Hardy-critical exponent (2-d)/2; the angular factors are
    the first Neumann cap eigenmodes.  Separability turns both integrals
    of the form into 1D quadratures.
    """
    d = spec.dim
    th0 = spec.theta0
    s_center = 0.5 * (2.0 - d)
    s_vals = np.linspace(s_center - 1.0, s_center + 1.0, n_s)
    modes = cap_eigenmodes(d, th0, count=n_modes)

    r = np.linspace(0.25, 3.0, n_r)
    b, db = _log_bump(r)
    H_edge = (d - 2) / np.tan(th0)  # times 1/r
    w_edge = _edge_measure(d, th0)

    rows = []
    for s in s_vals:
        rs = r**s
        drs = s * r ** (s - 1.0)
        rho = b * rs
        drho = db * rs + b * drs
        row = []
        for lam, tgrid, psi in modes:
            wcap = _cap_weight(d, tgrid)
            A = np.trapezoid(psi**2 * wcap, tgrid)
            dpsi = np.gradient(psi, tgrid, edge_order=2)
            Bang = np.trapezoid(dpsi**2 * wcap, tgrid)
            psi_edge = psi[-1]
            dirichlet = A * np.trapezoid(drho**2 * r ** (d - 1), r) + Bang * (
                np.trapezoid(rho**2 * r ** (d - 3), r)
            )
            curv = (
                H_edge
                * w_edge
                * psi_edge**2
                * np.trapezoid(rho**2 * r ** (d - 3), r)
            )
            row.append(float(dirichlet - curv))
        rows.append(tuple(row))
    values = tuple(rows)
    return RayleighReport(
        description=(
            f"axisymmetric separable family on cap(dim={d}, theta0={th0:.6g}); "
            f"s in [{s_vals[0]:.3g}, {s_vals[-1]:.3g}], "
            f"{len(modes)} Neumann cap modes"
        ),
        s_values=tuple(float(s) for s in s_vals),
        modes=tuple(float(m[0]) for m in modes),
        values=values,
        min_value=float(min(min(row) for row in values)),
    )


# ---------------------------------------------------------------------------
# Grid cross-check against the second variation
# ---------------------------------------------------------------------------


class _ScaledGradientField:
    """The vector field xi = a(x) grad u for a cone solution u = r phi(theta),
    with a(x) a smooth ball bump; derivatives by high-order differences.

    Quacks like the analytic bump fields: exposes center/rho/support and
    xi/dxi/d2xi.  The finite-difference step is far above rounding and far
    below the bump scale, so the Jacobians are accurate to ~1e-8 -- well
    under the O(h) grid error of the variation assembly it feeds.
    """

    def __init__(self, spec: ConeSpec, center, rho: float, amplitude: float = 1.0):
        self.spec = spec
        self.center = np.asarray(center, dtype=float)
        self.rho = float(rho)
        self.amplitude = float(amplitude)
        # Re-integrate the (unique, regular) profile past the cap edge so
        # grad u extends analytically across the cone boundary: the finite
        # differences below must never straddle a one-sided clip.
        ext = min(spec.theta0 + 0.35, np.pi - 1e-3)
        theta, y, dy = _integrate_profile(spec.dim, float(spec.dim - 1), ext)
        scale = max(abs(np.interp(spec.theta0, theta, dy)), 1e-300)
        self._theta_max = theta[-1]
        self._phi = CubicSpline(theta, y / scale)
        self._dphi = CubicSpline(theta, dy / scale)

    @property
    def support(self) -> BallRegion:
        return BallRegion(self.center, self.rho)

    def _bump(self, pts: NDArray) -> NDArray:
        p = pts - self.center
        s = np.linalg.norm(p, axis=1) / self.rho
        q0, _, _ = _eta_terms(s)
        return self.amplitude * q0

    def _grad_u(self, pts: NDArray) -> NDArray:
        r = np.maximum(np.linalg.norm(pts, axis=1), 1e-300)
        ct = np.clip(pts[:, -1] / r, -1.0, 1.0)
        theta = np.minimum(np.arccos(ct), self._theta_max)
        phi_v = self._phi(theta)
        dphi_v = self._dphi(theta)
        e_r = pts / r[:, None]
        # e_theta = (cos(theta) e_rho_cyl - sin(theta) e_axis)
        rho_cyl = np.maximum(np.linalg.norm(pts[:, :-1], axis=1), 1e-300)
        e_rho = np.zeros_like(pts)
        e_rho[:, :-1] = pts[:, :-1] / rho_cyl[:, None]
        e_th = ct[:, None] * e_rho
        e_th[:, -1] -= np.sin(theta)
        return phi_v[:, None] * e_r + dphi_v[:, None] * e_th

    def xi(self, pts: NDArray) -> NDArray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._bump(pts)[:, None] * self._grad_u(pts)

    def dxi(self, pts: NDArray) -> NDArray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, d = pts.shape
        out = np.zeros((n, d, d))
        eps = 1e-6 * self.rho
        for j in range(d):
            e = np.zeros(d)
            e[j] = eps
            out[:, :, j] = (self.xi(pts + e) - self.xi(pts - e)) / (2.0 * eps)
        return out

    def d2xi(self, pts: NDArray) -> NDArray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, d = pts.shape
        out = np.zeros((n, d, d, d))
        eps = 1e-4 * self.rho
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            out[:, :, :, k] = (self.dxi(pts + e) - self.dxi(pts - e)) / (2.0 * eps)
        return out


def cross_check_delta2G(
    spec: ConeSpec,
    center,
    rho: float,
    amplitude: float = 1.0,
    n: int = 192,
    box: float = 1.6,
    tol: float = 1e-10,
) -> tuple:
    """(boundary form, d2G) for the test scalar phi = bump about ``center``
    and the vector field xi = phi grad u.

    The boundary form int |grad phi|^2 - int H phi^2 is evaluated on the
    gridded cone; d2G comes from the one-phase second variation with the
    same xi.  For stable cones the boundary form dominates half of d2G up
    to O(h).
    """
    d = spec.dim
    grid = Grid.box([-box] * d, [box] * d, n)
    pts = grid.node_coords()
    r = np.maximum(np.linalg.norm(pts, axis=1), 1e-300)
    theta = np.arccos(np.clip(pts[:, -1] / r, -1.0, 1.0))
    phi_fn, _ = spec.profile()
    inside = theta < spec.theta0
    u_vals = np.where(inside, r * phi_fn(np.minimum(theta, spec.theta0)), 0.0)
    level = (r * np.sin(np.clip(spec.theta0 - theta, -0.5 * np.pi, 0.5 * np.pi)))
    u = ScalarField(grid, u_vals.reshape(grid.node_shape))
    lvl = ScalarField(grid, level.reshape(grid.node_shape))
    dom = DomainRep.from_phi(lvl)

    field = _ScaledGradientField(spec, center, rho, amplitude)

    # boundary form on the cone
    p = pts - field.center
    s = np.linalg.norm(p, axis=1) / field.rho
    q0, q1, _ = _eta_terms(s)
    a = field.amplitude * q0
    ga = field.amplitude * q1[:, None] * p / field.rho**2
    gsq = (ga**2).sum(axis=1).reshape(grid.node_shape)
    dirichlet = integrate_domain(dom, gsq)
    elems = _interface_elements(dom)
    curv = 0.0
    if elems is not None and d > 2:
        ipts, _, w = elems
        rr = np.maximum(np.linalg.norm(ipts, axis=1), 1e-300)
        H = (d - 2) / np.tan(spec.theta0) / rr
        pa = ipts - field.center
        sa = np.linalg.norm(pa, axis=1) / field.rho
        qa, _, _ = _eta_terms(sa)
        curv = float(np.sum(w * H * (field.amplitude * qa) ** 2))
    boundary_form = float(dirichlet - curv)

    _, d2G = one_phase_variations(u, 1.0, field, phi=lvl, tol=tol)
    return boundary_form, float(d2G)
