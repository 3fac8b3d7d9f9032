"""Blow-up analysis at free-boundary points.

Centered rescalings u_{x0,r}(y) = u(x0 + r y)/r preserve the structure of
a one-phase free boundary: at a regular point they converge to a pair of
half-plane profiles alpha (y.nu)_+, beta (y.nu)_+ with alpha*beta = Q(x0).
This module measures that convergence on a grid:

* ``rescale``        -- sample a rescaling onto a fixed reference grid;
* ``weiss_trace``    -- the boundary-adjusted (Weiss) energy
                        W(r) = int_{B_1} |grad u_r|^2 + Lam |{u_r>0} n B_1|
                               - int_{dB_1} u_r^2
                        across a radius ladder, with the derivative
                        integrand D(r) = int_{dB_1} |y.grad u_r - u_r|^2
                        (zero exactly when u is 1-homogeneous about x0);
* ``halfplane_fit``  -- least-squares fit of the half-plane model over a
                        direction scan, with a three-way verdict;
* ``classify_boundary`` -- the ladder descent: pick the most homogeneous
                        radius, fit there, and report per point.

W and D are evaluated by change of variables on the source grid (the
rescaling only relabels coordinates), which keeps the free-boundary kink
un-smeared; only the model fitting works on interpolated rescalings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .calculus import ProblemData
from .elliptic import DirichletOperator, DirichletProblem, solve_dirichlet
from .errors import BallOutsideGrid, ScaleBelowGrid
from .grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    _fibonacci_sphere,
    ball_domain_integral,
    masked_gradient,
    sample_values,
    sphere_points,
    surface_measure,
)

__all__ = [
    "REFERENCE_RADIUS",
    "WeissTrace",
    "BoundaryPointReport",
    "reference_grid",
    "rescale",
    "weiss_trace",
    "halfplane_fit",
    "classify_boundary",
]


#: The rescaled fields live on a fixed box covering the ball of this radius.
REFERENCE_RADIUS = 1.5

_REF_CELLS = {2: 96, 3: 48}


def reference_grid(dim: int) -> Grid:
    """The fixed grid all rescalings are sampled onto."""
    R = REFERENCE_RADIUS
    return Grid.box([-R] * dim, [R] * dim, _REF_CELLS[dim])


def _check_scale(grid: Grid, x0: NDArray, r: float) -> None:
    if r < 4.0 * grid.h:
        raise ScaleBelowGrid(f"rescaling radius {r} below 4h = {4 * grid.h}")
    if not grid.contains_ball(x0, r * REFERENCE_RADIUS, slack=1e-12):
        raise BallOutsideGrid(
            f"rescaling ball c={x0} r={r * REFERENCE_RADIUS} leaves the grid box"
        )


def rescale(u: ScalarField, x0, r: float, ref: Grid | None = None) -> ScalarField:
    """The centered rescaling u_{x0,r}(y) = u(x0 + r y)/r on the reference
    grid."""
    x0 = np.asarray(x0, dtype=float)
    _check_scale(u.grid, x0, r)
    if ref is None:
        ref = reference_grid(u.grid.dim)
    pts = x0 + r * ref.node_coords()
    vals = sample_values(u.grid, u.values, pts) / r
    return ScalarField(ref, vals.reshape(ref.node_shape))


# ---------------------------------------------------------------------------
# Weiss energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeissTrace:
    """Weiss energies down a radius ladder about one center.

    ``defect`` is the largest increase of W from a radius to the next
    smaller one; for stationary configurations W is non-decreasing in r,
    so the defect should vanish up to grid error.
    """

    center: tuple
    lam: float
    radii: tuple
    W: tuple
    D: tuple
    defect: float

    def to_csv(self, path: str) -> None:
        lines = ["r,W,D\n"]
        for r, w, d in zip(self.radii, self.W, self.D):
            lines.append(f"{r:.17g},{w:.17g},{d:.17g}\n")
        with open(path, "w") as fh:
            fh.writelines(lines)


def _sphere_samples(grid: Grid, arrays: list, x0: NDArray, r: float):
    """Values of node arrays at the fixed angular quadrature points of the
    sphere of radius r about x0; returns (directions, list of samples)."""
    dirs = sphere_points(grid.dim)
    pts = x0 + r * dirs
    return dirs, [sample_values(grid, a, pts) for a in arrays]


def weiss_trace(
    u: ScalarField, x0, lam: float, radii, dom: DomainRep | None = None
) -> WeissTrace:
    """Weiss energy W and homogeneity integrand D per ladder radius.

    Both are integrals of the rescaled function over the unit ball/sphere;
    they are computed on the source grid by change of variables so the
    free-boundary kink of u is never resampled.  ``dom`` is the signed
    representation of the positivity set; when omitted it is rebuilt from
    u itself, which locates the boundary half a cell too far out where u
    is clamped to zero -- pass the real domain whenever one exists.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = u.grid
    d = grid.dim
    radii = [float(r) for r in radii]
    if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    for r in radii:
        if r < 4.0 * grid.h:
            raise ScaleBelowGrid(f"radius {r} below 4h = {4 * grid.h}")
        if not grid.contains_ball(x0, r, slack=1e-12):
            raise BallOutsideGrid(f"ball c={x0} r={r} leaves the grid box")

    if dom is None:
        dom = DomainRep.from_phi(u)  # positivity set of u
    mask = dom.inside_mask()
    g = masked_gradient(u.values, mask, grid.h)
    gsq = sum(gi**2 for gi in g)
    ones = np.ones(grid.node_shape)

    Ws, Ds = [], []
    for r in radii:
        ball = BallRegion(x0, r)
        dirichlet = ball_domain_integral(gsq, dom, ball, sharp=True) / r**d
        measure = ball_domain_integral(ones, dom, ball) / r**d
        dirs, (uS, *gS) = _sphere_samples(grid, [u.values] + g, x0, r)
        sm = surface_measure(d, 1.0)
        boundary = sm * float(np.mean((uS / r) ** 2))
        # y . grad u_r(y) - u_r(y) = ((x-x0) . grad u(x) - u(x)) / r on dB_r
        radial = sum(r * dirs[:, i] * gS[i] for i in range(d)) - uS
        Dval = sm * float(np.mean((radial / r) ** 2))
        Ws.append(dirichlet + lam * measure - boundary)
        Ds.append(Dval)

    defect = 0.0
    for w_big, w_small in zip(Ws, Ws[1:]):
        defect = max(defect, w_small - w_big)
    return WeissTrace(
        center=tuple(x0),
        lam=lam,
        radii=tuple(radii),
        W=tuple(Ws),
        D=tuple(Ds),
        defect=float(max(defect, 0.0)),
    )


# ---------------------------------------------------------------------------
# Half-plane fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryPointReport:
    """Half-plane fit and verdict at one boundary point."""

    center: tuple
    best_nu: tuple
    alpha: float
    beta: float
    fit_error: float
    verdict: str  # regular | singular | inconclusive
    best_radius: float = float("nan")
    lam: float = float("nan")
    ratio_spread: float = float("nan")


def _direction_grid(dim: int) -> NDArray:
    if dim == 2:
        th = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    return _fibonacci_sphere(1026)


def halfplane_fit(
    u_rescaled: ScalarField,
    v_rescaled: ScalarField,
    Qx0: float,
    tau: float = 0.1,
    center=None,
) -> BoundaryPointReport:
    """Fit the model pair alpha (y.nu)_+, beta (y.nu)_+ over a direction
    scan on the unit ball of the reference grid.

    fit_error is the worse of the two relative max-norm deviations at the
    best direction.  Verdict: regular if fit_error <= tau and alpha*beta
    is within tau*Qx0 of Qx0; singular if the best fit is still off by
    3*tau; inconclusive between.
    """
    ref = u_rescaled.grid
    d = ref.dim
    pts = ref.node_coords()
    in_ball = np.linalg.norm(pts, axis=1) <= 1.0
    P = pts[in_ball]
    ub = u_rescaled.values.ravel()[in_ball]
    vb = v_rescaled.values.ravel()[in_ball]
    u_scale = max(float(np.abs(ub).max()), 1e-300)
    v_scale = max(float(np.abs(vb).max()), 1e-300)

    dirs = _direction_grid(d)
    best = None
    for chunk in np.array_split(dirs, max(1, len(dirs) // 128)):
        M = np.clip(P @ chunk.T, 0.0, None)  # (N, K) model columns
        denom = np.maximum((M * M).sum(axis=0), 1e-300)
        a = np.clip(ub @ M, 0.0, None) / denom
        b = np.clip(vb @ M, 0.0, None) / denom
        eu = np.abs(ub[:, None] - M * a).max(axis=0) / u_scale
        ev = np.abs(vb[:, None] - M * b).max(axis=0) / v_scale
        err = np.maximum(eu, ev)
        k = int(np.argmin(err))
        if best is None or err[k] < best[0]:
            best = (float(err[k]), chunk[k], float(a[k]), float(b[k]))

    fit_error, nu, alpha, beta = best
    if fit_error <= tau and abs(alpha * beta - Qx0) <= tau * Qx0:
        verdict = "regular"
    elif fit_error >= 3.0 * tau:
        verdict = "singular"
    else:
        verdict = "inconclusive"
    if center is None:
        center = np.zeros(d)
    return BoundaryPointReport(
        center=tuple(np.asarray(center, dtype=float)),
        best_nu=tuple(nu),
        alpha=alpha,
        beta=beta,
        fit_error=fit_error,
        verdict=verdict,
    )


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _proportionality(dom: DomainRep, u: ScalarField, v: ScalarField):
    """Median and max/min spread of u/v on the near-boundary band
    {h < phi < 4h} inside the domain."""
    grid = dom.grid
    phi = dom.phi.values
    band = (phi > grid.h) & (phi < 4.0 * grid.h) & (v.values > 0.0)
    if not band.any():
        return float("nan"), float("nan")
    ratio = u.values[band] / v.values[band]
    ratio = ratio[np.isfinite(ratio) & (ratio > 0.0)]
    if len(ratio) == 0:
        return float("nan"), float("nan")
    return float(np.median(ratio)), float(ratio.max() / ratio.min())


def classify_boundary(
    dom: DomainRep,
    data: ProblemData,
    points,
    r_max: float | None = None,
    tau: float = 0.1,
    tol: float = 1e-8,
    u: ScalarField | None = None,
    v: ScalarField | None = None,
) -> list:
    """Classify boundary points as regular/singular/inconclusive.

    Descends the dyadic ladder r_max * 2^{-k} down to 8h, picks the radius
    where the homogeneity integrand D is smallest (the best-converged
    blow-up scale), and runs the half-plane fit there.  The u/v
    proportionality of the pair near the boundary enters through the
    Weiss normalization Lam = lam * Q(x0) and is reported as a spread.
    """
    grid = dom.grid
    h = grid.h
    if u is None:
        u = solve_dirichlet(
            DirichletProblem(dom, data.f.sample(grid), tol=tol),
            op=DirichletOperator(dom),
        )
    if v is None:
        v = solve_dirichlet(
            DirichletProblem(dom, data.g.sample(grid), tol=tol),
            op=DirichletOperator(dom),
        )
    lam, spread = _proportionality(dom, u, v)
    if not np.isfinite(lam):
        lam = 1.0

    if r_max is None:
        r_max = 0.125 * float(grid.extent.min())

    ref = reference_grid(grid.dim)
    reports = []
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        radii = []
        r = r_max
        while r >= 8.0 * h:
            if grid.contains_ball(p, r * REFERENCE_RADIUS, slack=1e-12):
                radii.append(r)
            r *= 0.5
        if not radii:
            reports.append(
                BoundaryPointReport(
                    center=tuple(p),
                    best_nu=(0.0,) * grid.dim,
                    alpha=0.0,
                    beta=0.0,
                    fit_error=float("inf"),
                    verdict="inconclusive",
                    lam=lam,
                    ratio_spread=spread,
                )
            )
            continue
        trace = weiss_trace(u, p, lam * float(data.Q.value(p)[0]), radii, dom=dom)
        r_best = radii[int(np.argmin(trace.D))]
        rep = halfplane_fit(
            rescale(u, p, r_best, ref),
            rescale(v, p, r_best, ref),
            float(data.Q.value(p)[0]),
            tau=tau,
            center=p,
        )
        reports.append(
            BoundaryPointReport(
                center=rep.center,
                best_nu=rep.best_nu,
                alpha=rep.alpha,
                beta=rep.beta,
                fit_error=rep.fit_error,
                verdict=rep.verdict,
                best_radius=r_best,
                lam=lam,
                ratio_spread=spread,
            )
        )
    return reports


def reports_to_csv(reports, path: str) -> None:
    lines = [
        "x,y,z,nu_x,nu_y,nu_z,alpha,beta,fit_error,best_radius,lam,"
        "ratio_spread,verdict\n"
    ]
    for rep in reports:
        c = list(rep.center) + [0.0] * (3 - len(rep.center))
        nu = list(rep.best_nu) + [0.0] * (3 - len(rep.best_nu))
        vals = c + nu + [rep.alpha, rep.beta, rep.fit_error, rep.best_radius,
                         rep.lam, rep.ratio_spread]
        lines.append(",".join(f"{x:.17g}" for x in vals) + f",{rep.verdict}\n")
    with open(path, "w") as fh:
        fh.writelines(lines)
