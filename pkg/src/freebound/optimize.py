"""Level-set shape descent and measurements on the computed optima.

The descent drives the free boundary toward the optimality condition
|grad u||grad v| = Q by moving it with normal speed V = |grad u||grad v|
- Q applied along the inward normal.  (Along the outward normal the same
speed is the literal first-variation descent of the penalized functional,
but the uniform volume mode of that flow is unstable -- for radial data
the ball of radius d*sqrt(Q) is a local maximum of F along dilations --
so the descent-signed flow either collapses the domain or runs into the
design boundary.  The inward-signed flow is the stable relaxation whose
fixed points are exactly the free-boundary configurations.)  Three
problem modes share the loop:

* ``general``  -- data (f, g, Q), two Dirichlet solves per step;
* ``bernoulli``-- proportional data f = 2 lam^2 g, one solve, the speed
  becomes |grad u|^2/(2 lam^2) - Q;
* ``heat``     -- harmonic u, v with data (phi_D, 1) on the fixed outer
  boundary, zero on the free boundary of the compact complement; the
  speed uses the constant Lam in place of Q and the energy is
  int grad u . grad v + Lam |Omega|.

The level set is advected explicitly with the speed extended off the
interface, periodically reinitialized to a signed distance, and projected
into the design region.  Backtracking halves the step when the interface
optimality residual (rms of V on the interface band) fails to decrease
within the per-step tolerance; the energy is recorded in the trace at
every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .analytic import AnalyticScalar
from .calculus import ProblemData, energy_F_detail
from .elliptic import DirichletOperator, DirichletProblem, solve_dirichlet
from .errors import BallOutsideGrid, EmptyDomain, NoDescent, StepCollapse
from .grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    _shifted,
    ball_domain_integral,
    ball_integral,
    masked_gradient,
    sample_values,
    volume,
)

__all__ = [
    "OptimizeConfig",
    "OptTrace",
    "DiagnosticsReport",
    "optimize",
    "diagnostics",
    "minimality_probe",
    "reinitialize",
    "extend_speed",
]


# ---------------------------------------------------------------------------
# Level-set machinery
# ---------------------------------------------------------------------------


def _godunov_gradnorm(p: NDArray, s: NDArray, h: float) -> NDArray:
    """Upwind (Godunov) |grad p| for the redistancing equation, with
    propagation direction given by the sign field ``s``."""
    g2 = np.zeros_like(p)
    for ax in range(p.ndim):
        a = (p - _shifted(p, ax, -1)) / h  # backward
        b = (_shifted(p, ax, +1) - p) / h  # forward
        # one-sided at the box faces
        lo = [slice(None)] * p.ndim
        hi = [slice(None)] * p.ndim
        lo[ax], hi[ax] = 0, -1
        a[tuple(lo)] = b[tuple(lo)]
        b[tuple(hi)] = a[tuple(hi)]
        pos = np.maximum(np.maximum(a, 0.0) ** 2, np.minimum(b, 0.0) ** 2)
        neg = np.maximum(np.minimum(a, 0.0) ** 2, np.maximum(b, 0.0) ** 2)
        g2 += np.where(s > 0, pos, neg)
    return np.sqrt(g2)


def reinitialize(phi: ScalarField, sweeps: int = 50) -> ScalarField:
    """Redistance the level set toward signed distance, keeping the
    interface in place.

    Nodes adjacent to the zero crossing are pinned to the sub-cell
    distance phi / |grad phi| (so the interface moves by O(h^2), not
    O(h)); elsewhere the standard redistancing equation
    p_tau = sign(phi0)(1 - |grad p|) is iterated with a Godunov upwind
    gradient.
    """
    grid = phi.grid
    h = grid.h
    p0 = phi.values

    near = np.zeros(grid.node_shape, dtype=bool)
    for ax in range(grid.dim):
        for sgn in (+1, -1):
            nb = _shifted(p0, ax, sgn, fill=np.nan)
            near |= np.isfinite(nb) & (p0 * nb <= 0.0) & ((p0 != 0.0) | (nb != 0.0))

    g = np.stack(np.gradient(p0, h, edge_order=2))
    gmag = np.maximum(np.sqrt((g**2).sum(axis=0)), 1e-12)
    pinned = np.where(near, p0 / gmag, 0.0)

    s = np.sign(p0)
    # Seed the far field with the exact (pixelated) distance transform so
    # nodes beyond the sweep horizon already carry a genuine distance; the
    # sweeps then only polish the near field.  Rescaling the stale values
    # instead would erode the far field a little on every reinitialization.
    inside = p0 > 0.0
    d_in = ndimage.distance_transform_edt(inside) * h
    d_out = ndimage.distance_transform_edt(~inside) * h
    p = np.where(inside, d_in, -d_out)
    p[near] = pinned[near]
    dtau = 0.5 * h
    for _ in range(sweeps):
        gn = _godunov_gradnorm(p, s, h)
        p = p - dtau * s * (gn - 1.0)
        p[near] = pinned[near]
    return ScalarField(grid, p)


def extend_speed(
    phi: ScalarField,
    band_values: NDArray,
    band: NDArray,
    sweeps: int = 10,
) -> NDArray:
    """Propagate a speed known on the near-interface band outward so it is
    constant along the level-set normals: Jacobi sweeps of the upwind
    discretization of sign(phi) n . grad V = 0 with n = grad phi/|grad phi|."""
    grid = phi.grid
    h = grid.h
    g = np.gradient(phi.values, h, edge_order=2)
    gmag = np.maximum(np.sqrt(sum(gi**2 for gi in g)), 1e-12)
    n = [gi / gmag for gi in g]
    s = np.sign(phi.values)

    V = np.where(band, band_values, 0.0)
    for _ in range(sweeps):
        num = np.zeros(grid.node_shape)
        den = np.zeros(grid.node_shape)
        for ax in range(grid.dim):
            w = np.abs(s * n[ax])
            upwind_dir = np.where(s * n[ax] > 0, -1, +1)
            Vm = _shifted(V, ax, -1)
            Vp = _shifted(V, ax, +1)
            Vup = np.where(upwind_dir < 0, Vm, Vp)
            num += w * Vup
            den += w
        Vnew = np.where(den > 1e-12, num / np.maximum(den, 1e-12), V)
        V = np.where(band, band_values, Vnew)
    return V


# ---------------------------------------------------------------------------
# Configuration and trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizeConfig:
    """Descent configuration.

    ``step`` is the CFL fraction: the time step is step*h/max|V|.  For
    heat mode, ``heat_boundary`` supplies the positive Dirichlet data on
    the fixed outer boundary and ``heat_Lambda`` the measure penalty;
    ``design`` is the level set of the design region D (Omega is kept
    inside {design > 0}).
    """

    mode: str
    data: ProblemData | None
    init: DomainRep
    step: float = 0.5
    max_steps: int = 200
    reinit_every: int = 5
    stop_tol: float = 2e-3
    tol: float = 1e-8
    lam: float = 1.0
    heat_Lambda: float = 0.25
    heat_boundary: AnalyticScalar | None = None
    design: ScalarField | None = None

    def __post_init__(self):
        if self.mode not in ("general", "bernoulli", "heat"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.init.is_empty():
            raise ValueError("initial domain is empty")
        if self.mode in ("general", "bernoulli") and self.data is None:
            raise ValueError(f"{self.mode} mode needs problem data")
        if self.mode == "heat" and self.heat_boundary is None:
            raise ValueError("heat mode needs boundary data")


@dataclass
class OptTrace:
    """Per-step descent records."""

    steps: list = field(default_factory=list)  # dict per step
    converged: bool = False
    stop_reason: str = ""

    def append(self, **rec) -> None:
        if not np.isfinite(rec.get("energy", np.nan)):
            raise ValueError("non-finite energy in descent trace")
        self.steps.append(rec)

    def to_csv(self, path: str) -> None:
        cols = ["step", "energy", "volume", "max_speed", "dt", "halvings"]
        lines = [",".join(cols) + "\n"]
        for r in self.steps:
            lines.append(
                ",".join(
                    f"{r[c]:.17g}" if c != "step" else str(r[c]) for c in cols
                )
                + "\n"
            )
        with open(path, "w") as fh:
            fh.writelines(lines)


# ---------------------------------------------------------------------------
# Descent
# ---------------------------------------------------------------------------


def _heat_bd_arrays(cfg: OptimizeConfig, grid: Grid, phi_vals: NDArray):
    """Node arrays of the Dirichlet data for heat mode: (phi_D, 1) on the
    fixed boundary, forced to zero near the free boundary so interpolated
    crossing values stay clean."""
    pts = grid.node_coords()
    bd_u = cfg.heat_boundary.value(pts).reshape(grid.node_shape).copy()
    bd_v = np.ones(grid.node_shape)
    free = (np.abs(phi_vals) < 3.0 * grid.h) | (phi_vals <= 0.0)
    bd_u[free] = 0.0
    bd_v[free] = 0.0
    return bd_u, bd_v


def _solve_mode(cfg: OptimizeConfig, dom: DomainRep):
    """Solve the state (and adjoint) for the given mode; returns
    (energy, u, v, op)."""
    grid = dom.grid
    if dom.is_empty():
        raise StepCollapse("domain vanished")
    if cfg.mode == "general":
        detail = energy_F_detail(dom, cfg.data, tol=cfg.tol)
        return detail.value, detail.u, detail.v, detail.op
    if cfg.mode == "bernoulli":
        op = DirichletOperator(dom)
        fS = cfg.data.f.sample(grid)
        u = solve_dirichlet(DirichletProblem(dom, fS, tol=cfg.tol), op=op)
        qterm = _measure_term(dom, cfg.data.Q)
        E = -op.weighted_integral(fS.values, u.values) / (2.0 * cfg.lam**2) + qterm
        return E, u, u, op
    # heat
    bd_u, bd_v = _heat_bd_arrays(cfg, grid, dom.phi.values)
    op = DirichletOperator(dom, ScalarField(grid, bd_u))
    op_v = DirichletOperator(dom, ScalarField(grid, bd_v))
    zero = ScalarField.constant(grid, 0.0)
    u = solve_dirichlet(
        DirichletProblem(dom, zero, boundary_data=ScalarField(grid, bd_u), tol=cfg.tol),
        op=op,
    )
    v = solve_dirichlet(
        DirichletProblem(dom, zero, boundary_data=ScalarField(grid, bd_v), tol=cfg.tol),
        op=op_v,
    )
    E = op.dirichlet_form(u.values, v.values, bd_u, bd_v) + cfg.heat_Lambda * volume(dom)
    return E, u, v, op


def _measure_term(dom: DomainRep, Q: AnalyticScalar) -> float:
    from .grid import integrate_domain

    return integrate_domain(dom, Q.sample(dom.grid).values)


def _boundary_gradmag(u: ScalarField, mask: NDArray, pts: NDArray, m_in: NDArray):
    """|grad u| extrapolated to interface points from one-sided interior
    samples at 1.5h and 2.5h along the inward direction ``m_in``."""
    grid = u.grid
    g = masked_gradient(u.values, mask, grid.h)

    def gmag_at(p):
        comps = np.stack([sample_values(grid, gi, p) for gi in g], axis=-1)
        return np.linalg.norm(comps, axis=1)

    g1 = gmag_at(pts + 1.5 * grid.h * m_in)
    g2 = gmag_at(pts + 2.5 * grid.h * m_in)
    return 2.5 * g1 - 1.5 * g2


def _smooth_band(vals: NDArray, band: NDArray, passes: int = 2) -> NDArray:
    """Box-smooth a field on a band (band-masked weights, so values outside
    never leak in).  Applied to the speed, this damps the grid-scale
    sawtooth an explicit interface flow would otherwise sustain."""
    w = band.astype(float)
    v = np.where(band, vals, 0.0)
    for _ in range(passes):
        num = v.copy()
        den = w.copy()
        for ax in range(vals.ndim):
            num = num + _shifted(v, ax, +1) + _shifted(v, ax, -1)
            den = den + _shifted(w, ax, +1) + _shifted(w, ax, -1)
        v = np.where(band, num / np.maximum(den, 1e-300), 0.0)
    return v


def _speed_field(cfg: OptimizeConfig, dom: DomainRep, u: ScalarField, v: ScalarField):
    """Extended normal speed V and its max over the near-interface band."""
    grid = dom.grid
    h = grid.h
    phi_vals = dom.phi.values
    mask = dom.inside_mask()

    g = np.gradient(phi_vals, h, edge_order=2)
    gmag = np.maximum(np.sqrt(sum(gi**2 for gi in g)), 1e-12)
    # The band width uses a clamped gradient magnitude: far from the
    # interface the level set is not a clean distance function and a large
    # |grad phi| there must not pull distant nodes into the band.
    band = np.abs(phi_vals) <= 4.0 * h * gmag.clip(0.5, 2.0)

    nodes = grid.node_coords().reshape(grid.node_shape + (grid.dim,))
    normal = np.stack([gi / gmag for gi in g], axis=-1)  # inward (grad phi)
    cp = nodes - (phi_vals / gmag)[..., None] * np.stack(g, axis=-1) / gmag[..., None]

    bpts = cp[band]
    m_in = normal[band]
    gu = _boundary_gradmag(u, mask, bpts, m_in)
    if cfg.mode == "bernoulli":
        prod = gu * gu / (2.0 * cfg.lam**2)
    else:
        gv = _boundary_gradmag(v, mask, bpts, m_in)
        prod = gu * gv
    if cfg.mode == "heat":
        target = cfg.heat_Lambda * np.ones(len(bpts))
    else:
        target = cfg.data.Q.value(bpts)
    vb = prod - target

    # The quadratic form of F at a free-boundary configuration is positive
    # on mean-free (shape) perturbations but negative along the uniform
    # dilation mode, so neither pure energy descent (outward speed vb) nor
    # pure optimality relaxation (inward speed vb) is stable.  Split the
    # speed: descend the energy with the mean-free part and relax the
    # uniform part toward the optimality condition -- net outward speed
    # vb - 2*mean(vb).
    vbar = float(vb.mean()) if len(vb) else 0.0
    band_vals = np.zeros(grid.node_shape)
    band_vals[band] = vb - 2.0 * vbar
    band_vals = _smooth_band(band_vals, band)
    V = extend_speed(dom.phi, band_vals, band)

    resid = np.zeros(grid.node_shape)
    resid[band] = vb

    if cfg.mode == "heat":
        # keep the compact complement away from the fixed boundary
        dist_face = np.minimum(
            (nodes - grid.origin).min(axis=-1),
            (grid.origin + grid.extent - nodes).min(axis=-1),
        )
        V = np.where(dist_face < 3.0 * h, 0.0, V)

    on_interface = band & mask
    if on_interface.any():
        ri = resid[on_interface]
        vmax = float(np.abs(ri).max())
        vrms = float(np.sqrt(np.mean(ri**2)))
        vcfl = float(np.abs(band_vals[on_interface]).max())
    else:
        vmax = vrms = vcfl = 0.0
    return V, vmax, vrms, vcfl


def optimize(cfg: OptimizeConfig) -> tuple:
    """Run the shape descent; returns (final DomainRep, OptTrace)."""
    grid = cfg.init.grid
    h = grid.h
    phi = reinitialize(cfg.init.phi)
    if cfg.design is not None:
        phi = ScalarField(grid, np.minimum(phi.values, cfg.design.values))
    trace = OptTrace()

    dom = DomainRep.from_phi(phi)
    energy, u, v, _ = _solve_mode(cfg, dom)
    V, vmax, vrms, vcfl = _speed_field(cfg, dom, u, v)
    # Acceptance is judged against the best residual seen so far plus a
    # fixed slack, so per-step tolerances cannot compound into a slow
    # runaway over a long descent.
    step_tol = 0.02 + 10.0 * (h * h + cfg.tol)
    best_vrms = vrms

    for k in range(cfg.max_steps):
        if vmax < cfg.stop_tol:
            trace.converged = True
            trace.stop_reason = f"max interface speed {vmax:.3e} < stop_tol"
            break

        # CFL step with a floor on the normalizing speed: once the residual
        # is small the displacement shrinks with it instead of dithering a
        # full grid cell per step.
        dt = cfg.step * h / max(vcfl, 10.0 * cfg.stop_tol, 1e-14)
        accepted = False
        halvings = 0
        while halvings <= 8:
            cand = phi.values + dt * V
            if cfg.design is not None:
                cand = np.minimum(cand, cfg.design.values)
            cand_phi = ScalarField(grid, cand)
            cand_dom = DomainRep.from_phi(cand_phi)
            if cand_dom.is_empty():
                raise StepCollapse("domain vanished during descent")
            try:
                cand_E, cand_u, cand_v, _ = _solve_mode(cfg, cand_dom)
            except EmptyDomain:
                raise StepCollapse("domain vanished during descent")
            cand_V, cand_vmax, cand_vrms, cand_vcfl = _speed_field(
                cfg, cand_dom, cand_u, cand_v
            )
            if cand_vrms <= best_vrms + step_tol:
                accepted = True
                break
            dt *= 0.5
            halvings += 1
        if not accepted:
            raise NoDescent(
                f"optimality residual stuck after 8 halvings at step {k} "
                f"(rms={vrms:.6g})"
            )

        phi, dom, energy = cand_phi, cand_dom, cand_E
        u, v = cand_u, cand_v
        V, vmax, vrms, vcfl = cand_V, cand_vmax, cand_vrms, cand_vcfl
        best_vrms = min(best_vrms, vrms)
        if cfg.reinit_every > 0 and (k + 1) % cfg.reinit_every == 0:
            phi = reinitialize(phi)
            if cfg.design is not None:
                phi = ScalarField(grid, np.minimum(phi.values, cfg.design.values))
            dom = DomainRep.from_phi(phi)
            energy, u, v, _ = _solve_mode(cfg, dom)
            V, vmax, vrms, vcfl = _speed_field(cfg, dom, u, v)

        trace.append(
            step=k,
            energy=energy,
            volume=volume(dom),
            max_speed=vmax,
            rms_speed=vrms,
            dt=dt,
            halvings=halvings,
        )
    else:
        trace.stop_reason = "max_steps reached"

    return dom, trace


# ---------------------------------------------------------------------------
# Diagnostics on a computed optimum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsReport:
    """Scale-resolved regularity measurements near the free boundary."""

    lipschitz: float
    nondeg_min: float
    density_min: float
    density_max: float
    slope_min: float
    slope_max: float
    radii: tuple
    rows: tuple  # (point, r, nondeg, density, slope) records
    flags: tuple

    def to_csv(self, path: str) -> None:
        lines = ["x,y,z,r,nondeg_ratio,density,measure_slope\n"]
        for p, r, nd, dens, sl in self.rows:
            coords = list(p) + [0.0] * (3 - len(p))
            lines.append(
                ",".join(f"{c:.17g}" for c in coords)
                + f",{r:.17g},{nd:.17g},{dens:.17g},{sl:.17g}\n"
            )
        with open(path, "w") as fh:
            fh.writelines(lines)


def _boundary_sample_points(dom: DomainRep, max_points: int = 12) -> NDArray:
    """Deterministic subsample of interface points."""
    from .calculus import _interface_elements

    elems = _interface_elements(dom)
    if elems is None:
        return np.zeros((0, dom.grid.dim))
    pts = elems[0]
    stride = max(1, len(pts) // max_points)
    return pts[::stride][:max_points]


def diagnostics(
    dom: DomainRep,
    data: ProblemData,
    u: ScalarField | None = None,
    tol: float = 1e-8,
    max_points: int = 12,
) -> DiagnosticsReport:
    """Measure Lipschitz, non-degeneracy, density, and level-set measure
    slope constants over dyadic radii around sampled boundary points."""
    grid = dom.grid
    h = grid.h
    if dom.is_empty():
        return DiagnosticsReport(
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, (), (), ("empty domain",)
        )
    if u is None:
        u = solve_dirichlet(
            DirichletProblem(dom, data.f.sample(grid), tol=tol),
            op=DirichletOperator(dom),
        )

    mask = dom.inside_mask()
    g = masked_gradient(u.values, mask, h)
    lipschitz = float(np.sqrt(sum(gi**2 for gi in g)).max())

    pts = _boundary_sample_points(dom, max_points)
    flags = []
    if len(pts) == 0:
        flags.append("no boundary points found")

    r_max = 0.25 * float(grid.extent.min())
    radii = []
    r = 4.0 * h
    while r <= r_max:
        radii.append(r)
        r *= 2.0

    nodes = grid.node_coords()
    uvals = u.values.ravel()
    tgrid = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    rows = []
    for p in pts:
        dists = np.linalg.norm(nodes - p, axis=1)
        for r in radii:
            if not grid.contains_ball(p, r, slack=1e-12):
                continue
            ball = BallRegion(p, r)
            inside_ball = dists <= r
            sup_u = float(uvals[inside_ball].max()) if inside_ball.any() else 0.0
            nondeg = sup_u / r
            vol_ball = ball_integral(
                ScalarField.constant(grid, 1.0), ball, "volume"
            )
            vol_in = ball_domain_integral(np.ones(grid.node_shape), dom, ball)
            density = vol_in / max(vol_ball, 1e-300)
            meas = []
            for t in tgrid:
                ind = ((u.values > 0.0) & (u.values < r * t)).astype(float)
                meas.append(ball_domain_integral(ind, dom, ball))
            meas = np.array(meas)
            slope = float((meas @ tgrid) / (tgrid @ tgrid) / max(vol_ball, 1e-300))
            rows.append((tuple(p), r, nondeg, density, slope))

    if not rows:
        flags.append("no admissible (point, radius) pairs")
        return DiagnosticsReport(
            lipschitz, 0.0, 0.0, 0.0, 0.0, 0.0, tuple(radii), (), tuple(flags)
        )

    nondegs = [r[2] for r in rows]
    densities = [r[3] for r in rows]
    slopes = [r[4] for r in rows]
    if min(nondegs) <= 0:
        flags.append("non-degeneracy constant not positive")
    if min(slopes) <= 0:
        flags.append("measure slope not positive")
    return DiagnosticsReport(
        lipschitz=lipschitz,
        nondeg_min=float(min(nondegs)),
        density_min=float(min(densities)),
        density_max=float(max(densities)),
        slope_min=float(min(slopes)),
        slope_max=float(max(slopes)),
        radii=tuple(radii),
        rows=tuple(rows),
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Minimality probes
# ---------------------------------------------------------------------------


def _energy_in_ball(
    w_values: NDArray, mask: NDArray, fvals: NDArray, ball: BallRegion, grid: Grid
) -> float:
    g = masked_gradient(w_values, mask, grid.h)
    integrand = 0.5 * sum(gi**2 for gi in g) - fvals * w_values
    return ball_integral(ScalarField(grid, integrand), ball, "volume")


def minimality_probe(
    dom: DomainRep,
    data: ProblemData,
    ball: BallRegion,
    direction: str,
    u: ScalarField | None = None,
    tol: float = 1e-8,
    trunc: float = 0.1,
) -> float:
    """Margin of the outward/inward almost-minimality inequality on a ball.

    outward: margin = E_f(harmonic replacement) - E_f(u) + (C2 C_Q/2)|ball
    minus Omega|; the replacement solves -Lap w = f in the ball with w = u
    on its sphere, and its positivity set may fill the ball.

    inward: margin = E_f(competitor) - E_f(u) - (C1 c_Q/2)|measure removed|
    with the competitor blending the truncation (u - r*trunc)_+ into u
    across the ball.

    A margin >= -tolerance means the inequality holds at grid accuracy.
    """
    grid = dom.grid
    if not grid.contains_ball(ball.center, ball.radius, slack=1e-12):
        raise BallOutsideGrid(
            f"ball c={ball.center} r={ball.radius} leaves the grid box"
        )
    if direction not in ("outward", "inward"):
        raise ValueError(f"direction must be outward or inward, got {direction!r}")
    C1, C2, c_Q, C_Q = data.resolved_constants(grid)
    if u is None:
        u = solve_dirichlet(
            DirichletProblem(dom, data.f.sample(grid), tol=tol),
            op=DirichletOperator(dom),
        )
    fvals = data.f.sample(grid).values
    mask_u = dom.inside_mask()
    E_u = _energy_in_ball(u.values, mask_u, fvals, ball, grid)

    nodes = grid.node_coords().reshape(grid.node_shape + (grid.dim,))
    rdist = np.linalg.norm(nodes - ball.center, axis=-1)

    if direction == "outward":
        ball_phi = ScalarField(grid, ball.radius - rdist)
        ball_dom = DomainRep.from_phi(ball_phi)
        op = DirichletOperator(ball_dom, boundary_data=u)
        w = solve_dirichlet(
            DirichletProblem(ball_dom, data.f.sample(grid), boundary_data=u, tol=tol),
            op=op,
        )
        # outside the ball the competitor coincides with u
        w_vals = np.where(ball_dom.inside_mask(), w.values, u.values)
        mask_w = mask_u | ball_dom.inside_mask()
        E_w = _energy_in_ball(w_vals, mask_w, fvals, ball, grid)
        gained = ball_integral(
            ScalarField(grid, 1.0 - mask_u.astype(float)), ball, "volume"
        )
        return E_w - E_u + 0.5 * C2 * C_Q * gained

    # inward: blend the truncation into u across the ball
    s = trunc * ball.radius
    eta = np.clip(2.0 * (1.0 - rdist / ball.radius), 0.0, 1.0)
    truncated = np.maximum(u.values - s, 0.0)
    comp = eta * truncated + (1.0 - eta) * u.values
    mask_c = comp > 0.0
    E_c = _energy_in_ball(comp, mask_c, fvals, ball, grid)
    removed_ind = (mask_u & ~mask_c).astype(float)
    removed = ball_integral(ScalarField(grid, removed_ind), ball, "volume")
    return E_c - E_u - 0.5 * C1 * c_Q * removed
