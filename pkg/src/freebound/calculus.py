"""Energies and first/second variations of the shape functional.

The shape functional is F(Omega) = int(-g u_Omega) + int_Omega Q with
-Lap u = f on Omega.  Perturbing Omega along the flow of a vector field xi
and pulling the PDE back to the fixed domain produces variable-coefficient
expansions whose t- and t^2-coefficients are the matrices/sources

    dA   = -Dxi - (Dxi)^T + (div xi) I
    d2A  = Dxi (Dxi)^T + ((Dxi)^T)^2/2 + (Dxi)^2/2
           - (xi . grad)[(Dxi)^T + Dxi]/2 - ((Dxi)^T + Dxi) div xi
           + I ((div xi)^2 + xi . grad div xi)/2
    df   = div(f xi)
    d2f  = xi.(D^2 f)xi/2 + (grad f).Dxi[xi]/2
           + f((div xi)^2 + xi.grad div xi)/2 + (grad f . xi) div xi
    d2Q  = (xi.grad Q) div xi + xi.(D^2 Q)xi/2
           + Q (div xi)^2/2 + Q xi.grad(div xi)/2

(Dxi has entries (Dxi)_ij = d_j xi_i.)  From these, the linearized states
du, d2u solve div-form problems and the variations assemble as volume
integrals over Omega.  Everything here also covers the one-phase
functional G(u) = int(|grad u|^2 + Lam 1_{u>0}) used by the cone lab.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .analytic import AnalyticScalar, BumpField, FlowMap
from .errors import NotHarmonic
from .grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    ball_domain_integral,
    ball_integral,
    gradient,
    integrate_domain,
    integrate_domain_sharp,
    masked_gradient,
    region_volfrac,
    sample_values,
)
from .elliptic import (
    DirichletOperator,
    DirichletProblem,
    DivFormProblem,
    solve_dirichlet,
    solve_divform,
)

__all__ = [
    "ProblemData",
    "VariationReport",
    "energy_Ef",
    "energy_F",
    "energy_F_detail",
    "energy_G",
    "delta_A",
    "delta_f",
    "linearized_state",
    "first_variation",
    "first_variation_forms",
    "second_variation",
    "one_phase_variations",
    "solve_state_pair",
]


@dataclass(frozen=True)
class ProblemData:
    """The data triple (f, g, Q) with its comparability constants.

    The constants C1 <= f/g <= C2 and c_Q <= Q <= C_Q are derived from node
    samples when not supplied.  ``validate_on`` enforces 0 <= C1 g <= f <=
    C2 g and 0 < c_Q <= Q <= C_Q.
    """

    f: AnalyticScalar
    g: AnalyticScalar
    Q: AnalyticScalar
    C1: float | None = None
    C2: float | None = None
    c_Q: float | None = None
    C_Q: float | None = None

    def resolved_constants(self, grid: Grid) -> tuple:
        pts = grid.node_coords()
        fv = self.f.value(pts)
        gv = self.g.value(pts)
        qv = self.Q.value(pts)
        if np.any(gv <= 0) or np.any(fv < 0):
            raise ValueError("need f >= 0 and g > 0 on the grid")
        ratio = fv / gv
        C1 = self.C1 if self.C1 is not None else float(ratio.min())
        C2 = self.C2 if self.C2 is not None else float(ratio.max())
        c_Q = self.c_Q if self.c_Q is not None else float(qv.min())
        C_Q = self.C_Q if self.C_Q is not None else float(qv.max())
        return C1, C2, c_Q, C_Q

    def validate_on(self, grid: Grid) -> None:
        C1, C2, c_Q, C_Q = self.resolved_constants(grid)
        pts = grid.node_coords()
        fv = self.f.value(pts)
        gv = self.g.value(pts)
        qv = self.Q.value(pts)
        tol = 1e-12 * max(1.0, float(np.abs(fv).max()))
        if np.any(C1 * gv > fv + tol) or np.any(fv > C2 * gv + tol):
            raise ValueError("comparability C1 g <= f <= C2 g fails on nodes")
        if not c_Q > 0 or np.any(qv < c_Q - tol) or np.any(qv > C_Q + tol):
            raise ValueError("bounds c_Q <= Q <= C_Q fail on nodes")

    @classmethod
    def constants(cls, dim: int, f: float = 1.0, g: float = 1.0, Q: float = 0.25):
        return cls(
            f=AnalyticScalar.constant(f, dim),
            g=AnalyticScalar.constant(g, dim),
            Q=AnalyticScalar.constant(Q, dim),
        )


# ---------------------------------------------------------------------------
# Pointwise variation coefficients
# ---------------------------------------------------------------------------


def _jacobian_terms(spec: BumpField, pts: NDArray):
    """xi, Dxi, div xi, and the contracted second-derivative objects."""
    pts = np.atleast_2d(pts)
    xi = spec.xi(pts)
    J = spec.dxi(pts)  # (N, i, j) = d_j xi_i
    div = np.trace(J, axis1=1, axis2=2)
    H = spec.d2xi(pts)  # (N, i, j, k) = d_k d_j xi_i
    # (xi . grad)[Dxi]_ij = sum_k xi_k d_k (Dxi)_ij
    adv_J = np.einsum("nk,nijk->nij", xi, H)
    # grad(div xi)_k = sum_i d_k d_i xi_i
    grad_div = np.einsum("niik->nk", H)
    return xi, J, div, adv_J, grad_div


def delta_A(spec: BumpField, pts: NDArray, order: int = 1) -> NDArray:
    """The coefficient matrices dA (order 1) or d2A (order 2) at points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    xi, J, div, adv_J, grad_div = _jacobian_terms(spec, pts)
    d = pts.shape[1]
    eye = np.eye(d)
    JT = np.swapaxes(J, 1, 2)
    if order == 1:
        return -J - JT + div[:, None, None] * eye
    if order != 2:
        raise ValueError("order must be 1 or 2")
    adv_sym = adv_J + np.swapaxes(adv_J, 1, 2)
    xi_grad_div = np.einsum("nk,nk->n", xi, grad_div)
    out = (
        np.einsum("nij,nkj->nik", J, J)  # Dxi (Dxi)^T
        + 0.5 * np.einsum("nij,njk->nik", JT, JT)
        + 0.5 * np.einsum("nij,njk->nik", J, J)
        - 0.5 * adv_sym
        - (JT + J) * div[:, None, None]
        + 0.5 * (div**2 + xi_grad_div)[:, None, None] * eye
    )
    return out


def delta_f(
    w: AnalyticScalar,
    spec: BumpField,
    pts: NDArray,
    order: int = 1,
    q_form: bool = False,
) -> NDArray:
    """Pointwise source coefficients.

    order 1: div(w xi) = grad w . xi + w div xi.
    order 2: the data expansion d2f with w in the role of f, or -- with
    ``q_form`` -- the measure-term expansion d2Q with w in the role of Q.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    xi, J, div, _, grad_div = _jacobian_terms(spec, pts)
    wg = w.grad(pts)
    wv = w.value(pts)
    wg_xi = np.einsum("ni,ni->n", wg, xi)
    if order == 1:
        return wg_xi + wv * div
    if order != 2:
        raise ValueError("order must be 1 or 2")
    wh = w.hess(pts)
    xi_H_xi = np.einsum("ni,nij,nj->n", xi, wh, xi)
    xi_grad_div = np.einsum("nk,nk->n", xi, grad_div)
    if q_form:
        return wg_xi * div + 0.5 * xi_H_xi + 0.5 * wv * div**2 + 0.5 * wv * xi_grad_div
    J_xi = np.einsum("nij,nj->ni", J, xi)
    wg_Jxi = np.einsum("ni,ni->n", wg, J_xi)
    return (
        0.5 * xi_H_xi
        + 0.5 * wg_Jxi
        + 0.5 * wv * (div**2 + xi_grad_div)
        + wg_xi * div
    )


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def _grad_squared(u: ScalarField, mask: NDArray | None = None) -> NDArray:
    if mask is None:
        g = gradient(u)
    else:
        g = masked_gradient(u.values, mask, u.grid.h)
    return sum(gi**2 for gi in g)


def energy_Ef(u: ScalarField, data, region) -> float:
    """E_f(u, region) = int(|grad u|^2 / 2 - f u) over the region.

    ``data`` is a ProblemData (its f is used) or an AnalyticScalar f.
    ``region`` is a DomainRep or a BallRegion.
    """
    fa = data.f if isinstance(data, ProblemData) else data
    fvals = fa.sample(u.grid).values
    integrand = 0.5 * _grad_squared(u) - fvals * u.values
    if isinstance(region, BallRegion):
        return ball_integral(ScalarField(u.grid, integrand), region, "volume")
    return integrate_domain_sharp(region, integrand)


def solve_state_pair(
    dom: DomainRep,
    data: ProblemData,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
):
    """State u (-Lap u = f) and adjoint v (-Lap v = g) on the same domain."""
    if op is None:
        op = DirichletOperator(dom)
    fS = data.f.sample(dom.grid)
    gS = data.g.sample(dom.grid)
    u = solve_dirichlet(DirichletProblem(dom, fS, tol=tol), op=op)
    v = solve_dirichlet(DirichletProblem(dom, gS, tol=tol), op=op)
    return u, v, op


@dataclass(frozen=True)
class EnergyFDetail:
    value: float
    symmetric_value: float
    measure_term: float
    u: ScalarField
    v: ScalarField
    op: DirichletOperator


def energy_F_detail(
    dom: DomainRep,
    data: ProblemData,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
    need_adjoint: bool = True,
) -> EnergyFDetail:
    """F(Omega) = int(-g u) + int_Omega Q, plus the symmetric form
    int(grad u . grad v - g u - f v + Q 1_Omega).

    The Dirichlet product uses the assembled bilinear form, so the
    symmetric form agrees with the primal one to solver precision; the
    agreement is asserted at 10x the solve tolerance.
    """
    grid = dom.grid
    if dom.is_empty():
        zero = ScalarField.constant(grid, 0.0)
        return EnergyFDetail(0.0, 0.0, 0.0, zero, zero, None)
    if op is None:
        op = DirichletOperator(dom)
    fS = data.f.sample(grid)
    gS = data.g.sample(grid)
    u = solve_dirichlet(DirichletProblem(dom, fS, tol=tol), op=op)
    qterm = integrate_domain(dom, data.Q.sample(grid).values)
    gu = op.weighted_integral(gS.values, u.values)
    value = -gu + qterm
    if not need_adjoint:
        return EnergyFDetail(value, value, qterm, u, u, op)
    v = solve_dirichlet(DirichletProblem(dom, gS, tol=tol), op=op)
    fv = op.weighted_integral(fS.values, v.values)
    sym = op.bilinear(u.values, v.values) - gu - fv + qterm
    scale = max(1.0, abs(gu), abs(fv))
    if abs(sym - value) > 10.0 * tol * scale:
        raise AssertionError(
            f"symmetric/primal energy mismatch {abs(sym - value):.3e} "
            f"exceeds 10*tol*scale = {10 * tol * scale:.3e}"
        )
    return EnergyFDetail(value, sym, qterm, u, v, op)


def energy_F(
    dom: DomainRep,
    data: ProblemData,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
    need_adjoint: bool = True,
) -> float:
    return energy_F_detail(dom, data, tol=tol, op=op, need_adjoint=need_adjoint).value


def energy_G(u: ScalarField, lam: float, region=None) -> float:
    """One-phase energy int(|grad u|^2 + lam 1_{u>0}) over the region."""
    grid = u.grid
    mask = u.values > 0.0
    gsq = _grad_squared(u, mask)
    if isinstance(region, BallRegion):
        posdom = DomainRep.from_phi(u)
        dirichlet = ball_integral(ScalarField(grid, gsq * mask), region, "volume")
        meas = ball_domain_integral(np.ones(grid.node_shape), posdom, region)
        return dirichlet + lam * meas
    if region is None:
        region = DomainRep.from_phi(u)
    dirichlet = integrate_domain_sharp(region, gsq * mask, inside=mask)
    posfrac = region_volfrac(grid, np.minimum(u.values, region.phi.values))
    meas = float(posfrac.sum() * grid.h**grid.dim)
    return dirichlet + lam * meas


# ---------------------------------------------------------------------------
# Linearized states and variations
# ---------------------------------------------------------------------------


def _domain_gradient(u: ScalarField, dom: DomainRep) -> list:
    return masked_gradient(u.values, dom.phi.values > 0.0, u.grid.h)


def _flux_from_matrix(Amat_nodes: NDArray, grad_u: list, grid: Grid) -> tuple:
    """Components of A grad u as node arrays, from (N, d, d) matrix samples."""
    d = grid.dim
    shape = grid.node_shape
    G = np.stack([g.ravel() for g in grad_u], axis=-1)
    F = np.einsum("nij,nj->ni", Amat_nodes, G)
    return tuple(F[:, i].reshape(shape) for i in range(d))


def linearized_state(
    u: ScalarField,
    dom: DomainRep,
    w: AnalyticScalar,
    spec: BumpField,
    order: int = 1,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
    first: ScalarField | None = None,
) -> ScalarField:
    """du (order 1) or d2u (order 2) for the state with data w.

    -Lap du  = div(dA grad u) + df
    -Lap d2u = div(dA grad du) + div(d2A grad u) + d2f
    """
    grid = dom.grid
    pts = grid.node_coords()
    if op is None:
        op = DirichletOperator(dom)
    dA = delta_A(spec, pts, order=1)
    gu = _domain_gradient(u, dom)
    if order == 1:
        flux = _flux_from_matrix(dA, gu, grid)
        src = ScalarField(grid, delta_f(w, spec, pts, order=1).reshape(grid.node_shape))
        return solve_divform(DivFormProblem(dom, flux, src, tol=tol), op=op)
    if order != 2:
        raise ValueError("order must be 1 or 2")
    if first is None:
        first = linearized_state(u, dom, w, spec, order=1, tol=tol, op=op)
    d2A = delta_A(spec, pts, order=2)
    gdu = _domain_gradient(first, dom)
    f1 = _flux_from_matrix(dA, gdu, grid)
    f2 = _flux_from_matrix(d2A, gu, grid)
    flux = tuple(a + b for a, b in zip(f1, f2))
    src = ScalarField(grid, delta_f(w, spec, pts, order=2).reshape(grid.node_shape))
    return solve_divform(DivFormProblem(dom, flux, src, tol=tol), op=op)


def first_variation(
    dom: DomainRep,
    data: ProblemData,
    spec: BumpField,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
    states: tuple | None = None,
) -> float:
    """dF(Omega)[xi] as a volume integral over Omega:

    int_Omega [(grad u . grad v + Q) div xi + xi . grad Q
               - grad u . ((Dxi)^T + Dxi) grad v
               - u div(g xi) - v div(f xi)]
    """
    grid = dom.grid
    pts = grid.node_coords()
    if states is None:
        u, v, op = solve_state_pair(dom, data, tol=tol, op=op)
    else:
        u, v = states
    gu = _domain_gradient(u, dom)
    gv = _domain_gradient(v, dom)
    xi, J, div, _, _ = _jacobian_terms(spec, pts)
    shape = grid.node_shape
    div = div.reshape(shape)

    Gu = np.stack([g.ravel() for g in gu], axis=-1)
    Gv = np.stack([g.ravel() for g in gv], axis=-1)
    gugv = np.einsum("ni,ni->n", Gu, Gv).reshape(shape)
    sym = J + np.swapaxes(J, 1, 2)
    cross = np.einsum("ni,nij,nj->n", Gu, sym, Gv).reshape(shape)

    Qv = data.Q.value(pts).reshape(shape)
    Qg = data.Q.grad(pts)
    xi_gradQ = np.einsum("ni,ni->n", xi, Qg).reshape(shape)
    div_g_xi = delta_f(data.g, spec, pts, order=1).reshape(shape)
    div_f_xi = delta_f(data.f, spec, pts, order=1).reshape(shape)

    integrand = (
        (gugv + Qv) * div
        + xi_gradQ
        - cross
        - u.values * div_g_xi
        - v.values * div_f_xi
    )
    return integrate_domain_sharp(dom, integrand)


def _interface_elements(dom: DomainRep):
    """Sampled interface: points, outward normals, weights (length/area).

    d=2 uses sub-grid contour extraction; d=3 a triangulated isosurface.
    """
    from skimage import measure

    grid = dom.grid
    phi = dom.phi.values
    h = grid.h
    if grid.dim == 2:
        contours = measure.find_contours(phi, 0.0)
        pts_list, w_list = [], []
        for poly in contours:
            phys = grid.origin + poly * h
            seg = phys[1:] - phys[:-1]
            lengths = np.linalg.norm(seg, axis=1)
            mids = 0.5 * (phys[1:] + phys[:-1])
            keep = lengths > 1e-12 * h
            pts_list.append(mids[keep])
            w_list.append(lengths[keep])
        if not pts_list:
            return None
        pts = np.concatenate(pts_list)
        w = np.concatenate(w_list)
    else:
        try:
            verts, faces, _, _ = measure.marching_cubes(phi, level=0.0, spacing=(h, h, h))
        except (ValueError, RuntimeError):
            return None
        verts = verts + grid.origin
        tri = verts[faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        w = 0.5 * np.linalg.norm(cross, axis=1)
        pts = tri.mean(axis=1)
        keep = w > 1e-14 * h * h
        pts, w = pts[keep], w[keep]

    # outward normal: Omega = {phi > 0}, so nu = -grad phi / |grad phi|
    gphi = gradient(dom.phi)
    gp = np.stack([sample_values(grid, g, pts) for g in gphi], axis=-1)
    norms = np.linalg.norm(gp, axis=1)
    ok = norms > 1e-12
    nu = np.zeros_like(gp)
    nu[ok] = -gp[ok] / norms[ok, None]
    return pts[ok], nu[ok], w[ok]


def boundary_gradient_samples(
    u: ScalarField, dom: DomainRep, pts: NDArray, nu: NDArray, offset: float = 1.5
) -> NDArray:
    """|grad u| at interface points, read one-sidedly from inside Omega.

    The gradient field is formed with interior-only stencils and sampled a
    fixed ``offset*h`` inside along the normal, where the stencils are
    clean; |grad u| is continuous up to the boundary from inside, so the
    O(h) foot shift costs O(h) accuracy.
    """
    grid = dom.grid
    g = _domain_gradient(u, dom)
    inner = pts - offset * grid.h * nu
    comps = np.stack([sample_values(grid, gi, inner) for gi in g], axis=-1)
    return np.linalg.norm(comps, axis=1)


def first_variation_forms(
    dom: DomainRep,
    data: ProblemData,
    spec: BumpField,
    tol: float = 1e-10,
    op: DirichletOperator | None = None,
    states: tuple | None = None,
) -> tuple:
    """(volume form, surface form) of dF.

    Surface form: int over the interface of (nu . xi)(Q - |grad u||grad v|).
    The two must agree within O(h) on smooth domains.
    """
    if states is None:
        u, v, op = solve_state_pair(dom, data, tol=tol, op=op)
        states = (u, v)
    vol = first_variation(dom, data, spec, tol=tol, op=op, states=states)
    elems = _interface_elements(dom)
    if elems is None:
        return vol, 0.0
    pts, nu, w = elems
    u, v = states
    gun = boundary_gradient_samples(u, dom, pts, nu)
    gvn = boundary_gradient_samples(v, dom, pts, nu)
    Qv = data.Q.value(pts)
    nuxi = np.einsum("ni,ni->n", nu, spec.xi(pts))
    surf = float(np.sum(w * nuxi * (Qv - gun * gvn)))
    return vol, surf


@dataclass(frozen=True)
class VariationReport:
    """First/second variation values with the Taylor-remainder ladder."""

    F0: float
    deltaF: float
    delta2F: float
    deltaU: ScalarField
    deltaV: ScalarField
    taylor_remainders: list  # [(t, remainder)], t strictly decreasing

    def remainder_exponents(self) -> list:
        """log2(R(t)/R(t/2)) for consecutive ladder entries."""
        out = []
        for (t1, r1), (t2, r2) in zip(self.taylor_remainders, self.taylor_remainders[1:]):
            if r2 == 0.0:
                out.append(np.inf)
            else:
                out.append(float(np.log2(r1 / r2)))
        return out

    def to_csv(self, path: str) -> None:
        lines = ["t,remainder\n"]
        for t, r in self.taylor_remainders:
            lines.append(f"{t:.17g},{r:.17g}\n")
        lines.append(
            f"summary,F0={self.F0:.17g};deltaF={self.deltaF:.17g};"
            f"delta2F={self.delta2F:.17g}\n"
        )
        with open(path, "w") as fh:
            fh.writelines(lines)


def second_variation(
    dom: DomainRep,
    data: ProblemData,
    spec: BumpField,
    tol: float = 1e-10,
    t_ladder: tuple = (0.04, 0.02, 0.01),
    op: DirichletOperator | None = None,
) -> VariationReport:
    """Assembles d2F and verifies the expansion F(Omega_t) = F + t dF
    + t^2 d2F + o(t^2) along the flow of xi.

    d2F = int_Omega [grad u . d2A grad v - grad du . grad dv
                     - d2f v - d2g u + d2Q]

    The remainder ladder advects the level set by the exact pullback
    Phi_{-t} and re-solves the state on each advected domain.  The measure
    term of F(Omega_t) is evaluated by change of variables,
    int_{Omega_t} Q = int_Omega Q(Phi_t) det DPhi_t, so its quadrature
    weights are frozen at t = 0 and the remainder is not polluted by
    cut-cell weights jumping as the interface sweeps the grid.
    """
    grid = dom.grid
    pts = grid.node_coords()
    detail = energy_F_detail(dom, data, tol=tol, op=op)
    u, v, op = detail.u, detail.v, detail.op
    F0 = detail.value

    du = linearized_state(u, dom, data.f, spec, order=1, tol=tol, op=op)
    dv = linearized_state(v, dom, data.g, spec, order=1, tol=tol, op=op)

    d2A = delta_A(spec, pts, order=2)
    gu = _domain_gradient(u, dom)
    gv = _domain_gradient(v, dom)
    Gu = np.stack([g.ravel() for g in gu], axis=-1)
    Gv = np.stack([g.ravel() for g in gv], axis=-1)
    shape = grid.node_shape
    term_A = np.einsum("ni,nij,nj->n", Gu, d2A, Gv).reshape(shape)
    d2f = delta_f(data.f, spec, pts, order=2).reshape(shape)
    d2g = delta_f(data.g, spec, pts, order=2).reshape(shape)
    d2Q = delta_f(data.Q, spec, pts, order=2, q_form=True).reshape(shape)

    cross = op.bilinear(du.values, dv.values)
    volume_part = integrate_domain_sharp(
        dom, term_A - d2f * v.values - d2g * u.values + d2Q
    )
    d2F = volume_part - cross

    dF = first_variation(dom, data, spec, tol=tol, op=op, states=(u, v))

    flow = FlowMap(spec)
    remainders = []
    for t in sorted(t_ladder, reverse=True):
        phi_t = flow.pullback_levelset(dom.phi, t)
        dom_t = DomainRep.from_phi(phi_t)
        detail_t = energy_F_detail(dom_t, data, tol=tol, need_adjoint=False)
        pde_t = detail_t.value - detail_t.measure_term
        fwd, Jt = flow.advance_with_jacobian(pts, t)
        qpull = data.Q.value(fwd) * np.abs(np.linalg.det(Jt))
        Mt = integrate_domain(dom, qpull.reshape(shape))
        Ft = pde_t + Mt
        remainders.append((t, abs(Ft - F0 - t * dF - t * t * d2F)))

    return VariationReport(
        F0=F0,
        deltaF=dF,
        delta2F=d2F,
        deltaU=du,
        deltaV=dv,
        taylor_remainders=remainders,
    )


# ---------------------------------------------------------------------------
# One-phase functional
# ---------------------------------------------------------------------------


def one_phase_variations(
    u: ScalarField,
    lam: float,
    spec: BumpField,
    phi: ScalarField | None = None,
    tol: float = 1e-10,
    harmonic_tol: float | None = None,
) -> tuple:
    """(dG, d2G) for the one-phase energy at a harmonic u >= 0.

    dG  = int_Omega [grad u . dA grad u + lam div xi]
    d2G = int_Omega [2 grad u . d2A grad u + lam ((div xi)^2
          + xi . grad div xi)] - 2 int |grad du|^2,
    with -Lap du = div(dA grad u) on Omega_u = {u > 0}.

    ``phi`` optionally supplies a signed level set for Omega_u (sharper
    than using u itself, which is flat outside the positivity set).
    Harmonicity is checked on interior nodes inside the support of xi:
    the scaled residual h |Lap_h u| / max|grad u| must stay below
    ``harmonic_tol`` (default 100*tol).
    """
    grid = u.grid
    h = grid.h
    pts = grid.node_coords()
    if np.any(u.values < -1e-12 * max(1.0, np.abs(u.values).max())):
        raise ValueError("one-phase input must be nonnegative")
    if phi is None:
        phi = u
    dom = DomainRep.from_phi(phi)
    mask = dom.inside_mask()

    # interior harmonicity check, restricted to where xi acts
    lap = np.zeros(grid.node_shape)
    safe = mask.copy()
    from .grid import _shifted

    for ax in range(grid.dim):
        up = _shifted(u.values, ax, +1)
        um = _shifted(u.values, ax, -1)
        lap += (up - 2 * u.values + um) / (h * h)
        safe &= _shifted(mask, ax, +1, fill=False) & _shifted(mask, ax, -1, fill=False)
    supp = (
        np.linalg.norm(pts - spec.center, axis=1).reshape(grid.node_shape)
        < spec.rho
    )
    safe &= supp
    gmax = max(np.abs(np.stack(masked_gradient(u.values, mask, h))).max(), 1e-300)
    if harmonic_tol is None:
        harmonic_tol = 100.0 * tol
    if np.any(safe):
        res = h * np.abs(lap[safe]).max() / gmax
        if res > harmonic_tol:
            raise NotHarmonic(
                f"scaled interior residual {res:.3e} exceeds {harmonic_tol:.3e}"
            )

    op = DirichletOperator(dom)
    xi, J, div, _, grad_div = _jacobian_terms(spec, pts)
    shape = grid.node_shape
    div_sq_adv = (div**2 + np.einsum("nk,nk->n", xi, grad_div)).reshape(shape)
    div = div.reshape(shape)

    gu = masked_gradient(u.values, mask, h)
    Gu = np.stack([g.ravel() for g in gu], axis=-1)
    dA = delta_A(spec, pts, order=1)
    d2A = delta_A(spec, pts, order=2)
    quad1 = np.einsum("ni,nij,nj->n", Gu, dA, Gu).reshape(shape)
    quad2 = np.einsum("ni,nij,nj->n", Gu, d2A, Gu).reshape(shape)

    dG = integrate_domain_sharp(dom, quad1 + lam * div, inside=mask)

    flux = _flux_from_matrix(dA, gu, grid)
    du = solve_divform(DivFormProblem(dom, flux, None, tol=tol), op=op)
    grad_du_sq = op.bilinear(du.values, du.values)

    d2G = integrate_domain_sharp(dom, 2.0 * quad2 + lam * div_sq_adv, inside=mask) - 2.0 * grad_du_sq
    return dG, d2G
