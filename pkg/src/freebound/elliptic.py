"""Dirichlet solvers on level-set domains.

Solves -Lap u = f (and the div-form variant -Lap w = div F + s) on
Omega = {phi > 0} with Dirichlet data prescribed on the zero level set.
The discretization is the 5/7-point Laplacian with Shortley-Weller cut
legs: where a grid edge crosses the interface, the leg is shortened to the
crossing (located by linear interpolation of phi) and the Dirichlet value
is interpolated there.  The system is assembled in flux form, so it is
symmetric positive definite and a preconditioned conjugate gradient
applies.

Crossings essentially on top of a node snap the interface onto the node,
which then carries the Dirichlet value directly; this keeps the cut-leg
lengths strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .errors import EmptyDomain, NoConvergence
from .grid import DomainRep, Grid, ScalarField, _shifted

__all__ = [
    "DirichletProblem",
    "DivFormProblem",
    "DirichletOperator",
    "solve_dirichlet",
    "solve_divform",
    "residual_check",
]

# Crossings closer than this (in units of h) snap to the node, and cut legs
# are never shorter than this.  A large threshold (e.g. 0.05) would improve
# the conditioning of the short-leg rows, but every snap event injects an
# O(h^3) jump into the energy as the interface sweeps the grid -- enough to
# drown the t^3 Taylor remainders the shape calculus measures.  The
# Jacobi-scaled CG handles short legs without trouble, so the threshold only
# guards against division blow-up at exact node hits.
_SNAP = 1e-6
_AMG_THRESHOLD = 20000  # unknown count above which multigrid acceleration kicks in

try:  # pragma: no cover - exercised implicitly on large grids
    import pyamg

    _HAVE_PYAMG = True
except Exception:  # pragma: no cover
    _HAVE_PYAMG = False


@dataclass(frozen=True)
class DirichletProblem:
    dom: DomainRep
    rhs: ScalarField
    boundary_data: ScalarField | None = None
    tol: float = 1e-10
    max_iter: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class DivFormProblem:
    dom: DomainRep
    flux: tuple  # one node array per axis
    source: ScalarField | None = None
    tol: float = 1e-10
    max_iter: int | None = None


class DirichletOperator:
    """Assembled Shortley-Weller operator for a fixed domain.

    Kept separate from the one-shot ``solve_dirichlet`` so callers that
    need several solves or the discrete bilinear form on the same domain
    (energies, linearized states) can reuse the assembly.
    """

    def __init__(self, dom: DomainRep, boundary_data: ScalarField | None = None):
        grid = dom.grid
        phi = dom.phi.values
        d = grid.dim
        h = grid.h
        shape = grid.node_shape

        bd = (
            boundary_data.values
            if boundary_data is not None
            else np.zeros(shape)
        )

        inside = phi > 0.0
        face = np.zeros(shape, dtype=bool)
        for ax in range(d):
            sl0 = [slice(None)] * d
            sl1 = [slice(None)] * d
            sl0[ax] = 0
            sl1[ax] = -1
            face[tuple(sl0)] = True
            face[tuple(sl1)] = True

        # snap: an inside node whose interface crossing on some edge is
        # closer than _SNAP*h becomes a Dirichlet node itself
        snapped = np.zeros(shape, dtype=bool)
        for ax in range(d):
            for sgn in (+1, -1):
                phin = _shifted(phi, ax, sgn, fill=-1.0)
                cut = inside & (phin <= 0.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(cut, phi / (phi - phin), 1.0)
                snapped |= cut & (theta < _SNAP)

        diri = (snapped | face) & inside
        active = inside & ~diri
        nact = int(active.sum())
        if nact == 0:
            raise EmptyDomain("no active nodes inside the level set")

        index = -np.ones(shape, dtype=np.int64)
        index[active] = np.arange(nact)

        # per-axis leg lengths theta (units of h) and boundary values at
        # the far end of cut legs
        rows, cols, vals = [], [], []
        diag = np.zeros(nact)
        bc_accum = np.zeros(nact)
        leg_sum = np.ones((d, nact)) * 0.0  # (theta+ + theta-) per axis

        ai = index[active]  # 0..nact-1 in C order
        edge_coef = h ** (d - 2)
        flat = np.arange(int(np.prod(shape))).reshape(shape)
        legs = []

        for ax in range(d):
            for sgn in (+1, -1):
                phin = _shifted(phi, ax, sgn, fill=-1.0)
                nbr_idx = _shifted(index, ax, sgn, fill=-1)
                nbr_diri = _shifted(diri, ax, sgn, fill=False)
                bdn = _shifted(bd, ax, sgn)

                phin_a = phin[active]
                nbr_a = nbr_idx[active]
                diri_a = nbr_diri[active]
                bdn_a = bdn[active]
                phi_a = phi[active]
                bd_a = bd[active]

                is_act = nbr_a >= 0
                is_cut = (~is_act) & (~diri_a)
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(
                        is_cut, phi_a / (phi_a - phin_a), 1.0
                    )
                theta = np.clip(theta, _SNAP, 1.0)

                a_e = edge_coef / theta
                diag += a_e
                leg_sum[ax] += theta

                rows.append(ai[is_act])
                cols.append(nbr_a[is_act])
                vals.append(-a_e[is_act])

                # Dirichlet contributions: full leg to a Dirichlet node,
                # shortened leg to the interpolated crossing value
                gval = np.where(
                    diri_a, bdn_a, (1.0 - theta) * bd_a + theta * bdn_a
                )
                contrib = np.where(is_act, 0.0, a_e * gval)
                bc_accum += contrib

                nbr_flat = _shifted(flat, ax, sgn, fill=-1)[active]
                legs.append((a_e, theta, is_act, diri_a, nbr_flat))

        rows.append(ai)
        cols.append(ai)
        vals.append(diag)
        A = sp.csr_matrix(
            (
                np.concatenate(vals),
                (np.concatenate(rows), np.concatenate(cols)),
            ),
            shape=(nact, nact),
        )

        # finite-volume node weights: product over axes of the half-leg sums
        vol = np.ones(nact)
        for ax in range(d):
            vol *= 0.5 * leg_sum[ax]
        vol *= h**d

        self.grid = grid
        self.dom = dom
        self.A = A
        self.active = active
        self.diri = diri
        self.index = index
        self.bc = bc_accum
        self.node_volume = vol
        self.bd = bd
        self._diag = A.diagonal()
        self._amg = None
        self._legs = legs
        self._flat_act = flat[active]

    # -- right-hand sides ------------------------------------------------

    def rhs_from_density(self, f_values: NDArray) -> NDArray:
        return np.asarray(f_values)[self.active] * self.node_volume + self.bc

    def rhs_from_flux(self, flux, source_values: NDArray | None = None) -> NDArray:
        """Centered edge-flux divergence of F, restricted to the domain.

        Edge values average the two node values when both nodes are in the
        domain and fall back to the interior value across cut edges, so the
        divergence never reads the (meaningless) flux outside Omega.
        """
        grid = self.grid
        d = grid.dim
        h = grid.h
        ok = self.active | self.diri
        div = np.zeros(grid.node_shape)
        for ax in range(d):
            F = np.where(ok, np.asarray(flux[ax]), 0.0)
            okp = _shifted(ok, ax, +1, fill=False)
            okm = _shifted(ok, ax, -1, fill=False)
            Fp = _shifted(F, ax, +1)
            Fm = _shifted(F, ax, -1)
            fplus = np.where(okp, 0.5 * (F + Fp), F)
            fminus = np.where(okm, 0.5 * (F + Fm), F)
            div += (fplus - fminus) / h
        b = div[self.active] * self.node_volume + self.bc
        if source_values is not None:
            b = b + np.asarray(source_values)[self.active] * self.node_volume
        return b

    # -- linear algebra --------------------------------------------------

    def bilinear(self, u_values: NDArray, v_values: NDArray) -> float:
        """Discrete Dirichlet form a(u, v) = u^T A v over active nodes.

        With zero boundary data this is the grid version of the integral of
        grad u . grad v over Omega, and it is exactly symmetric.
        """
        ua = np.asarray(u_values)[self.active]
        va = np.asarray(v_values)[self.active]
        return float(ua @ (self.A @ va))

    def dirichlet_form(
        self,
        u_values: NDArray,
        v_values: NDArray,
        bd_u: NDArray | None = None,
        bd_v: NDArray | None = None,
    ) -> float:
        """Leg-resolved Dirichlet form int_Omega grad u . grad v.

        Unlike ``bilinear`` this accounts for nonzero Dirichlet data (per
        field, so u and v may carry different data): each cut or Dirichlet
        leg contributes a_e (u_i - u_end)(v_i - v_end) with the endpoint
        value read from the supplied data, and each interior edge is
        counted once.
        """
        uf = np.asarray(u_values, dtype=float).ravel()
        vf = np.asarray(v_values, dtype=float).ravel()
        bu = uf if bd_u is None else np.asarray(bd_u, dtype=float).ravel()
        bv = vf if bd_v is None else np.asarray(bd_v, dtype=float).ravel()
        fa = self._flat_act
        ua, va = uf[fa], vf[fa]
        bua, bva = bu[fa], bv[fa]
        total = 0.0
        for a_e, theta, is_act, diri_a, nbr_flat in self._legs:
            safe = np.maximum(nbr_flat, 0)
            valid = nbr_flat >= 0
            un = np.where(valid, uf[safe], 0.0)
            vn = np.where(valid, vf[safe], 0.0)
            bun = np.where(valid, bu[safe], 0.0)
            bvn = np.where(valid, bv[safe], 0.0)
            u_end = np.where(
                is_act, un, np.where(diri_a, bun, (1.0 - theta) * bua + theta * bun)
            )
            v_end = np.where(
                is_act, vn, np.where(diri_a, bvn, (1.0 - theta) * bva + theta * bvn)
            )
            w = np.where(is_act, 0.5, 1.0)
            total += float(np.sum(w * a_e * (ua - u_end) * (va - v_end)))
        return total

    def weighted_integral(self, a_values: NDArray, b_values: NDArray) -> float:
        """Sum of a*b over active nodes with finite-volume weights."""
        aa = np.asarray(a_values)[self.active]
        bb = np.asarray(b_values)[self.active]
        return float((aa * bb) @ self.node_volume)

    def residual(self, u_values: NDArray, b: NDArray) -> float:
        ua = np.asarray(u_values)[self.active]
        r = self.A @ ua - b
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))

    def solve(
        self,
        b: NDArray,
        tol: float = 1e-10,
        max_iter: int | None = None,
        x0: NDArray | None = None,
    ) -> NDArray:
        """Solve to relative residual ``tol``; returns the full node array
        (Dirichlet values on snapped/face nodes, zero outside Omega)."""
        n = self.A.shape[0]
        if max_iter is None:
            max_iter = 50 * int(max(self.grid.n))
        guess = None
        if x0 is not None:
            guess = np.asarray(x0)[self.active]

        nb = np.linalg.norm(b)
        if nb == 0.0:
            xa = np.zeros(n)
        else:
            # iterate on the normalized system so extreme data magnitudes
            # (including subnormals) cannot break the recurrences
            bs = b / nb
            gs = None if guess is None else guess / nb
            if _HAVE_PYAMG and n > _AMG_THRESHOLD:
                xa = nb * self._solve_amg(bs, tol, max_iter, gs)
            else:
                xa = nb * self._solve_pcg(bs, tol, max_iter, gs)

        out = np.zeros(self.grid.node_shape)
        out[self.active] = xa
        out[self.diri] = self.bd[self.diri]
        return out

    def _solve_pcg(self, b, tol, max_iter, x0):
        """Conjugate gradient with Jacobi (diagonal) preconditioning."""
        A = self.A
        dinv = 1.0 / self._diag
        x = np.zeros_like(b) if x0 is None else x0.copy()
        r = b - A @ x
        nb = np.linalg.norm(b)
        z = dinv * r
        p = z.copy()
        rz = r @ z
        for it in range(max_iter):
            if np.linalg.norm(r) <= tol * nb:
                return x
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        res = np.linalg.norm(b - A @ x) / nb
        if res <= tol:
            return x
        raise NoConvergence(res, max_iter)

    def _solve_amg(self, b, tol, max_iter, x0):
        if self._amg is None:
            self._amg = pyamg.ruge_stuben_solver(self.A)
        x = self._amg.solve(
            b, x0=x0, tol=tol, maxiter=200, accel="cg"
        )
        nb = np.linalg.norm(b)
        res = np.linalg.norm(b - self.A @ x) / nb
        if res > tol:
            # fall back to plain PCG from the AMG iterate
            try:
                x = self._solve_pcg(b, tol, max_iter, x)
            except NoConvergence:
                raise NoConvergence(res, max_iter)
        return x


def solve_dirichlet(
    p: DirichletProblem,
    op: DirichletOperator | None = None,
    x0: ScalarField | None = None,
) -> ScalarField:
    """Solve -Lap u = rhs on {phi > 0} with the given Dirichlet data."""
    if p.dom.is_empty():
        raise EmptyDomain("level set is nonpositive everywhere")
    if op is None:
        op = DirichletOperator(p.dom, p.boundary_data)
    b = op.rhs_from_density(p.rhs.values)
    u = op.solve(
        b, tol=p.tol, max_iter=p.max_iter, x0=None if x0 is None else x0.values
    )
    return ScalarField(p.dom.grid, u)


def solve_divform(
    p: DivFormProblem, op: DirichletOperator | None = None
) -> ScalarField:
    """Solve -Lap w = div F + s on {phi > 0}, w = 0 on the interface."""
    if p.dom.is_empty():
        raise EmptyDomain("level set is nonpositive everywhere")
    if op is None:
        op = DirichletOperator(p.dom, None)
    src = None if p.source is None else p.source.values
    b = op.rhs_from_flux(p.flux, src)
    w = op.solve(b, tol=p.tol, max_iter=p.max_iter)
    return ScalarField(p.dom.grid, w)


def residual_check(u: ScalarField, p: DirichletProblem) -> float:
    """Relative discrete residual of a candidate solution."""
    op = DirichletOperator(p.dom, p.boundary_data)
    b = op.rhs_from_density(p.rhs.values)
    return op.residual(u.values, b)
