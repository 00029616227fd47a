"""Geodesics of the fractional-order Sobolev metric G^P on the space of metrics.

G^P_g(h, k) = flatten(k)^T W(g) flatten(P_g h) with P_g = (1 + Delta^g_sym)^p
on symmetric 2-tensor fields.  The geodesic equation is solved in coefficient
form with classical fixed-step RK4; the adjoint term (D_{(g,.)}P g_t)*(g_t)
is evaluated through the gradient of the quadratic form
q -> <dP(q) g_t, g_t>_W, computed analytically by discrete integration by
parts instead of a dense adjoint assembly.

Two variants of the equation are provided.  FULL keeps the term
-(D_{(g,g_t)}P) g_t; SPRAY omits it.  Energy conservation along integrated
trajectories singles out FULL as the consistent one, and it is the default.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

import scipy.linalg

from .connection import (
    LaplacianContext,
    basis_fields,
    field_to_vec,
    second_cov,
    second_cov_delta,
    symmetrize_h0,
    vec_to_field,
)
from .exceptions import LeftManifoldError, ParameterError, ShootingError
from .funcalc import SpectralFunction, eigensolve, power, spectral_apply
from .grid import Grid, flip, translate
from .perturbation import (
    d_gram,
    d_gram_blocks,
    d_laplacian_core,
    d_laplacian_q_gradient,
    d_laplacian_transpose_apply,
    direction_geometry,
    dk_kernel,
)
from .tensorfield import (
    VARIANCES,
    MetricField,
    SymTensorField,
    fiber_dim,
    h0_gram,
    pack_sym_covector,
    sym_dim,
)

_BUNDLE = "S2T*M"


@dataclass
class PConfig:
    """Inertia operator P_g = f(1 + Delta^g_sym) on S2T*M.

    Integer p uses exact matrix powers and linear solves; fractional p goes
    through the spectral calculus.  ``route`` only selects how f(A) itself is
    realized; the geodesic solve for P^{-1} is always spectral/direct (f has
    no zeros on [1, inf)).
    """

    p: float = 1.0
    route: str = "spectral"

    def __post_init__(self):
        if self.p < 0:
            raise ParameterError(f"Sobolev order p must be >= 0, got {self.p}")
        if self.route not in ("spectral", "contour"):
            raise ParameterError(f"unknown route {self.route!r}")

    @property
    def f(self) -> SpectralFunction:
        return power(self.p)

    @property
    def is_identity(self) -> bool:
        return self.p == 0.0

    @property
    def is_integer(self) -> bool:
        return float(self.p).is_integer()


@dataclass
class GeodesicState:
    g: MetricField
    h: SymTensorField


@dataclass
class GeodesicTrace:
    """Time series of an integrated geodesic with conservation diagnostics."""

    times: list = dc_field(default_factory=list)
    states: list = dc_field(default_factory=list)
    energies: list = dc_field(default_factory=list)
    min_eigs: list = dc_field(default_factory=list)
    velocity_norms: list = dc_field(default_factory=list)

    def append(self, t, g_coeffs, h_coeffs, energy, min_eig, vel_norm):
        if self.times and t <= self.times[-1]:
            raise ParameterError("trace times must be strictly increasing")
        self.times.append(float(t))
        self.states.append((g_coeffs.copy(), h_coeffs.copy()))
        self.energies.append(float(energy))
        self.min_eigs.append(float(min_eig))
        self.velocity_norms.append(float(vel_norm))

    @property
    def energy_drift(self) -> float:
        e0 = self.energies[0]
        if e0 == 0.0:
            return max(abs(e) for e in self.energies)
        return max(abs(e - e0) for e in self.energies) / abs(e0)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "energy", "min_eig", "velocity_norm"])
            for row in zip(self.times, self.energies, self.min_eigs,
                           self.velocity_norms):
                w.writerow([f"{x:.16e}" for x in row])

    def snapshots_to_json(self, path, grid: Grid, stride: int = 10) -> None:
        snaps = []
        for i in range(0, len(self.times), stride):
            gco, hco = self.states[i]
            snaps.append({
                "t": self.times[i],
                "g": SymTensorField(grid, gco).to_json_dict(),
                "h": SymTensorField(grid, hco).to_json_dict(),
            })
        Path(path).write_text(json.dumps(snaps))


class _StateGeometry:
    """Everything the right-hand side needs for a fixed metric g.

    The batched second covariant derivative of the coordinate basis is
    computed once and reused by the operator assembly, its directional
    derivative, and the quadratic-form gradients, which is what keeps a
    single RK4 stage cheap.
    """

    def __init__(self, g: MetricField, pconf: PConfig):
        self.g = g
        self.pconf = pconf
        self.grid = g.grid
        self.ginv = np.linalg.inv(g.coeffs)
        self.W = h0_gram(g, _BUNDLE)
        if pconf.is_identity:
            self.ctx = None
            self.A = None
            self.A_sym = None
            self.data = None
            return
        self.ctx = LaplacianContext.build(g)
        grid = self.grid
        var = VARIANCES[_BUNDLE]
        self.u_basis = basis_fields(grid, _BUNDLE)
        self._p1_basis = None
        self.ddu_basis = second_cov(grid, self.u_basis, var, self.ctx.gamma)
        lap = -np.einsum("...ij,...ijab->...ab", self.ctx.ginv, self.ddu_basis,
                         optimize=True)
        delta = field_to_vec(grid, _BUNDLE, lap).T
        n = grid.num_nodes * fiber_dim(_BUNDLE, grid.dim)
        self.A = np.eye(n) + delta
        self.A_sym = np.eye(n) + symmetrize_h0(delta, self.W)
        self._W_chol = scipy.linalg.cho_factor(self.W)
        self.data = None
        if not pconf.is_integer:
            from .connection import DenseOperator

            op = DenseOperator(self.A_sym, self.grid, _BUNDLE, _BUNDLE,
                               weight=self.W)
            self.data = eigensolve(op)

    def solve_W(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._W_chol, rhs)

    def p1_basis(self) -> np.ndarray:
        """First covariant derivative of the direction basis, cached."""
        if self._p1_basis is None:
            from .connection import cov_deriv

            self._p1_basis = cov_deriv(self.grid, self.u_basis,
                                       VARIANCES[_BUNDLE], self.ctx.gamma)
        return self._p1_basis

    def d_delta_matrix(self, q: np.ndarray) -> np.ndarray:
        """Dense derivative of the Laplacian in direction q, reusing the
        cached basis second derivatives."""
        dginv, dgamma = direction_geometry(self.ctx, q)
        grid = self.grid
        var = VARIANCES[_BUNDLE]
        t1 = np.einsum("...ij,...ijab->...ab", dginv, self.ddu_basis,
                       optimize=True)
        d_ddu = second_cov_delta(grid, self.u_basis, var, self.ctx.gamma, dgamma)
        t2 = np.einsum("...ij,...ijab->...ab", self.ctx.ginv, d_ddu,
                       optimize=True)
        return -field_to_vec(grid, _BUNDLE, t1 + t2).T

    def d_sym_matrix(self, q: np.ndarray) -> np.ndarray:
        """Dense derivative of A_sym in direction q (Laplacian and weight
        variations combined, as in perturbation.d_symmetrized)."""
        dD = self.d_delta_matrix(q)
        dW = d_gram(self.g, q, _BUNDLE)
        conj = 2.0 * self.A_sym - self.A
        out = 0.5 * (dD + self.solve_W(dD.T @ self.W))
        out += 0.5 * self.solve_W(self.A.T @ dW - dW @ conj)
        return out

    def d_sym_apply(self, q: np.ndarray, v: np.ndarray,
                    dgeo=None, dw_blocks=None) -> np.ndarray:
        """dA_sym(q) v without assembling the dense derivative: the stencil
        part applies forward, its W-transpose applies through the analytic
        adjoint, and the weight variation acts blockwise per node."""
        grid = self.grid
        if dgeo is None:
            dgeo = direction_geometry(self.ctx, q)
        dginv, dgamma = dgeo
        if dw_blocks is None:
            dw_blocks = d_gram_blocks(self.g, q, _BUNDLE)
        vf = vec_to_field(grid, _BUNDLE, v)
        dDv = field_to_vec(grid, _BUNDLE,
                           d_laplacian_core(self.ctx, dginv, dgamma, vf,
                                            _BUNDLE, ddu=None))
        G = d_laplacian_transpose_apply(self.ctx, dginv, dgamma,
                                        _halved_field(grid, self.W @ v),
                                        _BUNDLE)
        dDT_Wv = pack_sym_covector(G, grid.dim).reshape(-1)
        out = 0.5 * (dDv + self.solve_W(dDT_Wv))
        d = dw_blocks.shape[-1]
        conj_v = 2.0 * (self.A_sym @ v) - self.A @ v

        def apply_dw(w):
            return np.einsum("nab,nb->na", dw_blocks,
                             w.reshape(-1, d)).reshape(-1)

        out += 0.5 * self.solve_W(self.A.T @ apply_dw(v) - apply_dw(conj_v))
        return out

    def apply_P(self, x: np.ndarray) -> np.ndarray:
        if self.pconf.is_identity:
            return x
        if self.pconf.is_integer:
            out = x
            for _ in range(int(self.pconf.p)):
                out = self.A_sym @ out
            return out
        return spectral_apply(self.data, self.pconf.f).matrix @ x

    def solve_P(self, x: np.ndarray) -> np.ndarray:
        if self.pconf.is_identity:
            return x
        if self.pconf.is_integer:
            out = x
            for _ in range(int(self.pconf.p)):
                out = np.linalg.solve(self.A_sym, out)
            return out
        return spectral_apply(self.data, power(-self.pconf.p)).matrix @ x


def gp_metric(g: MetricField, h: SymTensorField, k: SymTensorField,
              pconf: PConfig) -> float:
    """G^P_g(h, k) = <P_g h, k> in the H^0(g) inner product."""
    geo = _StateGeometry(g, pconf)
    return _gp_from_geometry(geo, field_to_vec(g.grid, _BUNDLE, h.coeffs),
                             field_to_vec(g.grid, _BUNDLE, k.coeffs))


def _gp_from_geometry(geo: _StateGeometry, x: np.ndarray, y: np.ndarray) -> float:
    return float(y @ (geo.W @ geo.apply_P(x)))


# --- the quadratic-form gradient of the operator derivative -------------------

def _dgram_quadratic_grad(g: MetricField, ginv: np.ndarray, u: np.ndarray,
                          v: np.ndarray) -> np.ndarray:
    """Gradient with respect to the packed direction q of the pointwise form
    v^T dW(q) u for the S2T*M Gram weight, as a flat covector array.

    Writing U, V for the unpacked fields, the per-node dependence is
    d[Tr(g^{-1} U g^{-1} V) vol] with dg = q, whose gradient matrix is
    -g^{-1}Ug^{-1}Vg^{-1} - g^{-1}Vg^{-1}Ug^{-1} + (1/2)Tr(g^{-1}Ug^{-1}V)g^{-1},
    scaled by vol * h^m.
    """
    grid = g.grid
    U = vec_to_field(grid, _BUNDLE, u)
    V = vec_to_field(grid, _BUNDLE, v)
    giU = np.einsum("...ij,...jk->...ik", ginv, U)
    giV = np.einsum("...ij,...jk->...ik", ginv, V)
    tr = np.einsum("...ij,...ji->...", giU, giV)
    S = (
        -np.einsum("...ij,...jk,...kl->...il", giU, giV, ginv, optimize=True)
        - np.einsum("...ij,...jk,...kl->...il", giV, giU, ginv, optimize=True)
        + 0.5 * tr[..., None, None] * ginv
    )
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    vol = np.sqrt(np.linalg.det(g.coeffs))
    cell = grid.h ** grid.dim
    S = S * (vol * cell)[..., None, None]
    return pack_sym_covector(S, grid.dim).reshape(-1)


def _halved_field(grid: Grid, yvec: np.ndarray) -> np.ndarray:
    """Unpack a flat S2T*M covector and halve the off-diagonal entries, so
    that the packed dot product becomes the full-index Frobenius pairing."""
    Y = vec_to_field(grid, _BUNDLE, yvec).copy()
    m = grid.dim
    if m > 1:
        Y[..., ~np.eye(m, dtype=bool)] *= 0.5
    return Y


def _quadratic_grad_pair(geo: _StateGeometry, u: np.ndarray,
                         v: np.ndarray) -> np.ndarray:
    """Gradient of q -> v^T W dA_sym(q) u, using
    v^T W dA_sym(q) u = (1/2)[(Wv).(dD(q)u) + (Wu).(dD(q)v)
                             + (Av)^T dW(q) u - v^T dW(q) y_u]
    with y_u = (2 A_sym - A) u (the W-conjugated transpose of A applied to u).
    The two stencil dots are differentiated in q analytically, so the cost
    per pair is a handful of single-field applies.
    """
    W, A, A_sym = geo.W, geo.A, geo.A_sym
    grid = geo.grid
    m = grid.dim
    uf = vec_to_field(grid, _BUNDLE, u)
    Gu = d_laplacian_q_gradient(geo.ctx, uf, _halved_field(grid, W @ v),
                                _BUNDLE)
    if u is v:
        Gv = Gu
    else:
        vf = vec_to_field(grid, _BUNDLE, v)
        Gv = d_laplacian_q_gradient(geo.ctx, vf, _halved_field(grid, W @ u),
                                    _BUNDLE)
    y_u = (2.0 * (A_sym @ u) - A @ u)
    grad = 0.5 * (pack_sym_covector(Gu, m).reshape(-1)
                  + pack_sym_covector(Gv, m).reshape(-1))
    grad += 0.5 * _dgram_quadratic_grad(geo.g, geo.ginv, u, A @ v)
    grad -= 0.5 * _dgram_quadratic_grad(geo.g, geo.ginv, y_u, v)
    return grad


def _trace_grad(geo: _StateGeometry, Y: np.ndarray) -> np.ndarray:
    """Gradient of q -> Tr(Y dA_sym(q)) as a flat covector over packed
    directions.

    The stencil part batches the analytic q-gradient over the direction
    basis against the rows of the symmetrized trace weight; the Gram part
    decomposes the relevant diagonal blocks into rank-one pairs.
    """
    grid = geo.grid
    m = grid.dim
    d = sym_dim(m)
    N = grid.num_nodes
    W = geo.W
    Yeff = 0.5 * (Y + geo.solve_W(Y.T @ W))
    rows = vec_to_field(grid, _BUNDLE, Yeff).copy()
    if m > 1:
        rows[..., ~np.eye(m, dtype=bool)] *= 0.5
    G = d_laplacian_q_gradient(geo.ctx, basis_fields(grid, _BUNDLE), rows,
                               _BUNDLE, ddu=geo.ddu_basis, p1=geo.p1_basis())
    grad = pack_sym_covector(G.sum(axis=0), m).reshape(-1)

    M1 = Y @ geo.solve_W(geo.A.T)
    conj = 2.0 * geo.A_sym - geo.A
    M2 = conj @ geo.solve_W(Y.T).T
    Z = 0.5 * (M1 - M2)
    idx = np.arange(N)
    Zb = Z.reshape(N, d, N, d)[idx, :, idx, :]
    for a in range(d):
        u_vec = Zb[:, :, a].reshape(-1)
        v_vec = np.tile(np.eye(d)[a], N)
        grad += _dgram_quadratic_grad(geo.g, geo.ginv, u_vec, v_vec)
    return grad


def _dk_trace_matrix(geo: _StateGeometry, h_vec: np.ndarray,
                     k_vec: np.ndarray) -> np.ndarray:
    """Matrix Y with <dP(q) h, k>_W = Tr(Y dA_sym(q)) for fractional p,
    from the divided-difference kernel on the spectrum."""
    data = geo.data
    V = data.eigenvectors
    W = geo.W
    F = dk_kernel(data, geo.pconf.f)
    a = V.T @ (W @ k_vec)
    b = V.T @ (W @ h_vec)
    M = F * np.outer(a, b)
    return V @ M.T @ (V.T @ W)


def adjoint_pair_apply(geo: _StateGeometry, h_vec: np.ndarray,
                       k_vec: np.ndarray) -> np.ndarray:
    """(D_{(g,.)}P h)*(k) as a flat vector: W^{-1} grad_q <dP(q) h, k>_W.

    For integer p the product rule turns the gradient into a sum of
    W-bilinear pairs <dA_sym(q) A^{p-1-j} h, A^j k>_W with the W-self-adjoint
    powers moved onto the other slot; fractional p goes through the trace
    form of the divided-difference kernel.
    """
    if geo.pconf.is_identity:
        return np.zeros_like(h_vec)
    if geo.pconf.is_integer:
        k = int(geo.pconf.p)
        hp = [h_vec]
        kp = [k_vec]
        for _ in range(k - 1):
            hp.append(geo.A_sym @ hp[-1])
            kp.append(geo.A_sym @ kp[-1])
        grad = np.zeros_like(h_vec)
        for j in range(k):
            grad += _quadratic_grad_pair(geo, hp[k - 1 - j], kp[j])
        return geo.solve_W(grad)
    Y = _dk_trace_matrix(geo, h_vec, k_vec)
    return geo.solve_W(_trace_grad(geo, Y))


def _adjoint_term(geo: _StateGeometry, x: np.ndarray) -> np.ndarray:
    """(D_{(g,.)}P g_t)*(g_t): the quadratic case of adjoint_pair_apply."""
    return adjoint_pair_apply(geo, x, x)


def _dP_applied(geo: _StateGeometry, q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(D_{(g,q)}P) x as a flat vector for a single direction q."""
    if geo.pconf.is_identity:
        return np.zeros_like(x)
    from .perturbation import d_fractional_spectral

    if geo.pconf.is_integer:
        k = int(geo.pconf.p)
        dgeo = direction_geometry(geo.ctx, q)
        dw_blocks = d_gram_blocks(geo.g, q, _BUNDLE)
        out = np.zeros_like(x)
        for j in range(k):
            v = x
            for _ in range(k - 1 - j):
                v = geo.A_sym @ v
            v = geo.d_sym_apply(q, v, dgeo=dgeo, dw_blocks=dw_blocks)
            for _ in range(j):
                v = geo.A_sym @ v
            out += v
        return out
    B = geo.d_sym_matrix(q)
    return d_fractional_spectral(geo.data, B, geo.pconf.f) @ x


# --- the geodesic right-hand side ---------------------------------------------

def geodesic_rhs(g: MetricField, h_coeffs: np.ndarray, pconf: PConfig,
                 variant: str = "FULL",
                 geo: _StateGeometry | None = None) -> np.ndarray:
    """Acceleration g_tt of the G^P geodesic equation, as a coefficient array.

    FULL keeps all six terms; SPRAY drops -(D_{(g,g_t)}P) g_t.
    """
    if variant not in ("FULL", "SPRAY"):
        raise ParameterError(f"unknown variant {variant!r}")
    geo = geo or _StateGeometry(g, pconf)
    grid = g.grid
    x = field_to_vec(grid, _BUNDLE, h_coeffs)
    Px = geo.apply_P(x)
    Ph = vec_to_field(grid, _BUNDLE, Px)
    ginv = geo.ginv
    h = h_coeffs

    tr_mixed = np.einsum("...ij,...jk,...kl,...li->...", ginv, Ph, ginv, h,
                         optimize=True)
    tr_h = np.einsum("...ij,...ji->...", ginv, h)
    hgPh = np.einsum("...ij,...jk,...kl->...il", h, ginv, Ph, optimize=True)
    rhs = (
        0.25 * tr_mixed[..., None, None] * g.coeffs
        + 0.5 * (hgPh + np.swapaxes(hgPh, -1, -2))
        - 0.5 * tr_h[..., None, None] * Ph
    )
    vec = field_to_vec(grid, _BUNDLE, rhs)
    vec += 0.5 * _adjoint_term(geo, x)
    if variant == "FULL" and not pconf.is_identity:
        vec -= _dP_applied(geo, h_coeffs, x)
    acc = geo.solve_P(vec)
    return vec_to_field(grid, _BUNDLE, acc)


def rhs_identity_oracle(g_coeffs: np.ndarray, h_coeffs: np.ndarray) -> np.ndarray:
    """Node-decoupled acceleration for P = identity (p = 0):
    (1/4) g Tr(g^{-1}hg^{-1}h) + h g^{-1} h - (1/2) Tr(g^{-1}h) h."""
    ginv = np.linalg.inv(g_coeffs)
    tr2 = np.einsum("...ij,...jk,...kl,...li->...", ginv, h_coeffs, ginv,
                    h_coeffs, optimize=True)
    tr1 = np.einsum("...ij,...ji->...", ginv, h_coeffs)
    hgh = np.einsum("...ij,...jk,...kl->...il", h_coeffs, ginv, h_coeffs,
                    optimize=True)
    return (0.25 * tr2[..., None, None] * g_coeffs + hgh
            - 0.5 * tr1[..., None, None] * h_coeffs)


# --- time integration ---------------------------------------------------------

def integrate(state: GeodesicState, pconf: PConfig, t_end: float, dt: float,
              variant: str = "FULL", record_stride: int = 1,
              energy_guard: float = np.inf,
              spd_floor: float | None = None) -> GeodesicTrace:
    """Classical fixed-step RK4 on (g, g_t), aborting if the metric path
    leaves the positive-definite cone or the energy drifts past the guard."""
    if dt <= 0.0 or t_end <= 0.0:
        raise ParameterError("t_end and dt must be positive")
    grid = state.g.grid
    floor = spd_floor if spd_floor is not None else state.g.spd_floor
    gco = state.g.coeffs.copy()
    hco = state.h.coeffs.copy()
    n_steps = int(round(t_end / dt))
    trace = GeodesicTrace()

    def make_metric(co, t):
        eigs = np.linalg.eigvalsh(co)
        mins = eigs[..., 0]
        if mins.min() < floor:
            node = np.unravel_index(int(np.argmin(mins)), grid.shape)
            raise LeftManifoldError(
                f"metric left the positive cone at t = {t:.6g}, node {node} "
                f"(min eigenvalue {mins.min():.3e})", time=t, node=node)
        return MetricField(grid, co, spd_floor=floor)

    def rhs(gc, hc, t):
        gm = make_metric(gc, t)
        geo = _StateGeometry(gm, pconf)
        return hc, geodesic_rhs(gm, hc, pconf, variant, geo=geo), geo

    g0m = make_metric(gco, 0.0)
    geo0 = _StateGeometry(g0m, pconf)
    x0 = field_to_vec(grid, _BUNDLE, hco)
    e_ref = _gp_from_geometry(geo0, x0, x0)

    def record(t, gc, hc, geo):
        x = field_to_vec(grid, _BUNDLE, hc)
        e = _gp_from_geometry(geo, x, x)
        min_eig = float(np.linalg.eigvalsh(gc)[..., 0].min())
        trace.append(t, gc, hc, e, min_eig, float(np.linalg.norm(x)))
        if e_ref != 0.0 and abs(e - e_ref) / abs(e_ref) > energy_guard:
            raise LeftManifoldError(
                f"energy drift {abs(e - e_ref) / abs(e_ref):.3e} exceeded the "
                f"guard at t = {t:.6g}", time=t)

    trace.append(0.0, gco, hco, e_ref,
                 float(np.linalg.eigvalsh(gco)[..., 0].min()),
                 float(np.linalg.norm(x0)))
    for step in range(n_steps):
        t = step * dt
        k1g, k1h, _ = rhs(gco, hco, t)
        k2g, k2h, _ = rhs(gco + 0.5 * dt * k1g, hco + 0.5 * dt * k1h, t + 0.5 * dt)
        k3g, k3h, _ = rhs(gco + 0.5 * dt * k2g, hco + 0.5 * dt * k2h, t + 0.5 * dt)
        k4g, k4h, _ = rhs(gco + dt * k3g, hco + dt * k3h, t + dt)
        gco = gco + (dt / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        hco = hco + (dt / 6.0) * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
        t_new = (step + 1) * dt
        if (step + 1) % record_stride == 0 or step + 1 == n_steps:
            gm = make_metric(gco, t_new)
            geo = _StateGeometry(gm, pconf)
            record(t_new, gco, hco, geo)
    return trace


def exp_map(g0: MetricField, h0: SymTensorField, pconf: PConfig,
            dt: float = 0.02, variant: str = "FULL") -> MetricField:
    """Time-1 endpoint of the geodesic with initial velocity h0."""
    if np.allclose(h0.coeffs, 0.0):
        return MetricField(g0.grid, g0.coeffs.copy(), spd_floor=g0.spd_floor)
    trace = integrate(GeodesicState(g0, h0), pconf, 1.0, dt, variant,
                      record_stride=max(1, int(round(1.0 / dt))))
    return MetricField(g0.grid, trace.states[-1][0], spd_floor=g0.spd_floor)


def log_map(g0: MetricField, g1: MetricField, pconf: PConfig,
            dt: float = 0.02, tol: float = 1e-8, max_iter: int = 80,
            variant: str = "FULL", history: list | None = None) -> SymTensorField:
    """Initial velocity h with exp(g0, h) = g1, by shooting.

    The endpoint map is a near-identity perturbation of h -> g0 + h for small
    velocities, so damped fixed-point corrections h += damping*(g1 - exp(g0,h))
    converge linearly in the contraction regime; the damping halves on
    residual increase (a secant-flavored safeguard against overshoot).
    """
    grid = g0.grid
    target = g1.coeffs
    h = target - g0.coeffs
    scale = max(float(np.abs(target).max()), 1e-300)
    damping = 1.0
    prev_res = np.inf
    for it in range(max_iter):
        end = exp_map(g0, SymTensorField(grid, h), pconf, dt=dt, variant=variant)
        resid = target - end.coeffs
        res = float(np.abs(resid).max()) / scale
        if history is not None:
            history.append(res)
        if res < tol:
            return SymTensorField(grid, h)
        if res > prev_res:
            damping = max(0.125, 0.5 * damping)
        prev_res = res
        h = h + damping * resid
    raise ShootingError(
        f"shooting failed to reach tolerance {tol:.1e} after {max_iter} "
        f"iterations (residual {prev_res:.3e}); target may lie outside the "
        f"locally well-posed neighborhood")


# --- equivariance under grid-compatible diffeomorphisms ------------------------

def pullback_sym(grid: Grid, coeffs: np.ndarray, diffeo) -> np.ndarray:
    """Pull back a symmetric 2-tensor coefficient array along a grid
    translation ('translate', shifts) or axis reflection ('flip', axis).

    Covariant indices pick up a sign per reflected axis: component (i, j)
    flips sign once for each index equal to the reflected axis.
    """
    kind = diffeo[0]
    if kind == "translate":
        return translate(grid, coeffs, diffeo[1], fiber_ndim=2)
    if kind == "flip":
        axis = int(diffeo[1])
        m = grid.dim
        signs = np.ones((m, m))
        for i in range(m):
            for j in range(m):
                signs[i, j] = (-1.0) ** ((i == axis) + (j == axis))
        return flip(grid, coeffs, axis, fiber_ndim=2, covariant_signs=signs)
    raise ParameterError(f"unsupported diffeomorphism tag {kind!r}")


def equivariance_check(g: MetricField, h: SymTensorField, pconf: PConfig,
                       diffeo) -> float:
    """Residual of P commuting with the pullback:
    ||P_{phi*g}(phi*h) - phi*(P_g h)|| / ||P_g h||."""
    grid = g.grid
    geo = _StateGeometry(g, pconf)
    Ph = geo.apply_P(field_to_vec(grid, _BUNDLE, h.coeffs))
    Ph_pulled = pullback_sym(grid, vec_to_field(grid, _BUNDLE, Ph), diffeo)
    g_p = MetricField(grid, pullback_sym(grid, g.coeffs, diffeo),
                      spd_floor=g.spd_floor)
    h_p = pullback_sym(grid, h.coeffs, diffeo)
    geo_p = _StateGeometry(g_p, pconf)
    Ph_p = geo_p.apply_P(field_to_vec(grid, _BUNDLE, h_p))
    num = np.linalg.norm(Ph_p - field_to_vec(grid, _BUNDLE, Ph_pulled))
    return float(num / max(np.linalg.norm(Ph), 1e-300))
