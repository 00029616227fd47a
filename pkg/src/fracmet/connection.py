"""Christoffel symbols, covariant derivatives, and the Bochner Laplacian.

All bundle fields use the trailing-axes layout of :mod:`fracmet.grid`; the
covariant-derivative machinery is generic over variance tuples ('u'/'d' per
fiber slot), which covers trivial, TM, T*M, S2T*M and the tensor products
with T*M needed for the second derivative.

Sign convention: Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
with a plus sign on the contravariant correction in nabla.  The convention is
pinned by the discrete metric-compatibility test nabla g = O(h^order), not by
any sign table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .exceptions import ShapeError
from .grid import Grid, partial, second_partial
from .tensorfield import (
    MetricField,
    VARIANCES,
    check_bundle,
    fiber_dim,
    h0_gram,
    inverse_metric_coeffs,
    pack_sym,
    unpack_sym,
)

_FIBER_LETTERS = "abc"


# --- Christoffel symbols ------------------------------------------------------

def metric_partials(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Stack of coordinate partials: out[..., p, i, j] = d_p g_ij."""
    return np.stack(
        [partial(grid, coeffs, p, fiber_ndim=2) for p in range(grid.dim)],
        axis=-3,
    )


def _gamma_from_pieces(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # S[..., i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    s = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, s)


def christoffel(g: MetricField) -> np.ndarray:
    """Christoffel symbols Gamma[..., k, i, j] of the metric field."""
    ginv = inverse_metric_coeffs(g.coeffs, g.spd_floor)
    dg = metric_partials(g.grid, g.coeffs)
    return _gamma_from_pieces(ginv, dg)


def d_christoffel(grid: Grid, ginv: np.ndarray, dginv: np.ndarray,
                  dg: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Directional derivative of the Christoffel symbols.

    ``dginv`` is -g^{-1} q g^{-1}, ``dg`` the stacked partials of g, and
    ``q`` the (possibly batched) direction in S^2 T*M.
    """
    dq = metric_partials(grid, q)
    return _gamma_from_pieces(dginv, dg) + _gamma_from_pieces(ginv, dq)


# --- generic covariant derivative --------------------------------------------

def gamma_correction(values: np.ndarray, variance: tuple, gamma: np.ndarray):
    """Connection correction terms of nabla (no coordinate-derivative term).

    Returns an array of shape ``batch + grid + (m,) + fiber`` or None when
    the variance is empty (trivial bundle: nabla = d).
    """
    k = len(variance)
    if k == 0:
        return None
    letters = list(_FIBER_LETTERS[:k])
    out_str = "...i" + "".join(letters)
    total = None
    for s, var in enumerate(variance):
        u_letters = letters.copy()
        u_letters[s] = "l"
        if var == "u":
            g_str = f"...{letters[s]}il"
            sign = 1.0
        else:
            g_str = f"...li{letters[s]}"
            sign = -1.0
        term = np.einsum(f"{g_str},...{''.join(u_letters)}->{out_str}",
                         gamma, values, optimize=True)
        total = sign * term if total is None else total + sign * term
    return total


def cov_deriv(grid: Grid, values: np.ndarray, variance: tuple,
              gamma: np.ndarray) -> np.ndarray:
    """Covariant derivative; output variance ('d',) + variance with the new
    covariant index as the first fiber axis."""
    k = len(variance)
    parts = np.stack(
        [partial(grid, values, i, fiber_ndim=k) for i in range(grid.dim)],
        axis=-(k + 1),
    )
    corr = gamma_correction(values, variance, gamma)
    return parts if corr is None else parts + corr


def second_cov(grid: Grid, values: np.ndarray, variance: tuple,
               gamma: np.ndarray) -> np.ndarray:
    """(nabla nabla u)_{ij,A}, shape batch + grid + (m, m) + fiber.

    The pure second-derivative part uses compact same-axis stencils (see
    grid.second_partial); the correction terms use central first differences.
    """
    k = len(variance)
    m = grid.dim
    sp = np.stack(
        [np.stack([second_partial(grid, values, i, j, fiber_ndim=k)
                   for j in range(m)], axis=-(k + 1))
         for i in range(m)],
        axis=-(k + 2),
    )
    cin = gamma_correction(values, variance, gamma)
    out = sp
    if cin is not None:
        d_cin = np.stack(
            [partial(grid, cin, i, fiber_ndim=k + 1) for i in range(m)],
            axis=-(k + 2),
        )
        out = out + d_cin
    p1 = cov_deriv(grid, values, variance, gamma)
    outer = gamma_correction(p1, ("d",) + variance, gamma)
    return out + outer


def second_cov_delta(grid: Grid, values: np.ndarray, variance: tuple,
                     gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """Directional derivative of second_cov with respect to the metric,
    expressed through the Christoffel variation ``dgamma``.

    The coordinate-derivative part carries no metric dependence, so
    D(nabla nabla u) = d(C(u; dGamma)) + C(nabla u; dGamma) + C(C(u; dGamma); Gamma).
    """
    k = len(variance)
    m = grid.dim
    ext = ("d",) + variance
    cin_d = gamma_correction(values, variance, dgamma)
    p1 = cov_deriv(grid, values, variance, gamma)
    out = gamma_correction(p1, ext, dgamma)
    if cin_d is not None:
        d_cin = np.stack(
            [partial(grid, cin_d, i, fiber_ndim=k + 1) for i in range(m)],
            axis=-(k + 2),
        )
        out = out + d_cin + gamma_correction(cin_d, ext, gamma)
    return out


def gamma_correction_adjoint(Y: np.ndarray, variance: tuple,
                             gamma: np.ndarray):
    """Gradient with respect to u of the full pairing <Y, C(u; gamma)>,
    summing over all array indices; Y has the shape of a correction output
    (batch + grid + (m,) + fiber)."""
    k = len(variance)
    if k == 0:
        return None
    letters = list(_FIBER_LETTERS[:k])
    y_str = "...i" + "".join(letters)
    total = None
    for s, var in enumerate(variance):
        u_letters = letters.copy()
        u_letters[s] = "l"
        if var == "u":
            g_str = f"...{letters[s]}il"
            sign = 1.0
        else:
            g_str = f"...li{letters[s]}"
            sign = -1.0
        term = np.einsum(f"{g_str},{y_str}->...{''.join(u_letters)}",
                         gamma, Y, optimize=True)
        total = sign * term if total is None else total + sign * term
    return total


def gamma_coefficient(values: np.ndarray, variance: tuple,
                      Y: np.ndarray) -> np.ndarray:
    """Gradient with respect to gamma of <Y, C(values; gamma)> (full pairing),
    in the Christoffel layout [..., k, i, j]."""
    k = len(variance)
    letters = list(_FIBER_LETTERS[:k])
    y_str = "...i" + "".join(letters)
    total = None
    for s, var in enumerate(variance):
        u_letters = letters.copy()
        u_letters[s] = "l"
        if var == "u":
            out_str = f"...{letters[s]}il"
            sign = 1.0
        else:
            out_str = f"...li{letters[s]}"
            sign = -1.0
        term = np.einsum(f"{y_str},...{''.join(u_letters)}->{out_str}",
                         Y, values, optimize=True)
        total = sign * term if total is None else total + sign * term
    return total


def cov_deriv_adjoint(grid: Grid, Y: np.ndarray, variance: tuple,
                      gamma: np.ndarray) -> np.ndarray:
    """Gradient with respect to u of <Y, cov_deriv(u)> (full pairing): the
    coordinate part transposes to minus the divergence (central differences
    are antisymmetric on the periodic grid)."""
    k = len(variance)
    m = grid.dim
    out = None
    for i in range(m):
        term = -partial(grid, Y[(Ellipsis, i) + (slice(None),) * k], i,
                        fiber_ndim=k)
        out = term if out is None else out + term
    corr = gamma_correction_adjoint(Y, variance, gamma)
    return out if corr is None else out + corr


def second_cov_adjoint(grid: Grid, Y: np.ndarray, variance: tuple,
                       gamma: np.ndarray) -> np.ndarray:
    """Gradient with respect to u of <Y, second_cov(u)> (full pairing).

    The stacked second-partial block is self-adjoint (compact same-axis
    stencils are symmetric, mixed central differences commute); the two
    correction blocks transpose term by term.
    """
    k = len(variance)
    m = grid.dim
    out = None
    for i in range(m):
        for j in range(m):
            term = second_partial(
                grid, Y[(Ellipsis, i, j) + (slice(None),) * k], i, j,
                fiber_ndim=k)
            out = term if out is None else out + term
    if gamma is not None:
        z1 = None
        for i in range(m):
            term = -partial(grid, Y[(Ellipsis, i) + (slice(None),) * (k + 1)],
                            i, fiber_ndim=k + 1)
            z1 = term if z1 is None else z1 + term
        corr = gamma_correction_adjoint(z1, variance, gamma)
        if corr is not None:
            out = out + corr
        z2 = gamma_correction_adjoint(Y, ("d",) + variance, gamma)
        out = out + cov_deriv_adjoint(grid, z2, variance, gamma)
    return out


def _trace_contract(ginv: np.ndarray, ddu: np.ndarray, k: int) -> np.ndarray:
    fib = _FIBER_LETTERS[:k]
    return np.einsum(f"...ij,...ij{fib}->...{fib}", ginv, ddu, optimize=True)


def bochner_apply(grid: Grid, values: np.ndarray, variance: tuple,
                  gamma: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Bochner Laplacian applied to a field: -Tr^{g^{-1}}(nabla nabla u)."""
    ddu = second_cov(grid, values, variance, gamma)
    return -_trace_contract(ginv, ddu, len(variance))


# --- flatten/unflatten for bundle fields -------------------------------------

def field_to_vec(grid: Grid, bundle: str, values: np.ndarray) -> np.ndarray:
    """Pack a bundle field into a flat vector (batch axes preserved)."""
    check_bundle(bundle)
    m = grid.dim
    if bundle == "S2T*M":
        packed = pack_sym(values, m)
    elif bundle == "trivial":
        packed = values[..., None]
    else:
        packed = values
    d = fiber_dim(bundle, m)
    batch = packed.shape[: packed.ndim - grid.dim - 1]
    if packed.shape[packed.ndim - grid.dim - 1:] != grid.shape + (d,):
        raise ShapeError(f"field shape {values.shape} inconsistent with bundle {bundle}")
    return packed.reshape(batch + (grid.num_nodes * d,))


def vec_to_field(grid: Grid, bundle: str, vec: np.ndarray) -> np.ndarray:
    """Inverse of field_to_vec (batch axes preserved)."""
    check_bundle(bundle)
    m = grid.dim
    d = fiber_dim(bundle, m)
    vec = np.asarray(vec)
    if vec.shape[-1] != grid.num_nodes * d:
        raise ShapeError(
            f"vector length {vec.shape[-1]} != {grid.num_nodes * d} for bundle {bundle}"
        )
    packed = vec.reshape(vec.shape[:-1] + grid.shape + (d,))
    if bundle == "S2T*M":
        return unpack_sym(packed, m)
    if bundle == "trivial":
        return packed[..., 0]
    return packed


# --- dense operators ----------------------------------------------------------

@dataclass
class DenseOperator:
    """Dense linear map on flattened bundle fields, with an optional attached
    H^0(g) Gram weight for its codomain geometry."""

    matrix: np.ndarray
    grid: Grid
    bundle_in: str
    bundle_out: str
    weight: np.ndarray | None = None

    def __post_init__(self):
        rows = self.grid.num_nodes * fiber_dim(self.bundle_out, self.grid.dim)
        cols = self.grid.num_nodes * fiber_dim(self.bundle_in, self.grid.dim)
        if self.matrix.shape != (rows, cols):
            raise ShapeError(
                f"matrix shape {self.matrix.shape} != ({rows}, {cols}) for bundles "
                f"{self.bundle_in} -> {self.bundle_out}"
            )

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def save(self, path_prefix) -> None:
        path_prefix = Path(path_prefix)
        arr = np.ascontiguousarray(self.matrix, dtype=float)
        arr.tofile(path_prefix.with_suffix(".bin"))
        sidecar = {
            "rows": int(arr.shape[0]),
            "cols": int(arr.shape[1]),
            "bundle": self.bundle_in,
            "bundle_out": self.bundle_out,
            "n": self.grid.n,
            "dim": self.grid.dim,
            "stencil_order": self.grid.stencil_order,
        }
        path_prefix.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path_prefix) -> "DenseOperator":
        path_prefix = Path(path_prefix)
        meta = json.loads(path_prefix.with_suffix(".json").read_text())
        arr = np.fromfile(path_prefix.with_suffix(".bin"), dtype=float)
        arr = arr.reshape(meta["rows"], meta["cols"])
        grid = Grid(meta["dim"], meta["n"], meta.get("stencil_order", 4))
        return cls(arr, grid, meta["bundle"], meta.get("bundle_out", meta["bundle"]))


@lru_cache(maxsize=16)
def basis_fields(grid: Grid, bundle: str) -> np.ndarray:
    """Unpacked coordinate-basis sections of the bundle, batched along the
    first axis; cached per (grid, bundle) and returned read-only."""
    n_in = grid.num_nodes * fiber_dim(bundle, grid.dim)
    fields = vec_to_field(grid, bundle, np.eye(n_in))
    fields.setflags(write=False)
    return fields


def assemble_operator(apply_fn, grid: Grid, bundle_in: str, bundle_out: str,
                      chunk: int = 512) -> np.ndarray:
    """Assemble the dense matrix of a linear field map by batched application
    to the packed basis."""
    n_in = grid.num_nodes * fiber_dim(bundle_in, grid.dim)
    n_out = grid.num_nodes * fiber_dim(bundle_out, grid.dim)
    matrix = np.empty((n_out, n_in))
    eye = np.eye(n_in)
    for start in range(0, n_in, chunk):
        stop = min(start + chunk, n_in)
        basis = vec_to_field(grid, bundle_in, eye[start:stop])
        out = apply_fn(basis)
        matrix[:, start:stop] = field_to_vec(grid, bundle_out, out).T
    return matrix


@dataclass
class LaplacianContext:
    """Geometry data shared by Laplacian assembly and its metric derivative."""

    g: MetricField
    ginv: np.ndarray
    gamma: np.ndarray
    dg_partials: np.ndarray

    @classmethod
    def build(cls, g: MetricField) -> "LaplacianContext":
        ginv = inverse_metric_coeffs(g.coeffs, g.spd_floor)
        dg = metric_partials(g.grid, g.coeffs)
        gamma = _gamma_from_pieces(ginv, dg)
        return cls(g, ginv, gamma, dg)


def bochner_laplacian(g: MetricField, bundle: str,
                      ctx: LaplacianContext | None = None) -> DenseOperator:
    """Dense assembly of the Bochner Laplacian Delta^g on the bundle, with the
    discrete H^0(g) Gram form attached as weight."""
    check_bundle(bundle)
    ctx = ctx or LaplacianContext.build(g)
    variance = VARIANCES[bundle]

    def apply_fn(values):
        return bochner_apply(g.grid, values, variance, ctx.gamma, ctx.ginv)

    matrix = assemble_operator(apply_fn, g.grid, bundle, bundle)
    return DenseOperator(matrix, g.grid, bundle, bundle, weight=h0_gram(g, bundle))


def symmetrize_h0(A: np.ndarray, W: np.ndarray) -> np.ndarray:
    """W-self-adjoint part A_sym = (A + W^{-1} A^T W)/2; W A_sym is symmetric
    by construction."""
    if A.shape[0] != A.shape[1] or W.shape != A.shape:
        raise ShapeError(f"symmetrize_h0 needs square A and matching W, got {A.shape}, {W.shape}")
    return 0.5 * (A + np.linalg.solve(W, A.T @ W))


def symmetrize_operator(op: DenseOperator) -> DenseOperator:
    if op.weight is None:
        raise ShapeError("operator has no attached weight")
    return DenseOperator(symmetrize_h0(op.matrix, op.weight), op.grid,
                         op.bundle_in, op.bundle_out, weight=op.weight)


def covariant_derivative(g: MetricField, values: np.ndarray, bundle: str,
                         ctx: LaplacianContext | None = None) -> np.ndarray:
    """Covariant derivative of a bundle field; output is a section of
    T*M tensor E with the new covariant index first."""
    check_bundle(bundle)
    ctx = ctx or LaplacianContext.build(g)
    return cov_deriv(g.grid, values, VARIANCES[bundle], ctx.gamma)
