import numpy as np
import pytest

from fracmet import (
    ContourSpec,
    LaplacianContext,
    MetricField,
    base_operator,
    bochner_laplacian,
    d_fractional,
    d_gram,
    d_inverse_metric,
    d_laplacian,
    eigensolve,
    h0_gram,
    power,
    spectral_apply,
)
from fracmet.connection import field_to_vec, vec_to_field
from fracmet.perturbation import (
    adjoint_derivative,
    d_laplacian_q_gradient,
    d_laplacian_transpose_apply,
    d_symmetrized,
    direction_geometry,
    dk_kernel,
)
from fracmet.tensorfield import inverse_metric_coeffs

from helpers import convergence_order, fd_matrix, grid2, metric, rand_sym

EPSILONS = [1e-2, 5e-3, 2.5e-3]


@pytest.fixture(scope="module")
def setting():
    grid = grid2()
    g = metric(grid, amplitude=0.25)
    rng = np.random.default_rng(0)
    q = rand_sym(grid, rng, amplitude=0.1)
    return grid, g, q, rng


def test_d_inverse_metric_fd(setting):
    grid, g, q, _ = setting
    ginv = inverse_metric_coeffs(g.coeffs)
    dginv = d_inverse_metric(ginv, q)
    errs = []
    for eps in EPSILONS:
        fd = fd_matrix(lambda c: np.linalg.inv(c), g.coeffs, q, eps)
        errs.append(np.abs(fd - dginv).max() / np.abs(dginv).max())
    assert convergence_order(EPSILONS, errs) > 1.9
    assert errs[-1] < 1e-5
    # exact identity: d(g^{-1}) = -g^{-1} q g^{-1}
    oracle = -np.einsum("...ij,...jk,...kl->...il", ginv, q, ginv)
    np.testing.assert_allclose(dginv, oracle, atol=1e-13)


@pytest.mark.parametrize("bundle", ["trivial", "TM", "S2T*M"])
def test_d_laplacian_fd(setting, bundle):
    grid, g, q, _ = setting
    dD = d_laplacian(g, q, bundle).matrix
    errs = []
    for eps in EPSILONS:
        fd = fd_matrix(
            lambda c: bochner_laplacian(MetricField(grid, c), bundle).matrix,
            g.coeffs, q, eps)
        errs.append(np.linalg.norm(fd - dD) / np.linalg.norm(dD))
    assert convergence_order(EPSILONS, errs) > 1.9
    assert errs[-1] < 1e-6


def test_d_laplacian_bilinearity(setting):
    grid, g, q, rng = setting
    q2 = rand_sym(grid, rng, amplitude=0.1)
    a, b = 0.7, -1.3
    lhs = d_laplacian(g, a * q + b * q2, "S2T*M").matrix
    rhs = (a * d_laplacian(g, q, "S2T*M").matrix
           + b * d_laplacian(g, q2, "S2T*M").matrix)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_d_gram_fd(setting):
    grid, g, q, _ = setting
    dW = d_gram(g, q, "S2T*M")
    errs = []
    for eps in EPSILONS:
        fd = fd_matrix(
            lambda c: h0_gram(MetricField(grid, c), "S2T*M"), g.coeffs, q, eps)
        errs.append(np.linalg.norm(fd - dW) / np.linalg.norm(dW))
    assert convergence_order(EPSILONS, errs) > 1.9
    assert errs[-1] < 1e-6


def test_d_symmetrized_fd(setting):
    grid, g, q, _ = setting
    op = base_operator(g, "S2T*M")
    B = d_symmetrized(g, q, "S2T*M", op.matrix, op.weight)

    def build(c):
        return base_operator(MetricField(grid, c), "S2T*M").matrix

    errs = []
    for eps in EPSILONS:
        fd = fd_matrix(build, g.coeffs, q, eps)
        errs.append(np.linalg.norm(fd - B) / np.linalg.norm(B))
    assert convergence_order(EPSILONS, errs) > 1.9


def test_transpose_apply_matches_dense(setting):
    # the dense operator acts on packed vectors while the matrix-free
    # transpose works in the full-index pairing, so convert the cotangent
    # with halved off-diagonals going in and the covector packing coming out
    grid, g, q, rng = setting
    from fracmet.tensorfield import pack_sym_covector

    ctx = LaplacianContext.build(g)
    dD = d_laplacian(g, q, "S2T*M", ctx=ctx).matrix
    dginv, dgamma = direction_geometry(ctx, q)
    y = rng.standard_normal(dD.shape[0])
    Y = vec_to_field(grid, "S2T*M", y).copy()
    off = ~np.eye(2, dtype=bool)
    Y[..., off] *= 0.5
    G = d_laplacian_transpose_apply(ctx, dginv, dgamma, Y, "S2T*M")
    lhs = pack_sym_covector(G, 2).reshape(-1)
    rhs = dD.T @ y
    assert np.abs(lhs - rhs).max() < 1e-12 * max(np.abs(rhs).max(), 1.0)


def test_q_gradient_matches_dense_pairing(setting):
    # gradient route: sum_q <dDelta(q) u, Y> per packed direction equals the
    # entry-wise full gradient paired with the unpacked direction
    grid, g, q, rng = setting
    from fracmet.tensorfield import pack_sym, pack_sym_covector

    ctx = LaplacianContext.build(g)
    u = rand_sym(grid, rng)
    Y = rand_sym(grid, rng)
    G = d_laplacian_q_gradient(ctx, u, Y, "S2T*M")
    grad = pack_sym_covector(G, 2).reshape(-1)
    dD_u = field_to_vec(
        grid, "S2T*M",
        vec_to_field(grid, "S2T*M",
                     d_laplacian(g, q, "S2T*M", ctx=ctx).matrix
                     @ field_to_vec(grid, "S2T*M", u)))
    pairing = np.sum(vec_to_field(grid, "S2T*M", dD_u) * Y)
    qv = pack_sym(q, 2).reshape(-1)
    assert abs(grad @ qv - pairing) < 1e-11 * max(abs(pairing), 1.0)


def test_dk_kernel_structure(setting):
    grid, g, _, _ = setting
    data = eigensolve(base_operator(g, "S2T*M"))
    f = power(1.5)
    F = dk_kernel(data, f)
    np.testing.assert_allclose(F, F.T, atol=1e-12)
    # diagonal entries are f'(lambda)
    lam = data.eigenvalues
    np.testing.assert_allclose(np.diag(F), 1.5 * lam ** 0.5,
                               rtol=1e-10)
    # off-diagonal entries are divided differences
    i, j = 0, len(lam) - 1
    dd = (f(complex(lam[i])).real - f(complex(lam[j])).real) / (lam[i] - lam[j])
    assert abs(F[i, j] - dd) < 1e-10 * abs(dd)


def test_d_fractional_routes_agree(setting):
    grid, g, q, _ = setting
    op = base_operator(g, "S2T*M")
    spec = ContourSpec(decay_r=0.5)
    f = power(-0.5)
    c = d_fractional(g, q, f, spec, route="contour", op=op).matrix
    s = d_fractional(g, q, f, spec, route="spectral", op=op).matrix
    assert np.linalg.norm(c - s) / np.linalg.norm(s) < 1e-6


def test_d_fractional_inverse_chain_rule(setting):
    grid, g, q, _ = setting
    op = base_operator(g, "S2T*M")
    B = d_symmetrized(g, q, "S2T*M", op.matrix, op.weight)
    dFinv = d_fractional(g, q, power(-1.0), ContourSpec(decay_r=1.0),
                         route="spectral", op=op).matrix
    Ainv = np.linalg.inv(op.matrix)
    np.testing.assert_allclose(dFinv, -Ainv @ B @ Ainv, atol=1e-9)


def test_d_fractional_fd_noninteger(setting):
    grid, g, q, _ = setting
    f = power(1.5)
    spec = ContourSpec(decay_r=0.5)
    dF = d_fractional(g, q, f, spec, route="spectral").matrix

    def build(c):
        gp = MetricField(grid, c)
        return spectral_apply(eigensolve(base_operator(gp, "S2T*M")), f).matrix

    errs = []
    for eps in EPSILONS:
        fd = fd_matrix(build, g.coeffs, q, eps)
        errs.append(np.linalg.norm(fd - dF) / np.linalg.norm(dF))
    assert convergence_order(EPSILONS, errs) > 1.9
    assert errs[-1] < 1e-5


def test_adjoint_derivative_defining_identity(setting):
    # <(D_q P) h, k>_W = <q, adjoint(h) applied to k ... > as dense operators:
    # pairing q against the adjoint output equals the forward pairing
    grid, g, q, rng = setting
    f = power(1.5)
    spec = ContourSpec(decay_r=0.5)
    h = rand_sym(grid, rng)
    adj = adjoint_derivative(g, h, f, spec, route="spectral")
    W = adj.weight
    k = rng.standard_normal(W.shape[0])
    dP = d_fractional(g, q, f, spec, route="spectral").matrix
    hv = field_to_vec(grid, "S2T*M", h)
    qv = field_to_vec(grid, "S2T*M", q)
    lhs = k @ (W @ (dP @ hv))
    rhs = qv @ (W @ (adj.matrix @ k))
    assert abs(lhs - rhs) < 1e-8 * max(abs(lhs), 1.0)
