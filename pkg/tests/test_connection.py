import numpy as np
import pytest

from fracmet import (
    DenseOperator,
    LaplacianContext,
    bochner_laplacian,
    christoffel,
    covariant_derivative,
    flat_metric,
    h0_gram,
    symmetrize_operator,
)
from fracmet.connection import (
    VARIANCES,
    cov_deriv,
    field_to_vec,
    second_cov,
    vec_to_field,
)
from fracmet.exceptions import ShapeError, UnsupportedBundleError
from fracmet.grid import partial, second_partial, translate
from fracmet.tensorfield import check_bundle

from helpers import grid1, grid2, metric, rand_sym


def test_christoffel_flat_zero():
    grid = grid2()
    gamma = christoffel(flat_metric(grid))
    assert np.abs(gamma).max() == 0.0


def test_christoffel_conformal_oracle():
    # for g = exp(2 phi) delta in 2D the Christoffel symbols are
    # Gamma^k_ij = d_i phi delta_jk + d_j phi delta_ik - d_k phi delta_ij,
    # with discrete partials of phi standing in for the smooth ones
    grid = grid2(16)
    x = grid.coordinates()
    phi = 0.15 * np.sin(x[0]) * np.cos(x[1])
    g = metric(grid, "flat")
    from fracmet import MetricField

    g = MetricField(grid, np.exp(2.0 * phi)[..., None, None] * np.eye(2))
    gamma = christoffel(g)
    dphi = np.stack([partial(grid, np.exp(2.0 * phi), i) / (2.0 * np.exp(2.0 * phi))
                     for i in range(2)], axis=-1)
    oracle = np.zeros_like(gamma)
    eye = np.eye(2)
    for k in range(2):
        for i in range(2):
            for j in range(2):
                oracle[..., k, i, j] = (dphi[..., i] * eye[j, k]
                                        + dphi[..., j] * eye[i, k]
                                        - dphi[..., k] * eye[i, j])
    # the oracle differentiates exp(2 phi) then divides; christoffel contracts
    # with g^{-1} after differentiating g, the same discrete operations
    np.testing.assert_allclose(gamma, oracle, atol=1e-12)


def test_metric_compatibility():
    # nabla g = 0 holds exactly for the discrete connection because the
    # Christoffel correction is built from the same discrete partials
    grid = grid2()
    g = metric(grid, amplitude=0.3)
    ctx = LaplacianContext.build(g)
    nabla_g = cov_deriv(grid, g.coeffs, ("d", "d"), ctx.gamma)
    assert np.abs(nabla_g).max() < 1e-13


def test_cov_deriv_flat_is_partial():
    rng = np.random.default_rng(0)
    grid = grid2()
    g = flat_metric(grid)
    ctx = LaplacianContext.build(g)
    v = rng.standard_normal(grid.shape + (2,))
    out = cov_deriv(grid, v, ("d",), ctx.gamma)
    expect = np.stack([partial(grid, v, i, fiber_ndim=1) for i in range(2)],
                      axis=-2)
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_bochner_flat_trivial_is_scalar_stencil():
    rng = np.random.default_rng(1)
    grid = grid2()
    g = flat_metric(grid)
    op = bochner_laplacian(g, "trivial")
    f = rng.standard_normal(grid.shape)
    lhs = (op.matrix @ f.reshape(-1)).reshape(grid.shape)
    rhs = -(second_partial(grid, f, 0, 0) + second_partial(grid, f, 1, 1))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("bundle", ["trivial", "TM", "T*M", "S2T*M"])
def test_laplacian_translation_equivariance(bundle):
    rng = np.random.default_rng(2)
    grid = grid2()
    g = metric(grid, amplitude=0.25)
    from fracmet import MetricField
    from fracmet.tensorfield import fiber_dim

    shifts = (2, 1)
    g_t = MetricField(grid, translate(grid, g.coeffs, shifts, fiber_ndim=2))
    k = len(VARIANCES[bundle])
    shape = grid.shape + (2,) * k
    v = rng.standard_normal(shape)
    A = bochner_laplacian(g, bundle).matrix
    At = bochner_laplacian(g_t, bundle).matrix
    lhs = vec_to_field(grid, bundle,
                       At @ field_to_vec(grid, bundle,
                                         translate(grid, v, shifts,
                                                   fiber_ndim=k)))
    rhs = translate(grid, vec_to_field(grid, bundle,
                                       A @ field_to_vec(grid, bundle, v)),
                    shifts, fiber_ndim=k)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * max(np.abs(rhs).max(), 1))


def test_symmetrized_operator_w_selfadjoint():
    grid = grid2()
    g = metric(grid, amplitude=0.3)
    op = symmetrize_operator(bochner_laplacian(g, "S2T*M"))
    WA = op.weight @ op.matrix
    assert np.linalg.norm(WA - WA.T) / np.linalg.norm(WA) < 1e-13


def test_symmetrization_distance_small():
    # the raw stencil assembly is W-self-adjoint up to discretization error,
    # so symmetrizing moves the operator by little
    grid = grid2()
    g = metric(grid, amplitude=0.2)
    op = bochner_laplacian(g, "S2T*M")
    sym = symmetrize_operator(op)
    dist = np.linalg.norm(sym.matrix - op.matrix) / np.linalg.norm(op.matrix)
    assert dist < 0.05


def test_second_cov_scalar_structure():
    # mixed components compose two first differences; same-axis components
    # use the compact second difference instead, so the scalar Hessian is
    # d_i d_j f - Gamma^k_ij d_k f with the compact stencil on the diagonal
    rng = np.random.default_rng(3)
    grid = grid2()
    g = metric(grid, amplitude=0.25)
    ctx = LaplacianContext.build(g)
    f = rng.standard_normal(grid.shape)
    ddf = second_cov(grid, f, (), ctx.gamma)
    df = np.stack([partial(grid, f, i) for i in range(2)], axis=-1)
    expect = np.empty(grid.shape + (2, 2))
    for i in range(2):
        for j in range(2):
            expect[..., i, j] = (second_partial(grid, f, i, j)
                                 - np.einsum("...k,...k->...",
                                             ctx.gamma[..., :, i, j], df))
    np.testing.assert_allclose(ddf, expect, atol=1e-11)


def test_covariant_derivative_wrapper_shape():
    rng = np.random.default_rng(4)
    grid = grid2()
    g = metric(grid, amplitude=0.2)
    v = rand_sym(grid, rng)
    out = covariant_derivative(g, v, "S2T*M")
    assert out.shape == grid.shape + (2, 2, 2)


def test_dense_operator_save_load(tmp_path):
    grid = grid2()
    g = metric(grid, amplitude=0.2)
    op = bochner_laplacian(g, "TM")
    op.save(tmp_path / "op")
    back = DenseOperator.load(tmp_path / "op")
    np.testing.assert_array_equal(back.matrix, op.matrix)
    assert back.bundle_in == "TM"
    assert back.grid == grid


def test_bundle_validation():
    with pytest.raises(UnsupportedBundleError):
        check_bundle("T2M")
    grid = grid2()
    with pytest.raises(ShapeError):
        DenseOperator(np.zeros((3, 3)), grid, "trivial", "trivial")
