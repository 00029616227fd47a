import numpy as np
import pytest
import scipy.linalg

from fracmet import (
    ContourSpec,
    base_operator,
    contour_apply,
    eigensolve,
    flat_metric,
    neumann_resolvent_series,
    positive_power,
    power,
    resolvent,
    sobolev_norm,
    spectral_apply,
)
from fracmet.exceptions import (
    NearSpectrumError,
    ParameterError,
    SpectralPointError,
    TruncationError,
)
from fracmet.funcalc import contour_apply_many, custom

from helpers import grid2, metric


@pytest.fixture(scope="module")
def op_s2():
    grid = grid2()
    g = metric(grid, amplitude=0.25)
    return base_operator(g, "S2T*M")


@pytest.fixture(scope="module")
def data_s2(op_s2):
    return eigensolve(op_s2)


def test_eigensolve_matches_scipy_oracle(op_s2, data_s2):
    evals = scipy.linalg.eigh(op_s2.weight @ op_s2.matrix, op_s2.weight,
                              eigvals_only=True)
    np.testing.assert_allclose(data_s2.eigenvalues, evals, atol=1e-10)


def test_eigensolve_reconstructs_operator(op_s2, data_s2):
    V, lam, W = data_s2.eigenvectors, data_s2.eigenvalues, data_s2.weight
    A = (V * lam) @ (V.T @ W)
    np.testing.assert_allclose(A, op_s2.matrix, atol=1e-10)


def test_spectral_apply_identity_and_inverse(op_s2, data_s2):
    A = spectral_apply(data_s2, power(1.0)).matrix
    np.testing.assert_allclose(A, op_s2.matrix, atol=1e-10)
    Ainv = spectral_apply(data_s2, power(-1.0)).matrix
    np.testing.assert_allclose(Ainv, np.linalg.inv(op_s2.matrix), atol=1e-9)


def test_semigroup_property(data_s2, op_s2):
    for p, q in [(0.3, 0.7), (0.7, 1.5), (0.3, 1.5)]:
        Ap = spectral_apply(data_s2, power(p)).matrix
        Aq = spectral_apply(data_s2, power(q)).matrix
        Apq = spectral_apply(data_s2, power(p + q)).matrix
        err = np.linalg.norm(Ap @ Aq - Apq) / np.linalg.norm(Apq)
        assert err < 1e-8


def test_calculus_w_selfadjoint_and_positive(data_s2):
    rng = np.random.default_rng(0)
    F = spectral_apply(data_s2, power(-0.5))
    WF = F.weight @ F.matrix
    assert np.linalg.norm(WF - WF.T) / np.linalg.norm(WF) < 1e-10
    for _ in range(5):
        h = rng.standard_normal(F.matrix.shape[0])
        assert h @ (F.weight @ (F.matrix @ h)) > -1e-10


def test_sobolev_norm_oracle(data_s2):
    rng = np.random.default_rng(1)
    vec = rng.standard_normal(data_s2.eigenvectors.shape[0])
    s = 1.3
    # independent route: apply A^{s/2} then take the weighted norm
    half = spectral_apply(data_s2, power(s / 2.0)).matrix @ vec
    direct = np.sqrt(half @ data_s2.weight @ half)
    assert abs(sobolev_norm(data_s2, vec, s) - direct) < 1e-10 * direct


def test_contour_matches_spectral(op_s2, data_s2):
    spec = ContourSpec(decay_r=0.5)
    funcs = [power(-1.0), power(-0.5)]
    results = contour_apply_many(op_s2, funcs, spec)
    for f, res in zip(funcs, results):
        ref = spectral_apply(data_s2, f).matrix
        err = np.linalg.norm(res.matrix - ref) / np.linalg.norm(ref)
        assert err < 1e-6


def test_contour_output_is_real(op_s2):
    res = contour_apply(op_s2, power(-1.0), ContourSpec(decay_r=1.0))
    assert np.isrealobj(res.matrix)


def test_positive_power_integer_is_matrix_power(op_s2):
    M = positive_power(op_s2, 2.0).matrix
    np.testing.assert_allclose(M, op_s2.matrix @ op_s2.matrix, atol=1e-10)


def test_positive_power_split_routes_agree(op_s2):
    spec = ContourSpec(decay_r=0.5)
    c = positive_power(op_s2, 1.5, route="contour", spec=spec).matrix
    s = positive_power(op_s2, 1.5, route="spectral").matrix
    assert np.linalg.norm(c - s) / np.linalg.norm(s) < 1e-6


def test_resolvent_residual_and_near_spectrum(op_s2, data_s2):
    lam = 10.0 * np.exp(1j * np.pi / 3)
    R = resolvent(op_s2.matrix, lam)
    n = R.shape[0]
    resid = np.linalg.norm((op_s2.matrix - lam * np.eye(n)) @ R - np.eye(n))
    assert resid < 1e-9
    with pytest.raises(NearSpectrumError):
        resolvent(op_s2.matrix, complex(data_s2.eigenvalues[3]))


def test_neumann_series_converges_to_inverse():
    grid = grid2()
    op = base_operator(flat_metric(grid), "trivial")
    A = op.matrix
    rng = np.random.default_rng(2)
    # build the perturbation as C = S A with S symmetric of 2-norm 0.5, so
    # the iteration matrix (B - A) R_0 = S is normal and the asymptotic term
    # decay matches the norm-based contraction number
    S = rng.standard_normal(A.shape)
    S = 0.5 * (S + S.T)
    S *= 0.5 / np.linalg.norm(S, 2)
    C = S @ A
    B = A + C
    total, norms, ratio, flag = neumann_resolvent_series(A, B, 0.0, 60)
    assert flag
    assert abs(ratio - 0.5) < 1e-12
    err = np.linalg.norm(total.real - np.linalg.inv(B)) / np.linalg.norm(np.linalg.inv(B))
    assert err < 1e-12
    # measured geometric decay of the terms agrees with the ratio estimate
    measured = (norms[-1] / norms[20]) ** (1.0 / (len(norms) - 21))
    assert abs(measured - ratio) / ratio < 0.2


def test_neumann_series_divergence_flagged():
    grid = grid2()
    op = base_operator(flat_metric(grid), "trivial")
    A = op.matrix
    B = A + 3.0 * A  # contraction number 3 at lam = 0
    _, norms, ratio, flag = neumann_resolvent_series(A, B, 0.0, 10)
    assert not flag
    assert ratio > 1.0
    assert norms[-1] > norms[0]


def test_contour_spec_validation():
    with pytest.raises(ParameterError):
        ContourSpec(omega=0.0)
    with pytest.raises(ParameterError):
        ContourSpec(ball_radius=1.5)
    with pytest.raises(ParameterError):
        ContourSpec(nodes_per_decade=1)


def test_truncation_error_raised(op_s2):
    spec = ContourSpec(decay_r=0.5, t_max=50.0, tail_tol=1e-10)
    with pytest.raises(TruncationError):
        contour_apply(op_s2, power(-0.5), spec)


def test_spectral_point_error(data_s2):
    shifted = custom(lambda z: 1.0 / (z - data_s2.eigenvalues[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(SpectralPointError):
            spectral_apply(data_s2, shifted)


def test_dispersion_flat_trivial_order2():
    # order-2 stencils on the flat metric reproduce the discrete Fourier
    # dispersion relation exactly
    from fracmet import Grid

    for n in (8, 16):
        grid = Grid(dim=2, n=n, stencil_order=2)
        op = base_operator(flat_metric(grid), "trivial")
        lam = eigensolve(op).eigenvalues
        k = np.arange(n)
        w = (2.0 - 2.0 * np.cos(k * grid.h)) / grid.h ** 2
        expect = np.sort((1.0 + w[:, None] + w[None, :]).reshape(-1))
        np.testing.assert_allclose(lam, expect, atol=1e-10)
