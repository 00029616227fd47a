import numpy as np
import pytest

from fracmet import Grid, ScalarField, partial_derivative
from fracmet.exceptions import ParameterError, ShapeError
from fracmet.grid import flip, partial, second_partial, translate

from helpers import grid1, grid2


def test_grid_validation():
    with pytest.raises(ParameterError):
        Grid(dim=3, n=8)
    with pytest.raises(ParameterError):
        Grid(dim=2, n=7)
    with pytest.raises(ParameterError):
        Grid(dim=2, n=6)
    with pytest.raises(ParameterError):
        Grid(dim=2, n=8, stencil_order=3)


def test_partial_exact_on_resolved_modes():
    # order-4 central differences are exact on constants and linear-in-sin
    # combinations only up to truncation; check the measured order instead
    errs = []
    ns = [8, 16, 32]
    for n in ns:
        grid = grid1(n)
        x = grid.coordinates()[0]
        f = np.sin(2 * x)
        df = partial(grid, f, 0)
        errs.append(np.abs(df - 2 * np.cos(2 * x)).max())
    order = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert order > 3.8


def test_partial_order2_convergence():
    errs = []
    ns = [8, 16, 32]
    for n in ns:
        grid = grid1(n, order=2)
        x = grid.coordinates()[0]
        errs.append(np.abs(partial(grid, np.sin(x), 0) - np.cos(x)).max())
    order = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert 1.8 < order < 2.2


def test_partial_antisymmetry():
    # summation by parts on the periodic grid: sum f dg = -sum g df exactly
    rng = np.random.default_rng(0)
    grid = grid2()
    f = rng.standard_normal(grid.shape)
    g = rng.standard_normal(grid.shape)
    s = np.sum(partial(grid, f, 0) * g) + np.sum(f * partial(grid, g, 0))
    assert abs(s) < 1e-12


def test_second_partial_same_axis_compact():
    # the same-axis second difference is the compact stencil, not the square
    # of the first difference: on the highest mode the compact stencil is
    # nonzero while the squared central difference annihilates it
    grid = grid1(8, order=2)
    x = grid.coordinates()[0]
    f = np.cos(4 * x)  # Nyquist mode for n = 8
    d2 = second_partial(grid, f, 0, 0)
    assert np.abs(d2).max() > 1.0
    dd = partial(grid, partial(grid, f, 0), 0)
    assert np.abs(dd).max() < 1e-12


def test_second_partial_symmetric_in_axes():
    rng = np.random.default_rng(1)
    grid = grid2()
    f = rng.standard_normal(grid.shape)
    np.testing.assert_allclose(second_partial(grid, f, 0, 1),
                               second_partial(grid, f, 1, 0), atol=1e-13)


def test_translate_flip_roundtrip():
    rng = np.random.default_rng(2)
    grid = grid2()
    f = rng.standard_normal(grid.shape)
    back = translate(grid, translate(grid, f, (3, 5)), (-3, -5))
    np.testing.assert_array_equal(back, f)
    np.testing.assert_array_equal(flip(grid, flip(grid, f, 0), 0), f)


def test_partial_translation_equivariance():
    rng = np.random.default_rng(3)
    grid = grid2()
    f = rng.standard_normal(grid.shape)
    lhs = partial(grid, translate(grid, f, (1, 2)), 1)
    rhs = translate(grid, partial(grid, f, 1), (1, 2))
    np.testing.assert_array_equal(lhs, rhs)


def test_fiber_axes_untouched():
    rng = np.random.default_rng(4)
    grid = grid2()
    v = rng.standard_normal((3,) + grid.shape + (2, 2))
    out = partial(grid, v, 0, fiber_ndim=2)
    assert out.shape == v.shape
    # acting per fiber component equals acting on the stacked array
    np.testing.assert_array_equal(out[..., 0, 1],
                                  partial(grid, v[..., 0, 1], 0))


def test_scalar_field_json_roundtrip():
    rng = np.random.default_rng(5)
    grid = grid2()
    f = ScalarField(grid, rng.standard_normal(grid.shape))
    back = ScalarField.from_json_dict(f.to_json_dict(),
                                      stencil_order=grid.stencil_order)
    np.testing.assert_allclose(back.values, f.values)
    assert back.grid == grid


def test_partial_derivative_wrapper():
    grid = grid1(16)
    x = grid.coordinates()[0]
    f = ScalarField(grid, np.sin(x))
    df = partial_derivative(f, 0)
    assert np.abs(df.values - np.cos(x)).max() < 1e-3


def test_shape_mismatch_rejected():
    grid = grid2()
    with pytest.raises(ShapeError):
        partial(grid, np.zeros((4, 4)), 0)
    with pytest.raises(ParameterError):
        partial(grid, np.zeros(grid.shape), 2)
