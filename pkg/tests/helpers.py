"""Shared construction helpers for the test suite."""

import numpy as np

from fracmet import Grid, MetricField, SymTensorField
from fracmet.generators import make_metric


def rand_sym(grid, rng, amplitude=0.1):
    """Random symmetric coefficient array scaled to the given node-wise
    spectral radius."""
    m = grid.dim
    q = rng.standard_normal(grid.shape + (m, m))
    q = 0.5 * (q + np.swapaxes(q, -1, -2))
    radius = np.abs(np.linalg.eigvalsh(q)).max()
    if radius > 0:
        q *= amplitude / radius
    return q


def metric(grid, tag="random_smooth", **kw):
    return make_metric(grid, tag, **kw)


def grid2(n=8, order=4):
    return Grid(dim=2, n=n, stencil_order=order)


def grid1(n=8, order=4):
    return Grid(dim=1, n=n, stencil_order=order)


def fd_matrix(build, coeffs, q, eps):
    """Central finite difference of a matrix-valued map of the metric."""
    return (build(coeffs + eps * q) - build(coeffs - eps * q)) / (2.0 * eps)


def convergence_order(epsilons, errors):
    return float(np.polyfit(np.log(epsilons), np.log(errors), 1)[0])
