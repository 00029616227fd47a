"""Named test-metric generators on the discretized torus.

Every generator returns a MetricField that passes SPD validation by
construction; random_smooth is seeded and amplitude-limited so the smallest
node eigenvalue stays at or above 1/2.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ParameterError
from .grid import Grid
from .tensorfield import MetricField, SymTensorField, flat_metric

GENERATOR_TAGS = ("flat", "conformal", "random_smooth", "from_file")


def conformal_metric(grid: Grid, amplitude: float = 0.3,
                     wavenumber: int = 1) -> MetricField:
    """Conformally flat metric g = exp(amplitude * s(x)) * delta with a single
    trigonometric mode s; the exponential keeps the factor strictly positive
    for every amplitude."""
    if wavenumber < 1 or wavenumber > grid.n // 2 - 1:
        raise ParameterError(
            f"wavenumber must lie in [1, n/2 - 1], got {wavenumber}")
    x = grid.coordinates()
    if grid.dim == 1:
        s = np.sin(wavenumber * x[0])
    else:
        s = np.sin(wavenumber * x[0]) * np.cos(wavenumber * x[1])
    factor = np.exp(amplitude * s)
    m = grid.dim
    coeffs = factor[..., None, None] * np.eye(m)
    return MetricField(grid, coeffs)


def random_smooth_metric(grid: Grid, seed: int = 0,
                         amplitude: float = 0.25,
                         max_mode: int = 2) -> MetricField:
    """Identity plus a seeded truncated trigonometric series of symmetric
    perturbations, rescaled so the node-wise spectral radius of the
    perturbation is exactly ``amplitude``.

    Requiring amplitude <= 1/2 therefore guarantees min eigenvalue >= 1/2.
    """
    if not 0.0 <= amplitude <= 0.5:
        raise ParameterError(
            f"amplitude must lie in [0, 0.5] to keep min eig >= 1/2, "
            f"got {amplitude}")
    rng = np.random.default_rng(seed)
    m = grid.dim
    x = grid.coordinates()
    pert = np.zeros(grid.shape + (m, m))
    for kx in range(0, max_mode + 1):
        for ky in range(0, max_mode + 1) if m == 2 else [0]:
            if kx == 0 and ky == 0:
                continue
            phase = kx * x[0] + (ky * x[1] if m == 2 else 0.0)
            for trig in (np.sin, np.cos):
                c = rng.standard_normal((m, m))
                c = 0.5 * (c + c.T)
                pert += trig(phase)[..., None, None] * c
    if amplitude > 0.0:
        radius = np.abs(np.linalg.eigvalsh(pert)).max()
        if radius > 0.0:
            pert *= amplitude / radius
    coeffs = np.broadcast_to(np.eye(m), grid.shape + (m, m)) + pert
    return MetricField(grid, coeffs)


def metric_from_file(grid: Grid, path) -> MetricField:
    """Load a metric from the JSON field format and validate it against the
    requested grid."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"metric file does not exist: {path}")
    data = json.loads(path.read_text())
    field = SymTensorField.from_json_dict(data, stencil_order=grid.stencil_order)
    if field.grid.dim != grid.dim or field.grid.n != grid.n:
        raise ConfigError(
            f"metric file grid (dim={field.grid.dim}, n={field.grid.n}) does "
            f"not match the configured grid (dim={grid.dim}, n={grid.n})")
    return MetricField(grid, field.coeffs)


def make_metric(grid: Grid, tag: str, **params) -> MetricField:
    """Dispatch on the generator tag; unknown keys are rejected so config
    typos fail loudly."""
    if tag == "flat":
        _reject_extras(tag, params, ())
        return flat_metric(grid)
    if tag == "conformal":
        _reject_extras(tag, params, ("amplitude", "wavenumber"))
        return conformal_metric(grid, **params)
    if tag == "random_smooth":
        _reject_extras(tag, params, ("seed", "amplitude", "max_mode"))
        return random_smooth_metric(grid, **params)
    if tag == "from_file":
        _reject_extras(tag, params, ("path",))
        if "path" not in params:
            raise ConfigError("generator from_file requires field 'path'")
        return metric_from_file(grid, params["path"])
    raise ConfigError(
        f"unknown metric generator {tag!r}; expected one of {GENERATOR_TAGS}")


def _reject_extras(tag: str, params: dict, allowed: tuple) -> None:
    extra = set(params) - set(allowed)
    if extra:
        raise ConfigError(
            f"generator {tag!r} got unsupported parameters {sorted(extra)}; "
            f"allowed: {sorted(allowed) or 'none'}")
