"""Numerics for Laplacians of non-smooth metrics, their holomorphic
functional calculus, metric derivatives of fractional Laplacians, and
geodesics of fractional-order Sobolev metrics on the space of Riemannian
metrics over a discretized flat torus."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DegenerateMetricError,
    FracmetError,
    LeftManifoldError,
    NearSpectrumError,
    ParameterError,
    ShapeError,
    ShootingError,
    SpectralPointError,
    TruncationError,
    UnsupportedBundleError,
)
from .grid import Grid, ScalarField, partial_derivative
from .tensorfield import (
    MetricField,
    SymTensorField,
    VolumeField,
    flat_metric,
    h0_gram,
    inverse_metric,
    volume_form,
)
from .connection import (
    DenseOperator,
    LaplacianContext,
    bochner_laplacian,
    christoffel,
    covariant_derivative,
    symmetrize_operator,
)
from .funcalc import (
    ContourSpec,
    SpectralData,
    SpectralFunction,
    base_operator,
    contour_apply,
    eigensolve,
    neumann_resolvent_series,
    positive_power,
    power,
    resolvent,
    sobolev_norm,
    spectral_apply,
)
from .perturbation import (
    adjoint_derivative,
    d_fractional,
    d_gram,
    d_inverse_metric,
    d_laplacian,
)
from .geodesic import (
    GeodesicState,
    GeodesicTrace,
    PConfig,
    equivariance_check,
    exp_map,
    geodesic_rhs,
    gp_metric,
    integrate,
    log_map,
)
from .generators import (
    conformal_metric,
    make_metric,
    metric_from_file,
    random_smooth_metric,
)

__all__ = [
    "__version__",
    "ConfigError", "DegenerateMetricError", "FracmetError",
    "LeftManifoldError", "NearSpectrumError", "ParameterError", "ShapeError",
    "ShootingError", "SpectralPointError", "TruncationError",
    "UnsupportedBundleError",
    "Grid", "ScalarField", "partial_derivative",
    "MetricField", "SymTensorField", "VolumeField", "flat_metric", "h0_gram",
    "inverse_metric", "volume_form",
    "DenseOperator", "LaplacianContext", "bochner_laplacian", "christoffel",
    "covariant_derivative", "symmetrize_operator",
    "ContourSpec", "SpectralData", "SpectralFunction", "base_operator",
    "contour_apply", "eigensolve", "neumann_resolvent_series",
    "positive_power", "power", "resolvent", "sobolev_norm", "spectral_apply",
    "adjoint_derivative", "d_fractional", "d_gram", "d_inverse_metric",
    "d_laplacian",
    "GeodesicState", "GeodesicTrace", "PConfig", "equivariance_check",
    "exp_map", "geodesic_rhs", "gp_metric", "integrate", "log_map",
    "conformal_metric", "make_metric", "metric_from_file",
    "random_smooth_metric",
]
