"""Exception hierarchy shared across the package."""


class FracmetError(Exception):
    """Base class for all package errors."""


class ParameterError(FracmetError):
    """An argument is outside its admissible range."""


class ShapeError(FracmetError):
    """Array shapes are inconsistent with the grid or bundle."""


class DegenerateMetricError(FracmetError):
    """A metric coefficient array is not positive definite at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class UnsupportedBundleError(FracmetError):
    """Bundle tag outside {trivial, TM, T*M, S2T*M}."""


class SpectralPointError(FracmetError):
    """A spectral function is undefined at an eigenvalue."""


class NearSpectrumError(FracmetError):
    """A resolvent was requested too close to the spectrum."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class TruncationError(FracmetError):
    """Contour truncation tail estimate exceeds the tolerance."""


class LeftManifoldError(FracmetError):
    """A geodesic left the cone of positive-definite metrics."""

    def __init__(self, message, time=None, node=None):
        super().__init__(message)
        self.time = time
        self.node = node


class ShootingError(FracmetError):
    """Geodesic shooting failed to converge (target outside the local neighborhood)."""


class ConfigError(FracmetError):
    """Invalid experiment configuration; message names the offending field."""
