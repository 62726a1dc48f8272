"""Exception types shared across the package."""


class OpfgenError(Exception):
    """Base class for all package-specific errors."""


class CaseParseError(OpfgenError):
    """Malformed case file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseValidationError(OpfgenError):
    """Parsed case violates a structural requirement (reference bus, island, ...)."""


class UnsupportedFeatureError(OpfgenError):
    """Case uses a feature outside the supported format subset."""


class RatioUndefinedError(OpfgenError):
    """Reactive/active power ratio bounds are undefined (zero nominal active power)."""


class InfeasibleSpaceError(OpfgenError):
    """Load space polytope has empty interior."""


class UnboundedPolytopeError(OpfgenError):
    """Chebyshev LP is unbounded; the inequality system does not describe a load space."""


class NotInteriorError(OpfgenError):
    """Walk start point is not strictly inside the polytope."""


class StuckWalkError(OpfgenError):
    """Every coordinate chord has zero length; the polytope is degenerate."""


class EmptySupportError(OpfgenError):
    """Total-load support is empty: generation impossible under the given ranges."""


class InsufficientDataError(OpfgenError):
    """Not enough converged samples to fit a density."""


class GenerationFailedError(OpfgenError):
    """Dataset generation produced zero converged instances."""


class ConfigurationError(OpfgenError):
    """Invalid configuration value."""


class SchemaError(OpfgenError):
    """Dataset and network (or two datasets) do not describe the same system."""


class DatasetLoadError(OpfgenError):
    """Dataset directory is missing or corrupt."""
