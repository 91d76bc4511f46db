"""Exception types shared across the package."""


class InvalidFieldError(ValueError):
    """A field contains NaN/Inf entries or otherwise invalid data."""


class ConfigurationError(ValueError):
    """Shapes, grids, or configuration values are inconsistent."""


class SolverError(RuntimeError):
    """An iterative solver failed (CFL violation, iteration cap, stall)."""
