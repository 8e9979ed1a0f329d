"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised for malformed configuration input (files, CLI values, presets)."""


class GeometryError(ValueError):
    """Raised when a domain description is invalid or not meshable."""


class MeshError(ValueError):
    """Raised when a triangulation violates a structural requirement."""


class SolverError(RuntimeError):
    """Raised when the eigensolver fails to converge to the requested tolerance."""
