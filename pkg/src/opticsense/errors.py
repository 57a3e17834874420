"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class FixtureError(RuntimeError):
    """Missing, unreadable or corrupt fixture file (CLI exit code 3)."""


class GeometryError(ValueError):
    """A workload does not fit the core geometry."""


class InvariantError(RuntimeError):
    """An internal consistency check failed (CLI exit code 1)."""
