"""Shared exception types used across the library and the CLI exit-code map."""


class BoxQEDError(Exception):
    """Base class for all library errors."""


class ConfigError(BoxQEDError):
    """A configuration file or SimulationConfig violates a documented constraint."""


class BudgetError(BoxQEDError):
    """A numerical budget (lattice points, quadrature nodes) ran out before the
    requested tolerance was certified."""


class InvariantViolation(BoxQEDError):
    """A runtime self-check failed (hermiticity, overflow, unsupported regime)."""
