"""Error types shared across the package.

Three failure families map onto the CLI exit codes: configuration and I/O
problems (exit 2), numerical failures during integration (exit 3), and
domain errors raised by math helpers handed out-of-range arguments.
"""


class ConfigError(ValueError):
    """Invalid, unreadable, or inconsistent experiment configuration."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """Non-finite state or a diverging iteration detected at runtime."""
