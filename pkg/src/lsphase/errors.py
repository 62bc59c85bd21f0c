"""Exception types shared across the package.

The CLI maps these onto its exit codes: config/usage problems exit 1,
data/format problems exit 2, numerical degeneracies exit 3.
"""


class LsphaseError(Exception):
    pass


class DimensionError(LsphaseError, ValueError):
    """Grid/shape mismatch or an unsupported (odd) grid size."""


class FormatError(LsphaseError, ValueError):
    """Malformed or truncated on-disk artifact (LSPR, LSNN, PGM, manifest)."""


class DegenerateInputError(LsphaseError, ValueError):
    """Numerically degenerate input, e.g. a zero-variance field where a
    correlation denominator would vanish."""


class ConfigError(LsphaseError, ValueError):
    """Invalid configuration value, unknown key, or inconsistent experiment
    setup (e.g. baseline capacity outside the allowed band)."""
