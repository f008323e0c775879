"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numeric failures with 3 and file problems with 4.
"""


class NoisefixError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(NoisefixError):
    """Invalid configuration: bad flag, unknown key, out-of-range value."""


class CapabilityError(ConfigError):
    """An operation was requested from a component that cannot provide it."""


class NumericError(NoisefixError):
    """A computation produced non-finite values."""


class FileFormatError(NoisefixError):
    """A file does not conform to one of the on-disk formats."""


class DegenerateSampleError(NoisefixError):
    """Sample variance too small for moment-based statistics.

    Raised by the low-level statistics so the caller can decide whether a
    near-constant window counts as an automatic test failure.
    """
