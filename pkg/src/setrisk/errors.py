"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so library code should
raise the most specific class that applies instead of bare ValueError.
"""


class SetriskError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(SetriskError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(SetriskError):
    """A configuration value violates its documented contract."""


class DataError(SetriskError):
    """Input data is malformed, inconsistent, or references unknown ids."""


class NumericalError(SetriskError):
    """A computation produced NaN/Inf or otherwise diverged."""
