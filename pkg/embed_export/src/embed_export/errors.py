"""Exception types with distinct exit-code mappings in the CLI."""


class ExportError(Exception):
    """Base class for everything this tool can raise on purpose."""


class ConfigError(ExportError):
    """The requested configuration is invalid."""


class DataError(ExportError):
    """The corpus file is malformed or internally inconsistent."""


class EncoderError(ExportError):
    """The encoder checkpoint is missing or unusable."""
