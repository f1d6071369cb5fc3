"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(Exception):
    """Invalid run configuration (bad field, missing path, bad value)."""


class DataError(Exception):
    """Malformed or inconsistent input data."""

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx += f"{path}"
        if line is not None:
            ctx += f":{line}"
        super().__init__(f"{ctx}: {message}" if ctx else message)
        self.path = path
        self.line = line


class NumericError(Exception):
    """Non-finite values or numerical divergence."""


class CheckpointError(Exception):
    """Unreadable, truncated, or version-incompatible checkpoint file."""
