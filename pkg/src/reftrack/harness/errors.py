"""Error taxonomy for the run harness.

ConfigError maps to exit code 2, DataError to exit code 3.
"""


class ConfigError(Exception):
    """Invalid configuration: unknown keys, bad values, bad overrides."""


class DataError(Exception):
    """Missing or corrupt data/checkpoint files."""
