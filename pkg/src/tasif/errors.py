"""Exception types. Each carries a short category used for CLI exit codes."""


class TasifError(Exception):
    category = "internal"
    exit_code = 1


class ConfigError(TasifError, ValueError):
    category = "config"
    exit_code = 2


class DataError(TasifError, ValueError):
    category = "data"
    exit_code = 3


class CheckpointError(TasifError, ValueError):
    category = "checkpoint"
    exit_code = 4


class NonFiniteLossError(TasifError, FloatingPointError):
    category = "numeric"
    exit_code = 5
