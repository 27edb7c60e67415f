class MPDError(Exception):
    """Base error. `exit_code` is what the CLI exits with when this escapes a command."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(MPDError):
    exit_code = 2


class ShapeError(MPDError, ValueError):
    exit_code = 2


class PreconditionError(MPDError, ValueError):
    pass


class NonFiniteError(MPDError, FloatingPointError):
    pass


class CostError(MPDError):
    pass


class DatasetFormatError(MPDError):
    pass


class CheckpointError(MPDError):
    pass


class GenerationError(MPDError):
    pass
