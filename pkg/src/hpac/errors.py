"""Exception hierarchy shared by every module."""


class HPACError(Exception):
    """Base class for all library errors."""


class ConfigurationError(HPACError, ValueError):
    pass


class ShapeError(HPACError, ValueError):
    pass


class ContractError(HPACError, RuntimeError):
    pass


class DomainError(HPACError, ValueError):
    pass


class UnsupportedFormatError(HPACError, ValueError):
    pass


class TruncatedFileError(HPACError, ValueError):
    def __init__(self, frame_index: int, message: str):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class ParseError(HPACError, ValueError):
    def __init__(self, offset: int, message: str, unit: str = "offset"):
        super().__init__(f"{unit} {offset}: {message}")
        self.offset = offset


class ManifestError(HPACError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class BatchingError(HPACError, ValueError):
    pass


class IncompatibleCheckpointError(HPACError, ValueError):
    pass


class TrainingAborted(HPACError, RuntimeError):
    pass


class RunConfigError(ConfigurationError):
    """Bad run-configuration file or override (unknown key, wrong type)."""
