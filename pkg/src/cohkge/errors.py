"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class CohKGEError(Exception):
    exit_code = 1


class ConfigError(CohKGEError):
    exit_code = 3


class DataError(CohKGEError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class VocabularyError(DataError):
    def __init__(self, symbol, kind="entity"):
        super().__init__(f"unknown {kind} {symbol!r} (vocabulary is frozen)")
        self.symbol = symbol


class ValidationError(DataError):
    pass


class SamplingError(DataError):
    pass


class FormatError(DataError):
    pass


class CorruptFileError(FormatError):
    pass


class VersionError(FormatError):
    pass


class CompatibilityError(CohKGEError):
    exit_code = 6


class DivergenceError(CohKGEError):
    exit_code = 5

    def __init__(self, epoch, message="non-finite objective or gradient"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch
