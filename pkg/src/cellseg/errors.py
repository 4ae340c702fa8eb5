"""Exception types raised across the package."""


class CellsegError(Exception):
    """Base class for all package errors."""


class MissingColumn(CellsegError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} not found in header")


class UnparsableRow(CellsegError):
    def __init__(self, row: int, detail: str = ""):
        self.row = row
        msg = f"could not parse data row {row}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyFile(CellsegError):
    pass


class EmptyTable(CellsegError):
    pass


class KTooLarge(CellsegError):
    pass


class InvalidRange(CellsegError):
    pass


class UnknownLabel(CellsegError):
    pass


class DimensionMismatch(CellsegError):
    pass


class NoEligiblePairs(CellsegError):
    pass


class TooFewMolecules(CellsegError):
    pass


class InstanceTooLarge(CellsegError):
    pass


class DegenerateData(CellsegError):
    pass


class Requires2D(CellsegError):
    pass


class CellNotInMask(CellsegError):
    pass


class EmptySet(CellsegError):
    pass


class AlignmentError(CellsegError):
    pass


class ConfigError(CellsegError):
    pass


class StageError(CellsegError):
    """Wraps an error raised inside a pipeline stage, naming the stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
