"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
data problems (3) and estimation problems (4).
"""


class ShiftIVError(Exception):
    """Base class for all package errors."""


class ConfigError(ShiftIVError, ValueError):
    pass


class DataError(ShiftIVError, ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"MissingColumn: column {column!r} not found in header")
        self.column = column


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        super().__init__(
            f"NonNumericCell: row {row}, column {column!r} has value {value!r}")
        self.row = row
        self.column = column


class NonBinaryTreatment(DataError):
    def __init__(self, row, value):
        super().__init__(f"NonBinaryTreatment: row {row} has treatment {value!r}")
        self.row = row


class BadFoldCount(DataError):
    def __init__(self, n, k):
        super().__init__(f"BadFoldCount: need 2 <= k <= n, got k={k}, n={n}")


class FitError(ShiftIVError):
    pass


class TooFewRows(FitError):
    pass


class ZeroResidualVariance(FitError):
    pass


class EstimationError(ShiftIVError):
    pass


class DegenerateIntervention(EstimationError):
    pass


class WeakInstrument(EstimationError):
    pass


class RankDeficientDesign(EstimationError):
    pass


class ZeroVarianceColumn(EstimationError):
    pass
