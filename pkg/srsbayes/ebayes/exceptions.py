"""
Exception types raised by the ebayes library.

Library code raises these; the management commands translate them into
`CommandError` exit codes (see `ebayes.cli`). Non-convergence of a fit is
reported through `FitResult.converged` and never raised.
"""


class SrsBayesError(Exception):
    """Base class for every error raised by the library."""


class TableFormatError(SrsBayesError):
    """
    A contingency-table CSV could not be parsed.

    Attributes:
        row (str | int | None): Row name or 1-based line number at fault.
        column (str | int | None): Column name or 1-based field number at fault.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DataError(SrsBayesError):
    """
    The data cannot support the requested operation (zero marginals, an
    all-zero table, a tampered fit file, ...).
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ModelSpecError(SrsBayesError):
    """Invalid model options or hyperparameters."""


class SelectionError(SrsBayesError):
    """
    No fit on a tuning grid converged.

    Attributes:
        report (TuneReport): The report of every attempted fit.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
