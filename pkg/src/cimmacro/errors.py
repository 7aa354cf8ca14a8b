"""Exception hierarchy shared by every simulator layer."""


class CimError(Exception):
    """Base class for all simulator errors."""


class OutOfRange(CimError, ValueError):
    pass


class WrongLength(CimError, ValueError):
    pass


class ShapeMismatch(CimError, ValueError):
    pass


class HeadroomExceeded(CimError):
    """A bit-line was discharged below ``vdd - vpp_mac``."""


class NotPrecharged(CimError):
    pass


class ReadoutBeforeMac(CimError):
    pass


class TooManyColumns(CimError, ValueError):
    pass


class UnrealizableTarget(CimError, ValueError):
    pass


class InsufficientCoverage(CimError, ValueError):
    pass


class NoWork(CimError, ValueError):
    pass


class ParseError(CimError, ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(CimError, ValueError):
    pass


class RangeError(CimError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
