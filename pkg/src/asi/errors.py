"""Exception hierarchy shared by every module."""


class AsiError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AsiError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class InvalidParameter(AsiError, ValueError):
    pass


class InvalidOperator(AsiError, ValueError):
    pass


class StalenessViolation(AsiError):
    """An update referenced an iterate older than the configured delay cap."""


class Divergence(AsiError):
    pass


class RunAborted(AsiError):
    """The threaded engine gave up, e.g. after repeated worker failures."""
