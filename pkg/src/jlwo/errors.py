"""Exception types shared across the package."""


class JLWOError(Exception):
    """Base class for all package errors."""


class PortCapacityExceeded(JLWOError):
    pass


class NegativeResidualBandwidth(JLWOError):
    pass


class UnstableQueue(JLWOError):
    def __init__(self, message, queue=None):
        super().__init__(message)
        self.queue = queue


class NoFeasibleWeights(JLWOError):
    pass


class NoFeasibleSchedule(JLWOError):
    pass


class NoPerfectMatching(JLWOError):
    pass


class InfeasibleInitialization(JLWOError):
    pass


class BadMarginals(JLWOError):
    pass


class ParseError(JLWOError):
    pass


class SchemaError(JLWOError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class HorizonTooShort(UserWarning):
    """Fewer than 100 post-warmup completions in some class."""


class InvalidDesign(JLWOError):
    """A design point violates a structural constraint of its instance."""
