class ChiNetError(Exception):
    """Base class for data and numeric errors raised by chinet."""


class DimensionError(ChiNetError, ValueError):
    pass


class NumericalError(ChiNetError, ArithmeticError):
    pass


class SizeGuardError(ChiNetError):
    """A brute-force materialisation would exceed the desk-scale budget."""


class DataFormatError(ChiNetError):
    pass


class CheckpointError(ChiNetError):
    pass


class ConfigError(ChiNetError):
    pass
