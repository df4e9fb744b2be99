"""Exception types shared across the package."""


class OrdNetError(Exception):
    pass


class DimensionError(OrdNetError, ValueError):
    """Operand shapes are incompatible."""


class PartitionError(OrdNetError, ValueError):
    """Patch grid does not tile the spatial extents."""


class ArgumentError(OrdNetError, ValueError):
    pass


class EvaluationError(OrdNetError, ArithmeticError):
    """A function under gradient check returned a non-finite value."""


class FormatError(OrdNetError, IOError):
    """Malformed OTNS1 / PGM / checkpoint input."""
