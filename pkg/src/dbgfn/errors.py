"""Exception hierarchy shared by every module of the package."""


class DBGFNError(Exception):
    """Base class for all package errors."""


# environment
class ActionOnTerminalError(DBGFNError):
    pass


class TokenOutOfRangeError(DBGFNError):
    pass


class NonTerminalRewardError(DBGFNError):
    pass


class MissingTableEntryError(DBGFNError):
    pass


class IncompleteTableError(DBGFNError):
    pass


class DuplicateSequenceError(DBGFNError):
    pass


class NegativeRewardError(DBGFNError):
    pass


class BadSymbolError(DBGFNError):
    pass


class SpaceTooLargeError(DBGFNError):
    pass


# policy / optimisation
class TerminalStateQueryError(DBGFNError):
    pass


class InitialStateQueryError(DBGFNError):
    pass


class ShapeMismatchError(DBGFNError):
    pass


class NonFiniteGradientError(DBGFNError):
    pass


# objectives
class NonPositiveRewardError(DBGFNError):
    pass


# backtracking
class DegenerateThresholdsError(DBGFNError):
    pass


class StepsOutOfRangeError(DBGFNError):
    pass


class ConstantVectorError(DBGFNError):
    """Pearson correlation is undefined because one input has zero variance."""


# harness
class ConfigInvalidError(DBGFNError):
    pass


class EmptyBufferError(DBGFNError):
    pass
