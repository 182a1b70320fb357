"""Exception hierarchy shared by every ewer module.

Input problems derive from :class:`InputError` (CLI exit code 2), numeric
failures from :class:`NumericError` (exit code 3).
"""


class EwerError(Exception):
    exit_code = 1


class InputError(EwerError, ValueError):
    exit_code = 2


class NumericError(EwerError, ArithmeticError):
    exit_code = 3


# wer_core
class EmptyReference(InputError):
    pass


class DegenerateUtterance(InputError):
    pass


class EmptyCorpus(InputError):
    pass


class CorpusFormatError(InputError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# binning
class TooFewSamples(InputError):
    pass


class InvalidK(InputError):
    pass


class NonMonotonicValues(InputError):
    pass


# objective
class NonFiniteInput(NumericError):
    pass


class LengthMismatch(InputError):
    pass


class IndexOutOfRange(InputError, IndexError):
    pass


# features
class UnsupportedFormat(InputError):
    pass


class IoFailure(EwerError, OSError):
    exit_code = 2


class EmptySignal(InputError):
    pass


class MissingId(InputError, KeyError):
    pass


class DimensionMismatch(InputError):
    pass


# model
class ShapeMismatch(InputError):
    pass


class EmptyDataset(InputError):
    pass


class NonFiniteLoss(NumericError):
    pass


class VersionMismatch(InputError):
    pass


class ChecksumMismatch(InputError):
    pass


# synthgen
class InvalidConfig(InputError):
    pass
