"""Exception hierarchy.

Every error raised by the package derives from :class:`XmodalError`.  The
three intermediate classes map onto CLI exit codes (config 2, data 3,
numeric 4).
"""


class XmodalError(Exception):
    exit_code = 1


class ConfigError(XmodalError):
    exit_code = 2


class DataError(XmodalError):
    exit_code = 3


class NumericError(XmodalError):
    exit_code = 4


class InvalidConfig(ConfigError):
    pass


# file / data errors
class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFinite(DataError):
    pass


class IoFailure(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class DimMismatch(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class NoOverlap(DataError):
    pass


class SingleClass(DataError):
    pass


class CorruptBundle(DataError):
    pass


# numeric errors
class TooFewSamples(NumericError):
    pass


class DegenerateCovariance(NumericError):
    pass


class ZeroVector(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
