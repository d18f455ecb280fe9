"""Exception hierarchy.

Errors derived from :class:`ValidationError` describe bad user input or
configuration (CLI exit status 1); :class:`ProcessingError` covers failures
while processing otherwise well-formed input (exit status 2).
"""


class RdpSenseError(Exception):
    pass


class ValidationError(RdpSenseError):
    pass


class ProcessingError(RdpSenseError):
    pass


# capture
class MalformedCapture(ProcessingError):
    pass


class TruncatedRecord(ProcessingError):
    pass


class UnknownEndpoint(ProcessingError):
    pass


# windowing
class MissingLabel(ValidationError):
    pass


class LabelSchemaError(ValidationError):
    pass


# flowstats / transforms / selection / ensemble
class EmptyWindow(ProcessingError):
    pass


class SchemaMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class DegenerateMatrix(ProcessingError):
    pass


class EmptyBackground(ValidationError):
    pass


# learners
class EmptyData(ValidationError):
    pass


class SingleClassData(ValidationError):
    pass


class StratificationError(ValidationError):
    pass


class EmptyConfusion(ValidationError):
    pass


class InsufficientModels(ValidationError):
    pass


class NoPositives(ValidationError):
    pass


# sidechannel / synthgen / cli
class NoTcpConversation(ProcessingError):
    pass


class InvalidProfile(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
