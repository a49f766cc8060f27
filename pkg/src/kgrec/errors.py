"""Exception hierarchy shared across the package."""


class KgrecError(Exception):
    """Base class for all package errors."""


# graph construction / access
class DanglingEntity(KgrecError):
    pass


class SelfLoop(KgrecError):
    pass


class UnknownEntity(KgrecError):
    pass


class UnknownRelation(KgrecError):
    pass


class NoNegativeAvailable(KgrecError):
    pass


class ParseError(KgrecError):
    """Malformed input line; message carries the 1-based line number."""


# numerics / shapes
class ShapeMismatch(KgrecError):
    pass


class NonFiniteInput(KgrecError):
    pass


class NonFiniteGradient(KgrecError):
    pass


# text encoding
class EmptyText(KgrecError):
    pass


class EmptyTagList(KgrecError):
    pass


# graph attention
class IsolatedNode(KgrecError):
    pass


class MissingState(KgrecError):
    pass


# training
class EmptyBatch(KgrecError):
    pass


class LengthMismatch(KgrecError):
    pass


class DivergedLoss(KgrecError):
    pass


# vector index
class EmptyStore(KgrecError):
    pass


class DimensionMismatch(KgrecError):
    pass


class EmptyIndex(KgrecError):
    pass


class NoSamples(KgrecError):
    pass


class CorruptSnapshot(KgrecError):
    pass


# evaluation
class EmptyTruth(KgrecError):
    pass


class NoQueries(KgrecError):
    pass


class TooFewUsers(KgrecError):
    pass


# configuration / data generation
class InvalidConfig(KgrecError):
    pass


class EmptyColumn(KgrecError):
    pass
