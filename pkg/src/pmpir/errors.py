"""Exception hierarchy shared by every layer of the package."""


class PmPirError(Exception):
    """Base class for all errors raised by pmpir."""


# field / linear algebra
class CompositeModulus(PmPirError, ValueError):
    pass


class DivisionByZero(PmPirError, ZeroDivisionError):
    pass


class DuplicatePoints(PmPirError, ValueError):
    pass


class SingularMatrix(PmPirError, ArithmeticError):
    pass


# codes
class DimTooLarge(PmPirError, ValueError):
    pass


class LengthMismatch(PmPirError, ValueError):
    pass


class SizeMismatch(PmPirError, ValueError):
    pass


class NotInformationSet(PmPirError, ArithmeticError):
    pass


class InvalidGeometry(PmPirError, ValueError):
    pass


class FieldTooSmall(PmPirError, ValueError):
    pass


class InvariantViolation(PmPirError, ValueError):
    pass


class NotEnoughShares(PmPirError, ValueError):
    pass


class BadSubset(PmPirError, ValueError):
    pass


class NotEnoughHelpers(PmPirError, ValueError):
    pass


class HelperOverlap(PmPirError, ValueError):
    pass


# PIR protocols
class BadFileIndex(PmPirError, IndexError):
    pass


class MissingResponses(PmPirError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DecodeFailure(PmPirError, ArithmeticError):
    pass


class ConstraintViolated(PmPirError, ValueError):
    pass


class NoNestedSets(PmPirError, ArithmeticError):
    pass


class PlanInfeasible(PmPirError, ValueError):
    pass


# storage simulation
class CorruptStore(PmPirError, OSError):
    pass


class HeaderMismatch(PmPirError, ValueError):
    pass


class MalformedFrame(PmPirError, ValueError):
    pass
