"""Exception hierarchy shared by all modules."""


class CovertSimError(Exception):
    pass


class ConfigurationError(CovertSimError, ValueError):
    """Shapes or parameters that cannot be composed."""


class NumericError(CovertSimError, ArithmeticError):
    def __init__(self, message, layer=None, epoch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class FormatError(CovertSimError, ValueError):
    """Malformed, truncated or version-mismatched file."""


class DomainError(CovertSimError, ValueError):
    """Argument outside the operation's domain."""


class CapacityError(CovertSimError, ValueError):
    """Input corpus too small for the requested construction."""


class CorpusError(CovertSimError, ValueError):
    pass


class ParseError(DomainError):
    pass


class NotFoundError(CovertSimError, LookupError):
    pass


class AuthError(CovertSimError, PermissionError):
    pass


class ForbiddenError(CovertSimError, PermissionError):
    pass


class RequestError(CovertSimError, ValueError):
    pass


class ProtocolError(CovertSimError):
    pass


class NoRendezvousError(CovertSimError, LookupError):
    pass


class CollisionFailure(CovertSimError):
    pass


class UsageError(CovertSimError, ValueError):
    pass
