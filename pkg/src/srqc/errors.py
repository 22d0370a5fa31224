"""Exception hierarchy shared by all modules."""


class SRQCError(Exception):
    """Base class for every error raised by the package."""


class ParseError(SRQCError):
    def __init__(self, message, offset=None, text=None):
        self.offset = offset
        self.text = text
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class DomainError(SRQCError, ArithmeticError):
    """Evaluation left the domain of an expression (log/sqrt/division)."""


class DifferentiationError(SRQCError):
    pass


class NotBracketGenerating(SRQCError):
    pass


class FlagTransition(SRQCError):
    """The point sits where the growth vector jumps; Popp's measure is undefined there."""


class CharacteristicPoint(SRQCError):
    pass


class OutsideTube(SRQCError):
    def __init__(self, message, upper_bound=None):
        self.upper_bound = upper_bound
        super().__init__(message)


class ModelError(SRQCError):
    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class NotOnSurface(SRQCError, ValueError):
    pass
