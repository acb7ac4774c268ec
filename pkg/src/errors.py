""" Exceptions raised by lockweaver

Every error derives from ValueError so callers that only care about bad input
can keep catching that. The ``exit_code`` attribute is what the command line
tools return when the error escapes.
"""


class LockweaverError(ValueError):
    """ Base class for all lockweaver errors """
    exit_code = 2


class ParseError(LockweaverError):
    """ Syntax or declaration error in a library source

    Parameters
    ----------
    message: str
        Description of the problem
    line, column: int, optional
        Position in the source text
    """

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)


class LibraryError(LockweaverError):
    """ A library violates a structural invariant """


class AnnotationError(LockweaverError):
    """ Proof annotations are missing or malformed """


class ObligationError(LockweaverError):
    """ A library invariant is not re-established before exit """
    exit_code = 1


class ProofNotFound(LockweaverError):
    """ Proof inference failed for the given seeds """
    exit_code = 1


class ClosureDiverged(LockweaverError):
    """ Basis closure exceeded its bound

    Parameters
    ----------
    message: str
        Description of the problem
    trace: list
        The predicates added at the vertex that grew past the bound
    """
    exit_code = 3

    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)


class BudgetExceeded(LockweaverError):
    """ An enumeration budget was exhausted """
    exit_code = 3
