class BayesODError(Exception):
    """Base class for library errors."""


class ValidationError(BayesODError, ValueError):
    """Input failed a domain invariant (bad box, wrong shape, non-finite logits)."""


class NumericalError(BayesODError, ArithmeticError):
    """A covariance failed Cholesky even after the allowed repair."""


class ParseError(ValidationError):
    """Malformed or inconsistent JSON-Lines input."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
