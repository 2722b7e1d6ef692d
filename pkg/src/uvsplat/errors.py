"""Exception taxonomy. Exit-code mapping lives in the CLI: validation and
format problems exit 1, numerical failures exit 2."""


class UvsplatError(Exception):
    """Base class for all library errors."""


class ValidationError(UvsplatError):
    """An input violated a documented invariant or precondition."""


class FormatError(UvsplatError):
    """A file could not be parsed. Carries a line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ContractError(UvsplatError):
    """An API was used outside its contract (e.g. backward without a
    retained forward pass)."""


class NumericalError(UvsplatError):
    """A computation produced non-finite values or diverged."""
