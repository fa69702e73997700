"""Error taxonomy shared by every module.

Three failure classes, chosen so the CLI can map them onto exit codes:

* InvalidInputError   -- malformed arguments or config (CLI exit 2)
* DegenerateInputError -- structurally valid input that admits no answer,
  e.g. a single-class label set or an all-zero probability mass (CLI exit 3)
* NumericDomainError  -- arithmetic left its documented domain (CLI exit 2)
"""


class InvalidInputError(ValueError):
    """Raised when an argument fails validation."""


class DegenerateInputError(ValueError):
    """Raised when the input is well-formed but the quantity is undefined on it."""


class NumericDomainError(ArithmeticError):
    """Raised when a computation would leave its numeric domain (log of zero mass, etc.)."""
