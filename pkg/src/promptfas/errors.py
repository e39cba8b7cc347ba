"""Exception taxonomy shared by every module.

CLI exit-code mapping: ShapeError / DomainError / ConfigError / ContractError /
ParseError exit 1, NumericalError exits 2.
"""


class PromptFasError(Exception):
    pass


class ShapeError(PromptFasError, ValueError):
    """Tensor extents disagree with an operation's contract."""


class DomainError(PromptFasError, ValueError):
    """A numeric argument is outside its valid range (e.g. temperature <= 0)."""


class ConfigError(PromptFasError, ValueError):
    """Invalid or inconsistent run configuration."""


class ContractError(PromptFasError, RuntimeError):
    """A caller violated an API precondition (e.g. empty score list)."""


class NumericalError(PromptFasError, ArithmeticError):
    """A computation produced non-finite values."""


class ParseError(PromptFasError, ValueError):
    """A structured input file could not be parsed."""


class NumericalWarning(UserWarning):
    """Emitted when a computation had to floor a degenerate quantity."""
