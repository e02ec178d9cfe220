"""Exception types raised across the package."""


class QnlpError(Exception):
    """Base class for all library errors."""


class ShapeError(QnlpError, ValueError):
    """Operand extents do not conform."""


class DomainError(QnlpError, ArithmeticError):
    """Value outside the domain of an operation (e.g. normalizing a zero quaternion)."""


class GraphError(QnlpError):
    """A node was used on a tape it does not belong to."""


class ContractError(QnlpError, ValueError):
    """A documented precondition was violated."""


class VocabError(QnlpError, IndexError):
    """Token id outside the embedding table or vocabulary."""


class ConfigError(QnlpError, ValueError):
    """Invalid training / model configuration field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
