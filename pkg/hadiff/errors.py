"""
Exception types raised by hadiff

Every error derives from both ``HadiffError`` and ``ValueError`` so callers
can catch invalid input the same way for every function in the package.
"""

from typing import Any, Dict, Optional, Sequence, Tuple


class HadiffError(ValueError):
    """Base class for all hadiff errors."""


class ConstructionError(HadiffError):
    """An expression node could not be built (bad arity, invalid constant fold)."""


class UnboundVariableError(HadiffError):
    """An evaluation was asked for without a value for some variable."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unbound variable '{name}'")


class DomainError(HadiffError):
    """A node was evaluated outside the domain of its operation."""

    def __init__(self, message: str, node: Optional[int] = None):
        self.node = node
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)


class ParseError(HadiffError):
    """Lexical or syntax error with a 1-based source location."""

    def __init__(self, message: str, line: int, column: int):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


class KernelDomainError(HadiffError):
    """A kernel hit a domain error while executing one row of a batch."""

    def __init__(self, message: str, row: int, instruction: int):
        self.row = row
        self.instruction = instruction
        super().__init__(f"row {row}, instruction {instruction}: {message}")


class KernelFormatError(HadiffError):
    """A kernel artifact could not be decoded."""


class IntervalDomainError(HadiffError):
    """Interval propagation reached an operation whose domain the box violates."""

    def __init__(
        self,
        message: str,
        node: Optional[int] = None,
        box: Optional[Dict[str, Tuple[float, float]]] = None,
    ):
        self.reason = message
        self.node = node
        self.box = box
        if node is not None:
            message = f"{message} at node {node}"
        if box:
            message = f"{message} on box {_format_box(box)}"
        super().__init__(message)


class UnboundedVariablesError(HadiffError):
    """Some variables in an expression have no bounds to analyse it with."""

    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        super().__init__(f"Missing bounds for variables: {', '.join(self.names)}")


class NotLipschitzError(HadiffError):
    """The gradient norm is unbounded (or undefined) somewhere on the box."""

    def __init__(self, cause: IntervalDomainError):
        self.cause = cause
        self.node = cause.node
        self.box = cause.box
        super().__init__(f"not locally Lipschitz on box: {cause}")


class DataBoundsError(HadiffError):
    """Dataset rows fall outside the declared input box."""

    def __init__(self, rows: Sequence[int], detail: str = ""):
        self.rows = list(rows)
        shown = ", ".join(str(r) for r in self.rows[:20])
        if len(self.rows) > 20:
            shown += f", ... ({len(self.rows)} rows)"
        message = f"Rows outside the declared input box: {shown}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


def _format_box(box: Dict[str, Any]) -> str:
    parts = [f"{name} in [{lo:g}, {hi:g}]" for name, (lo, hi) in box.items()]
    return "{" + ", ".join(parts) + "}"
