"""
Operation codes and the float primitives behind them

Every path that produces a number (graph evaluation, constant folding,
kernel execution, interval endpoints) goes through the functions in this
module, on float64 numpy arrays, so the paths agree bit for bit.
"""

import enum
from typing import Optional

import numpy as np

# Pow with a constant integer exponent up to this magnitude is evaluated by
# repeated multiplication.
MAX_FAST_EXPONENT = 64


class Op(enum.IntEnum):
    CONST = 0
    VAR = 1
    ADD = 2
    SUB = 3
    MUL = 4
    DIV = 5
    POW = 6
    NEG = 7
    EXP = 8
    LOG = 9
    SQRT = 10
    TANH = 11
    SIGMOID = 12
    ABS = 13
    MIN = 14
    MAX = 15
    PIECEWISE = 16


class Relation(str, enum.Enum):
    LT = "<"
    LE = "<="


UNARY_OPS = frozenset(
    {Op.NEG, Op.EXP, Op.LOG, Op.SQRT, Op.TANH, Op.SIGMOID, Op.ABS}
)
BINARY_OPS = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.POW, Op.MIN, Op.MAX})

ARITY = {Op.CONST: 0, Op.VAR: 0, Op.PIECEWISE: 2}
ARITY.update({op: 1 for op in UNARY_OPS})
ARITY.update({op: 2 for op in BINARY_OPS})

# Function names as they appear in the expression language.
FUNCTION_NAMES = {
    Op.EXP: "exp",
    Op.LOG: "log",
    Op.SQRT: "sqrt",
    Op.TANH: "tanh",
    Op.SIGMOID: "sigmoid",
    Op.ABS: "abs",
    Op.MIN: "min",
    Op.MAX: "max",
}

VIOLATIONS = {
    Op.DIV: "division by zero",
    Op.LOG: "log of non-positive value",
    Op.SQRT: "sqrt of negative value",
    Op.POW: "negative base with non-integer exponent or zero base with negative exponent",
}


def quiet():
    """Context manager silencing numpy floating point warnings."""
    return np.errstate(all="ignore")


def is_fast_exponent(value: float) -> bool:
    """True when ``value`` takes the repeated-multiplication Pow path."""
    return float(value).is_integer() and abs(value) <= MAX_FAST_EXPONENT


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


_UNARY = {
    Op.NEG: np.negative,
    Op.EXP: np.exp,
    Op.LOG: np.log,
    Op.SQRT: np.sqrt,
    Op.TANH: np.tanh,
    Op.SIGMOID: sigmoid,
    Op.ABS: np.abs,
}


def apply_unary(op: Op, x: np.ndarray) -> np.ndarray:
    return _UNARY[op](x)


def apply_binary(op: Op, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op == Op.ADD:
        return a + b
    if op == Op.SUB:
        return a - b
    if op == Op.MUL:
        return a * b
    if op == Op.DIV:
        return a / b
    if op == Op.POW:
        return np.power(a, b)
    if op == Op.MIN:
        return np.where(a <= b, a, b)
    if op == Op.MAX:
        return np.where(b <= a, a, b)
    raise ValueError(f"Not a binary operation: {op!r}")


def apply_powi(x: np.ndarray, n: int) -> np.ndarray:
    """x**n for integer n, by left-to-right repeated multiplication."""
    if n == 0:
        return np.ones_like(x)
    result = x
    for _ in range(abs(n) - 1):
        result = result * x
    if n < 0:
        return 1.0 / result
    return result


def compare(relation: Relation, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    if relation == Relation.LT:
        return left < right
    return left <= right


def unary_violation(op: Op, x: np.ndarray) -> Optional[np.ndarray]:
    """Boolean mask of elements outside the domain of ``op``, or None."""
    if op == Op.LOG:
        return x <= 0
    if op == Op.SQRT:
        return x < 0
    return None


def binary_violation(op: Op, a: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    if op == Op.DIV:
        return b == 0
    if op == Op.POW:
        with quiet():
            fractional = b != np.floor(b)
        return ((a < 0) & fractional) | ((a == 0) & (b < 0))
    return None


def powi_violation(x: np.ndarray, n: int) -> Optional[np.ndarray]:
    if n < 0:
        return x == 0
    return None
