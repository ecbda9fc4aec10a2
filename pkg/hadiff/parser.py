"""
Expression language front end: parsing, declarations and printing

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := unary ("^" factor)?
    unary  := "-" unary | atom
    atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

Unary minus binds tighter than ``^`` so ``-2^2`` is 4; ``^`` is
right-associative.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

from .core import ExprGraph, Role, VarSpec, topo_order
from .errors import ConstructionError, ParseError
from .ops import FUNCTION_NAMES, Op, Relation

logger = logging.getLogger(__name__)

# Nesting limit for parentheses, unary minus and right-nested powers.
MAX_DEPTH = 100

_TOKEN_RE = re.compile(
    r"""
    (?P<space>[ \t\r\f\v]+)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|[-+*/^(),<])
    """,
    re.VERBOSE,
)

_UNARY_FUNCTIONS = {
    "exp": Op.EXP,
    "log": Op.LOG,
    "sqrt": Op.SQRT,
    "tanh": Op.TANH,
    "sigmoid": Op.SIGMOID,
    "abs": Op.ABS,
}
_BINARY_FUNCTIONS = {"min": Op.MIN, "max": Op.MAX}
_ARITIES = {**{n: 1 for n in _UNARY_FUNCTIONS}, **{n: 2 for n in _BINARY_FUNCTIONS}}
_ARITIES.update(relu=1, piecewise=3)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


@dataclass(frozen=True)
class SourceExpr:
    """Expression text plus the variable declarations that go with it."""

    text: str
    declarations: Tuple[VarSpec, ...] = field(default_factory=tuple)


def tokenize(text: str) -> Iterator[Token]:
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        if kind == "newline":
            line, line_start = line + 1, match.end()
        elif kind != "space":
            yield Token(kind, match.group(), line, pos - line_start + 1)
        pos = match.end()
    yield Token("eof", "", line, pos - line_start + 1)


class _Parser:
    def __init__(self, text: str, graph: ExprGraph):
        self.tokens = list(tokenize(text))
        self.pos = 0
        self.depth = 0
        self.graph = graph

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: Optional[Token] = None) -> ParseError:
        token = token or self.current
        return ParseError(message, token.line, token.column)

    def accept(self, *texts: str) -> Optional[Token]:
        token = self.current
        if token.kind == "op" and token.text in texts:
            self.pos += 1
            return token
        return None

    def expect(self, text: str) -> Token:
        token = self.accept(text)
        if token is None:
            raise self.error(f"expected '{text}', found {_describe(self.current)}")
        return token

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error(f"expression nested deeper than {MAX_DEPTH} levels")

    def build(self, token: Token, method: str, *args) -> int:
        try:
            return getattr(self.graph, method)(*args)
        except ConstructionError as exc:
            raise self.error(str(exc), token) from None

    def parse(self) -> int:
        ref = self.expr()
        if self.current.kind != "eof":
            raise self.error(f"unexpected {_describe(self.current)}")
        return ref

    def expr(self) -> int:
        self.enter()
        left = self.term()
        while True:
            token = self.accept("+", "-")
            if token is None:
                break
            right = self.term()
            left = self.build(token, "add" if token.text == "+" else "sub", left, right)
        self.depth -= 1
        return left

    def term(self) -> int:
        left = self.factor()
        while True:
            token = self.accept("*", "/")
            if token is None:
                return left
            right = self.factor()
            left = self.build(token, "mul" if token.text == "*" else "div", left, right)

    def factor(self) -> int:
        base = self.unary()
        token = self.accept("^")
        if token is None:
            return base
        self.enter()
        exponent = self.factor()
        self.depth -= 1
        return self.build(token, "pow", base, exponent)

    def unary(self) -> int:
        token = self.accept("-")
        if token is None:
            return self.atom()
        self.enter()
        operand = self.unary()
        self.depth -= 1
        return self.build(token, "neg", operand)

    def atom(self) -> int:
        token = self.current
        if token.kind == "number":
            self.pos += 1
            value = float(token.text)
            if not math.isfinite(value):
                raise self.error(f"number out of range: {token.text}", token)
            return self.graph.const(value)
        if token.kind == "ident":
            self.pos += 1
            if self.accept("("):
                return self.call(token)
            if token.text in _ARITIES:
                raise self.error(f"function '{token.text}' must be called with arguments", token)
            return self.build(token, "var", token.text)
        if self.accept("("):
            ref = self.expr()
            self.expect(")")
            return ref
        raise self.error(f"unexpected {_describe(token)}")

    def call(self, name: Token) -> int:
        if name.text not in _ARITIES:
            raise self.error(f"unknown function '{name.text}'", name)
        if name.text == "piecewise":
            left, relation, right = self.condition()
            args = [left]
        else:
            args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        arity = _ARITIES[name.text]
        if len(args) != arity:
            raise self.error(
                f"function '{name.text}' takes {arity} argument(s), got {len(args)}", name
            )
        if name.text == "piecewise":
            return self.build(name, "piecewise", left, relation, right, args[1], args[2])
        if name.text == "relu":
            return self.build(name, "relu", args[0])
        if name.text in _UNARY_FUNCTIONS:
            return self.build(name, _UNARY_FUNCTIONS[name.text].name.lower(), args[0])
        return self.build(name, name.text, args[0], args[1])

    def condition(self) -> Tuple[int, Relation, int]:
        left = self.expr()
        token = self.accept("<", "<=")
        if token is None:
            raise self.error(f"expected '<' or '<=' in piecewise condition, found {_describe(self.current)}")
        right = self.expr()
        return left, Relation(token.text), right


def _describe(token: Token) -> str:
    if token.kind == "eof":
        return "end of input"
    return f"'{token.text}'"


def parse(
    src: Union[str, SourceExpr],
    declarations: Optional[Sequence[VarSpec]] = None,
    label: str = "f",
) -> ExprGraph:
    """
    Parse an expression into a new single-root graph.

    Parameters
    ----------
    src : str or SourceExpr
        Expression text, optionally bundled with declarations.
    declarations : sequence of VarSpec, optional
        Variables declared before parsing (roles and bounds). Identifiers
        not declared become unbounded feature variables.
    label : str, default "f"
        Label of the root.

    Returns
    -------
    ExprGraph
        Graph whose only root computes the expression.

    Raises
    ------
    ParseError
        Lexical or syntax error, unknown function, wrong argument count or an
        invalid constant (e.g. ``1/0``), located by 1-based line and column.
    """
    if isinstance(src, SourceExpr):
        text = src.text
        declarations = list(src.declarations) + list(declarations or [])
    else:
        text = src
    graph = ExprGraph(declarations or ())
    parser = _Parser(text, graph)
    try:
        root = parser.parse()
    except RecursionError:
        raise parser.error("expression nested too deeply") from None
    graph.add_root(root, label)
    logger.debug("Parsed %d node(s) from %d character(s)", len(graph), len(text))
    return graph


_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_DECLARATION_RE = re.compile(
    rf"""
    \s*(?:(?P<role>{'|'.join(r.value for r in Role)})\s+)?
    (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    (?:\s+in\s*\[\s*(?P<lo>{_NUMBER})\s*,\s*(?P<hi>{_NUMBER})\s*\])?
    \s*\Z
    """,
    re.VERBOSE,
)


def parse_declarations(text: str) -> List[VarSpec]:
    """
    Parse variable declarations, one per line.

    Each line reads ``[role] name [in [lo, hi]]``; ``#`` starts a comment and
    blank lines are ignored.

    Parameters
    ----------
    text : str
        Declaration source.

    Returns
    -------
    list of VarSpec
        Declarations in file order.
    """
    specs: List[VarSpec] = []
    seen: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        match = _DECLARATION_RE.match(line)
        if match is None:
            column = len(line) - len(line.lstrip()) + 1
            raise ParseError(f"invalid declaration: {line.strip()!r}", number, column)
        name = match.group("name")
        if name in seen:
            raise ParseError(
                f"variable '{name}' already declared on line {seen[name]}",
                number,
                match.start("name") + 1,
            )
        bounds = None
        if match.group("lo") is not None:
            lo, hi = float(match.group("lo")), float(match.group("hi"))
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ParseError(f"invalid bounds [{lo}, {hi}] for '{name}'", number, match.start("lo") + 1)
            bounds = (lo, hi)
        specs.append(VarSpec(name, Role(match.group("role") or Role.FEATURE), bounds))
        seen[name] = number
    return specs


def load_declarations(path: Union[str, Path]) -> List[VarSpec]:
    """Read declarations from a file (see :func:`parse_declarations`)."""
    return parse_declarations(Path(path).read_text(encoding="utf-8"))


# Printing precedence: higher binds tighter.
_PREC = {Op.ADD: 1, Op.SUB: 1, Op.MUL: 2, Op.DIV: 2, Op.POW: 3, Op.NEG: 4}
_ATOM = 5
_INFIX = {Op.ADD: " + ", Op.SUB: " - ", Op.MUL: "*", Op.DIV: "/", Op.POW: "^"}


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    if value == 0.0:
        return "-0" if math.copysign(1.0, value) < 0 else "0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _wrap(part: Tuple[str, int], needs_parens: bool) -> str:
    return f"({part[0]})" if needs_parens else part[0]


def print_expr(graph: ExprGraph, root: int) -> str:
    """
    Render ``root`` as expression text with minimal parentheses.

    ``+`` and ``-`` get surrounding spaces, ``*``, ``/`` and ``^`` do not.
    Parsing the result yields a graph that evaluates bit-identically.
    """
    rendered: Dict[int, Tuple[str, int]] = {}
    for ref in topo_order(graph, root):
        node = graph.nodes[ref]
        op = node.op
        if op == Op.CONST:
            text = format_number(node.value)
            rendered[ref] = (text, _PREC[Op.NEG] if text.startswith("-") else _ATOM)
        elif op == Op.VAR:
            rendered[ref] = (node.var, _ATOM)
        elif op == Op.NEG:
            operand = rendered[node.children[0]]
            rendered[ref] = ("-" + _wrap(operand, operand[1] < _PREC[Op.NEG]), _PREC[Op.NEG])
        elif op == Op.POW:
            base, exponent = (rendered[c] for c in node.children)
            text = _wrap(base, base[1] <= _PREC[Op.POW]) + "^" + _wrap(exponent, exponent[1] < _PREC[Op.POW])
            rendered[ref] = (text, _PREC[Op.POW])
        elif op in _INFIX:
            prec = _PREC[op]
            left, right = (rendered[c] for c in node.children)
            text = _wrap(left, left[1] < prec) + _INFIX[op] + _wrap(right, right[1] <= prec)
            rendered[ref] = (text, prec)
        elif op == Op.PIECEWISE:
            rendered[ref] = (_print_piecewise(graph, node, rendered), _ATOM)
        else:
            args = ", ".join(rendered[c][0] for c in node.children)
            rendered[ref] = (f"{FUNCTION_NAMES[op]}({args})", _ATOM)
    return rendered[root][0]


def _print_piecewise(graph: ExprGraph, node, rendered) -> str:
    left, relation, right = node.guard
    then, otherwise = node.children
    zero = graph.nodes[right]
    if (
        relation == Relation.LE
        and left == otherwise
        and then == right
        and zero.op == Op.CONST
        and zero.value == 0.0
        and math.copysign(1.0, zero.value) > 0
    ):
        return f"relu({rendered[left][0]})"
    return (
        f"piecewise({rendered[left][0]} {relation.value} {rendered[right][0]}, "
        f"{rendered[then][0]}, {rendered[otherwise][0]})"
    )
