"""
Core expression graph for hadiff

Expressions are scalar, per-individual and stored as a hash-consed DAG in an
append-only arena. Node references are plain integer indices into
``ExprGraph.nodes``.
"""

import enum
import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConstructionError, DomainError, UnboundVariableError
from .interval import BoundsLike, Interval, as_interval
from .ops import (
    ARITY,
    BINARY_OPS,
    UNARY_OPS,
    VIOLATIONS,
    Op,
    Relation,
    apply_binary,
    apply_powi,
    apply_unary,
    binary_violation,
    compare,
    is_fast_exponent,
    powi_violation,
    quiet,
    unary_violation,
)

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

Guard = Tuple[int, Relation, int]
Roots = Union[int, Sequence[int]]


class Role(str, enum.Enum):
    FEATURE = "feature"
    WEIGHT = "weight"
    BIAS = "bias"
    TARGET = "target"
    HYPER = "hyper"


@dataclass(frozen=True)
class VarSpec:
    """A named abstract input with an optional finite interval of values."""

    name: str
    role: Role = Role.FEATURE
    bounds: Optional[Interval] = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not _NAME_RE.match(self.name):
            raise ConstructionError(f"Invalid variable name: {self.name!r}")
        object.__setattr__(self, "role", Role(self.role))
        if self.bounds is not None:
            bounds = as_interval(self.bounds)
            if not bounds.is_finite:
                raise ConstructionError(f"Bounds for '{self.name}' must be finite")
            object.__setattr__(self, "bounds", bounds)

    @property
    def is_parameter(self) -> bool:
        return self.role in (Role.WEIGHT, Role.BIAS)


@dataclass(frozen=True)
class ExprNode:
    op: Op
    children: Tuple[int, ...] = ()
    value: Optional[float] = None
    var: Optional[str] = None
    guard: Optional[Guard] = None

    @property
    def operands(self) -> Tuple[int, ...]:
        """Children followed by the guard's operands, in evaluation order."""
        if self.guard is None:
            return self.children
        return self.children + (self.guard[0], self.guard[2])

    @property
    def is_const(self) -> bool:
        return self.op == Op.CONST

    def key(self) -> tuple:
        if self.op == Op.CONST:
            # 0.0 and -0.0 hash alike but are different constants
            return (self.op, self.value, math.copysign(1.0, self.value))
        return (self.op, self.children, self.var, self.guard)


class ExprGraph:
    """Append-only arena of hash-consed expression nodes.

    Parameters
    ----------
    vars : iterable of VarSpec, optional
        Variables to declare up front, in order.
    """

    def __init__(self, vars: Optional[Iterable[VarSpec]] = None):
        self.nodes: List[ExprNode] = []
        self.roots: List[int] = []
        self.root_labels: List[str] = []
        self._index: Dict[tuple, int] = {}
        self._vars: Dict[str, VarSpec] = {}
        self._frozen = False
        for spec in vars or ():
            self.declare(spec.name, spec.role, spec.bounds)

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return (
            f"ExprGraph(nodes={len(self.nodes)}, vars={self.var_names}, "
            f"roots={dict(zip(self.root_labels, self.roots))})"
        )

    @property
    def vars(self) -> List[VarSpec]:
        return list(self._vars.values())

    @property
    def var_names(self) -> List[str]:
        return list(self._vars)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def spec(self, name: str) -> VarSpec:
        try:
            return self._vars[name]
        except KeyError:
            raise ConstructionError(
                f"Variable '{name}' not found. Available variables: {self.var_names}"
            ) from None

    def has_var(self, name: str) -> bool:
        return name in self._vars

    def node(self, ref: int) -> ExprNode:
        return self.nodes[ref]

    def freeze(self) -> "ExprGraph":
        self._frozen = True
        return self

    def copy(self) -> "ExprGraph":
        """Mutable copy sharing no state; node references stay valid."""
        other = ExprGraph()
        other.nodes = list(self.nodes)
        other.roots = list(self.roots)
        other.root_labels = list(self.root_labels)
        other._index = dict(self._index)
        other._vars = dict(self._vars)
        return other

    def _check_mutable(self):
        if self._frozen:
            raise ConstructionError("Graph is frozen; use copy() to obtain a mutable graph")

    # -- variables and roots ------------------------------------------------

    def declare(
        self,
        name: str,
        role: Union[Role, str] = Role.FEATURE,
        bounds: Optional[BoundsLike] = None,
    ) -> int:
        """Declare a variable (idempotent for an identical spec) and return its node."""
        spec = VarSpec(name, Role(role), bounds)
        existing = self._vars.get(name)
        if existing is not None and existing != spec:
            raise ConstructionError(f"Variable '{name}' already declared as {existing}")
        if existing is None:
            self._check_mutable()
            self._vars[name] = spec
        return intern(self, Op.VAR, var=name)

    def var(self, name: str) -> int:
        """Node for ``name``, declaring an unbounded feature if it is new."""
        if name in self._vars:
            return intern(self, Op.VAR, var=name)
        return self.declare(name)

    def add_root(self, ref: int, label: Optional[str] = None) -> int:
        self._check_mutable()
        self._check_ref(ref)
        label = label if label is not None else f"root{len(self.roots)}"
        if label in self.root_labels:
            raise ConstructionError(f"Duplicate root label: '{label}'")
        self.roots.append(ref)
        self.root_labels.append(label)
        return ref

    def root(self, label: Optional[str] = None) -> int:
        """The first root, or the root carrying ``label``."""
        if not self.roots:
            raise ValueError("Graph has no roots")
        if label is None:
            return self.roots[0]
        if label not in self.root_labels:
            raise ValueError(f"Root '{label}' not found. Available roots: {self.root_labels}")
        return self.roots[self.root_labels.index(label)]

    def support(self, root: Roots) -> List[str]:
        """Names of the variables reachable from ``root``, in declaration order."""
        reached = {self.nodes[ref].var for ref in topo_order(self, root)}
        return [name for name in self._vars if name in reached]

    def _check_ref(self, ref: int):
        if not isinstance(ref, (int, np.integer)) or not 0 <= ref < len(self.nodes):
            raise ConstructionError(f"Unknown node reference: {ref!r}")

    # -- builders -------------------------------------------------------------

    def const(self, value: float) -> int:
        return intern(self, Op.CONST, value=value)

    def add(self, a: int, b: int) -> int:
        return intern(self, Op.ADD, (a, b))

    def sub(self, a: int, b: int) -> int:
        return intern(self, Op.SUB, (a, b))

    def mul(self, a: int, b: int) -> int:
        return intern(self, Op.MUL, (a, b))

    def div(self, a: int, b: int) -> int:
        return intern(self, Op.DIV, (a, b))

    def pow(self, a: int, b: int) -> int:
        return intern(self, Op.POW, (a, b))

    def neg(self, a: int) -> int:
        return intern(self, Op.NEG, (a,))

    def exp(self, a: int) -> int:
        return intern(self, Op.EXP, (a,))

    def log(self, a: int) -> int:
        return intern(self, Op.LOG, (a,))

    def sqrt(self, a: int) -> int:
        return intern(self, Op.SQRT, (a,))

    def tanh(self, a: int) -> int:
        return intern(self, Op.TANH, (a,))

    def sigmoid(self, a: int) -> int:
        return intern(self, Op.SIGMOID, (a,))

    def abs(self, a: int) -> int:
        return intern(self, Op.ABS, (a,))

    def min(self, a: int, b: int) -> int:
        return intern(self, Op.MIN, (a, b))

    def max(self, a: int, b: int) -> int:
        return intern(self, Op.MAX, (a, b))

    def piecewise(
        self,
        left: int,
        relation: Union[Relation, str],
        right: int,
        then: int,
        otherwise: int,
    ) -> int:
        """``then`` where ``left relation right`` holds, ``otherwise`` elsewhere."""
        return intern(
            self, Op.PIECEWISE, (then, otherwise), guard=(left, Relation(relation), right)
        )

    def relu(self, a: int) -> int:
        zero = self.const(0.0)
        return self.piecewise(a, Relation.LE, zero, zero, a)


def _const_value(graph: ExprGraph, ref: int) -> Optional[float]:
    node = graph.nodes[ref]
    return node.value if node.op == Op.CONST else None


def fast_exponent(graph: ExprGraph, node: ExprNode) -> Optional[int]:
    """The integer exponent of a Pow node that takes the multiplication path."""
    if node.op != Op.POW:
        return None
    value = _const_value(graph, node.children[1])
    if value is not None and is_fast_exponent(value):
        return int(value)
    return None


def apply_node(
    graph: ExprGraph, node: ExprNode, args: Sequence[np.ndarray]
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Apply a non-leaf, non-Piecewise node to operand arrays.

    Returns the result and a boolean mask of domain violations (or None).
    """
    op = node.op
    with quiet():
        if op in UNARY_OPS:
            return apply_unary(op, args[0]), unary_violation(op, args[0])
        n = fast_exponent(graph, node)
        if n is not None:
            return apply_powi(args[0], n), powi_violation(args[0], n)
        return apply_binary(op, args[0], args[1]), binary_violation(op, args[0], args[1])


def _fold(graph: ExprGraph, node: ExprNode, strict: bool) -> Optional[float]:
    args = [np.array([graph.nodes[c].value]) for c in node.children]
    result, violation = apply_node(graph, node, args)
    value = float(result[0])
    problem = None
    if violation is not None and violation[0]:
        problem = VIOLATIONS[node.op]
        if node.op == Op.DIV or (node.op == Op.POW and args[1][0] < 0 and args[0][0] == 0):
            problem = "division by zero constant"
    elif not math.isfinite(value):
        problem = f"non-finite constant from {node.op.name.lower()}"
    if problem is None:
        return value
    if strict:
        raise ConstructionError(problem)
    return None


def intern(
    graph: ExprGraph,
    op: Op,
    children: Sequence[int] = (),
    *,
    value: Optional[float] = None,
    var: Optional[str] = None,
    guard: Optional[Guard] = None,
    strict: bool = True,
) -> int:
    """Return the node for ``op(children)``, appending it only if it is new.

    Parameters
    ----------
    graph : ExprGraph
        Graph to intern into.
    op : Op
        Operation of the node.
    children : sequence of int
        Operand references, already interned in ``graph``.
    value : float, optional
        Constant value (``Op.CONST`` only).
    var : str, optional
        Variable name (``Op.VAR`` only); must be declared in ``graph``.
    guard : (int, Relation, int), optional
        Comparison selecting child 0 when true (``Op.PIECEWISE`` only).
    strict : bool, default True
        When False, constant folds that would fail (division by zero, log of a
        non-positive constant, ...) leave the node unfolded instead of raising.

    Returns
    -------
    int
        Reference of the (possibly pre-existing or folded) node.
    """
    op = Op(op)
    children = tuple(int(c) for c in children)
    if len(children) != ARITY[op]:
        raise ConstructionError(
            f"{op.name} takes {ARITY[op]} operand(s), got {len(children)}"
        )
    for ref in children:
        graph._check_ref(ref)
    if (guard is not None) != (op == Op.PIECEWISE):
        raise ConstructionError("A guard is required for PIECEWISE and only for PIECEWISE")

    if op == Op.CONST:
        if value is None or not math.isfinite(value):
            raise ConstructionError(f"Constants must be finite, got {value!r}")
        node = ExprNode(op, value=float(value))
    elif op == Op.VAR:
        if var not in graph._vars:
            raise ConstructionError(f"Variable '{var}' is not declared")
        node = ExprNode(op, var=var)
    elif op == Op.PIECEWISE:
        left, relation, right = guard
        graph._check_ref(left)
        graph._check_ref(right)
        node = ExprNode(op, children, guard=(int(left), Relation(relation), int(right)))
        lv, rv = _const_value(graph, left), _const_value(graph, right)
        if lv is not None and rv is not None:
            taken = compare(node.guard[1], np.array([lv]), np.array([rv]))[0]
            return children[0] if taken else children[1]
    else:
        node = ExprNode(op, children)
        if all(graph.nodes[c].op == Op.CONST for c in children):
            folded = _fold(graph, node, strict)
            if folded is not None:
                return intern(graph, Op.CONST, value=folded)

    key = node.key()
    ref = graph._index.get(key)
    if ref is not None:
        return ref
    graph._check_mutable()
    graph.nodes.append(node)
    ref = len(graph.nodes) - 1
    graph._index[key] = ref
    return ref


def topo_order(graph: ExprGraph, roots: Roots) -> List[int]:
    """Nodes reachable from ``roots``, every node after all of its operands.

    Depth-first post-order over ``ExprNode.operands``; deterministic for a
    given graph.
    """
    if isinstance(roots, (int, np.integer)):
        roots = [roots]
    seen = set()
    order: List[int] = []
    for root in roots:
        if root in seen:
            continue
        seen.add(root)
        stack = [(root, 0)]
        while stack:
            ref, position = stack[-1]
            operands = graph.nodes[ref].operands
            if position < len(operands):
                stack[-1] = (ref, position + 1)
                child = operands[position]
                if child not in seen:
                    seen.add(child)
                    stack.append((child, 0))
            else:
                stack.pop()
                order.append(ref)
    return order


def parents(graph: ExprGraph, roots: Roots) -> Dict[int, List[int]]:
    """Map each reachable node to the reachable nodes that use it."""
    result: Dict[int, List[int]] = {}
    for ref in topo_order(graph, roots):
        result.setdefault(ref, [])
        for child in graph.nodes[ref].operands:
            if ref not in result[child]:
                result[child].append(ref)
    return result


def evaluate(graph: ExprGraph, root: int, assignment: Mapping[str, float]) -> float:
    """Evaluate ``root`` under ``assignment`` in IEEE double precision.

    Piecewise nodes evaluate their guard and then exactly one branch, so
    domain errors in the branch not taken are never raised.

    Raises
    ------
    UnboundVariableError
        A variable reachable from ``root`` has no value.
    DomainError
        An operation is applied outside its domain; carries the node.
    """
    values: Dict[int, np.ndarray] = {}
    stack = [root]
    while stack:
        ref = stack[-1]
        if ref in values:
            stack.pop()
            continue
        node = graph.nodes[ref]
        if node.op == Op.PIECEWISE:
            left, relation, right = node.guard
            if left in values and right in values:
                taken = compare(relation, values[left], values[right])[0]
                needed = [node.children[0] if taken else node.children[1]]
            else:
                needed = [left, right]
        else:
            needed = list(node.children)
        missing = [c for c in needed if c not in values]
        if missing:
            stack.extend(reversed(missing))
            continue
        stack.pop()
        values[ref] = _evaluate_node(graph, ref, node, values, assignment, needed)
    return float(values[root][0])


def _evaluate_node(graph, ref, node, values, assignment, needed) -> np.ndarray:
    if node.op == Op.CONST:
        return np.array([node.value])
    if node.op == Op.VAR:
        if node.var not in assignment:
            raise UnboundVariableError(node.var)
        return np.array([float(assignment[node.var])])
    if node.op == Op.PIECEWISE:
        return values[needed[0]]
    result, violation = apply_node(graph, node, [values[c] for c in node.children])
    if violation is not None and violation[0]:
        raise DomainError(VIOLATIONS[node.op], node=ref)
    return result


def rebuild(
    source: ExprGraph,
    roots: Sequence[int],
    *,
    bindings: Optional[Mapping[str, float]] = None,
    labels: Optional[Sequence[str]] = None,
    rewrite: Optional[Callable[[ExprGraph, int], int]] = None,
) -> Tuple[ExprGraph, List[int]]:
    """Copy the nodes reachable from ``roots`` into a fresh graph.

    Variables named in ``bindings`` become constants and are dropped from the
    new graph's variables; the remaining variables keep their order and
    specs. Constant subterms created by a binding are folded leniently, so a
    fold that would fail stays in the graph and fails at evaluation.

    Returns
    -------
    (ExprGraph, list of int)
        The new graph (roots registered under ``labels``) and the new root refs.
    """
    bindings = dict(bindings or {})
    target = ExprGraph(spec for spec in source.vars if spec.name not in bindings)
    mapping: Dict[int, int] = {}
    for ref in topo_order(source, roots):
        node = source.nodes[ref]
        if node.op == Op.CONST:
            new = target.const(node.value)
        elif node.op == Op.VAR:
            if node.var in bindings:
                new = target.const(float(bindings[node.var]))
            else:
                new = intern(target, Op.VAR, var=node.var)
        else:
            guard = None
            if node.guard is not None:
                guard = (mapping[node.guard[0]], node.guard[1], mapping[node.guard[2]])
            children = [mapping[c] for c in node.children]
            new = intern(target, node.op, children, guard=guard, strict=False)
        if rewrite is not None:
            new = rewrite(target, new)
        mapping[ref] = new
    new_roots = [mapping[r] for r in roots]
    if labels is None:
        labels = [f"root{i}" for i in range(len(new_roots))]
    for ref, label in zip(new_roots, labels):
        target.add_root(ref, label)
    return target, new_roots
