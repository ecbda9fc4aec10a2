"""
Interval bound propagation over expression graphs
"""

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Union

from . import interval as iv
from .core import ExprGraph, ExprNode, fast_exponent, topo_order
from .errors import IntervalDomainError, UnboundedVariablesError
from .interval import Box, BoundsLike, Interval
from .ops import Op, Relation

logger = logging.getLogger(__name__)

BoxLike = Union[Box, Mapping[str, BoundsLike]]


def resolve_box(
    graph: ExprGraph, roots: Union[int, Sequence[int]], box: Optional[BoxLike] = None
) -> Box:
    """
    Bounds for every variable reachable from ``roots``.

    Entries of ``box`` win; variables it does not mention fall back to their
    declared bounds.

    Raises
    ------
    UnboundedVariablesError
        Some reachable variable has neither a box entry nor declared bounds.
    """
    given = box if isinstance(box, Box) else Box(box or {})
    resolved: Dict[str, Interval] = {}
    missing: List[str] = []
    for name in graph.support(roots):
        if name in given:
            resolved[name] = given[name]
        elif graph.spec(name).bounds is not None:
            resolved[name] = graph.spec(name).bounds
        else:
            missing.append(name)
    if missing:
        raise UnboundedVariablesError(missing)
    return Box(resolved)


def _decide(relation: Relation, left: Interval, right: Interval) -> Optional[bool]:
    """Guard outcome shared by every point of the box, or None if it varies."""
    if relation == Relation.LT:
        if left.hi < right.lo:
            return True
        if left.lo >= right.hi:
            return False
    else:
        if left.hi <= right.lo:
            return True
        if left.lo > right.hi:
            return False
    return None


_UNARY = {
    Op.NEG: lambda x: -x,
    Op.EXP: iv.exp,
    Op.LOG: iv.log,
    Op.SQRT: iv.sqrt,
    Op.TANH: iv.tanh,
    Op.SIGMOID: iv.sigmoid,
    Op.ABS: iv.absolute,
}

_BINARY = {
    Op.ADD: lambda a, b: a + b,
    Op.SUB: lambda a, b: a - b,
    Op.MUL: lambda a, b: a * b,
    Op.DIV: lambda a, b: a / b,
    Op.POW: iv.power,
    Op.MIN: iv.minimum,
    Op.MAX: iv.maximum,
}


def _node_interval(
    graph: ExprGraph, node: ExprNode, values: Mapping[int, Interval], box: Box
) -> Interval:
    if node.op == Op.CONST:
        return Interval.point(node.value)
    if node.op == Op.VAR:
        return box[node.var]
    if node.op in _UNARY:
        return _UNARY[node.op](values[node.children[0]])
    n = fast_exponent(graph, node)
    if n is not None:
        return iv.power_int(values[node.children[0]], n)
    a, b = (values[c] for c in node.children)
    return _BINARY[node.op](a, b)


def enclose(
    graph: ExprGraph, roots: Union[int, Sequence[int]], box: Optional[BoxLike] = None
) -> Dict[int, Interval]:
    """
    Intervals for the nodes needed to bound ``roots`` over ``box``.

    Piecewise nodes whose guard is decided by the box only visit the live
    branch, so nodes of dead branches are absent from the result.

    Parameters
    ----------
    graph : ExprGraph
        Graph holding ``roots``.
    roots : int or sequence of int
        Nodes to bound.
    box : Box or mapping, optional
        Variable bounds; missing entries fall back to declared bounds.

    Returns
    -------
    dict
        Node reference to enclosing Interval.

    Raises
    ------
    IntervalDomainError
        Some node may leave its domain on the box; names the node and box.
    UnboundedVariablesError
        A reachable variable has no bounds.
    """
    if isinstance(roots, int):
        roots = [roots]
    box = resolve_box(graph, roots, box)
    values: Dict[int, Interval] = {}
    stack = list(reversed(roots))
    while stack:
        ref = stack[-1]
        if ref in values:
            stack.pop()
            continue
        node = graph.nodes[ref]
        needed = list(node.children)
        if node.op == Op.PIECEWISE:
            left, relation, right = node.guard
            needed = [left, right]
            if left in values and right in values:
                live = _decide(relation, values[left], values[right])
                if live is not None:
                    needed = [node.children[0] if live else node.children[1]]
                else:
                    needed = list(node.children)
        missing = [c for c in needed if c not in values]
        if missing:
            stack.extend(reversed(missing))
            continue
        stack.pop()
        try:
            if node.op == Op.PIECEWISE:
                if len(needed) == 1:
                    values[ref] = values[needed[0]]
                else:
                    values[ref] = values[needed[0]].hull(values[needed[1]])
            else:
                values[ref] = _node_interval(graph, node, values, box)
        except IntervalDomainError as exc:
            raise IntervalDomainError(exc.reason, node=ref, box=box.as_dict()) from None
    return values


def propagate_bounds(graph: ExprGraph, root: int, box: Optional[BoxLike] = None) -> Interval:
    """
    Sound enclosure of ``root`` over a box of its variables.

    Every floating-point ``evaluate(graph, root, point)`` with ``point`` in the
    box lies in the returned interval. Integer powers are exact (even powers
    of a sign-changing interval start at 0) and a Piecewise node contributes
    only its live branch when the box decides its guard, else the hull of
    both branches.

    Parameters
    ----------
    graph : ExprGraph
        Graph holding ``root``.
    root : int
        Node to bound.
    box : Box or mapping of name to (lo, hi), optional
        Variable bounds; variables not listed use their declared bounds.

    Returns
    -------
    Interval
        Enclosure of the values of ``root``.
    """
    return enclose(graph, [root], box)[root]

