"""
Algebraic simplification of expression graphs

Rewrites append new nodes to the same graph and return the simplified root;
the original nodes stay valid.
"""

import logging
import math
from typing import Dict, Optional

from .bounds import BoxLike, propagate_bounds
from .core import ExprGraph, fast_exponent, intern, topo_order
from .errors import HadiffError
from .ops import MAX_FAST_EXPONENT, Op

logger = logging.getLogger(__name__)


class _Rewriter:
    def __init__(self, graph: ExprGraph, exact: bool, box: Optional[BoxLike]):
        self.graph = graph
        self.exact = exact
        self.box = box

    def const(self, ref: int) -> Optional[float]:
        node = self.graph.nodes[ref]
        return node.value if node.op == Op.CONST else None

    def is_const(self, ref: int, value: float) -> bool:
        return self.const(ref) == value

    def is_zero(self, ref: int, negative: bool) -> bool:
        """Zero constant; in exact mode its sign must also match ``negative``."""
        value = self.const(ref)
        if value != 0.0:
            return False
        return not self.exact or (math.copysign(1.0, value) < 0) == negative

    def make(self, op: Op, *children: int) -> int:
        return intern(self.graph, op, children, strict=False)

    def nonzero(self, ref: int) -> bool:
        try:
            bounds = propagate_bounds(self.graph, ref, self.box)
        except HadiffError:
            return False
        return bounds.is_finite and not bounds.contains_zero()

    def rewrite(self, ref: int) -> int:
        """Apply local rules at ``ref`` until none matches."""
        for _ in range(64):
            new = self.step(ref)
            if new == ref:
                return ref
            ref = new
        return ref

    def step(self, ref: int) -> int:
        g = self.graph
        node = g.nodes[ref]
        op = node.op
        if op in (Op.CONST, Op.VAR, Op.PIECEWISE):
            return ref
        a = node.children[0]
        b = node.children[1] if len(node.children) > 1 else None
        if op == Op.ADD:
            # x + (-0) is x for every x, x + 0 turns -0 into 0.
            if self.is_zero(b, negative=True):
                return a
            if self.is_zero(a, negative=True):
                return b
            if g.nodes[b].op == Op.NEG:
                return self.make(Op.SUB, a, g.nodes[b].children[0])
        elif op == Op.SUB:
            if self.is_zero(b, negative=False):
                return a
            if self.is_zero(a, negative=True):
                return self.make(Op.NEG, b)
            if a == b and not self.exact:
                return g.const(0.0)
        elif op == Op.MUL:
            if self.is_const(b, 1.0):
                return a
            if self.is_const(a, 1.0):
                return b
            if not self.exact and (self.is_const(a, 0.0) or self.is_const(b, 0.0)):
                return g.const(0.0)
            if self.is_const(b, -1.0):
                return self.make(Op.NEG, a)
            if self.is_const(a, -1.0):
                return self.make(Op.NEG, b)
            if a == b:
                return self.make(Op.POW, a, g.const(2.0))
            merged = self._merge_power(a, b) or self._merge_power(b, a)
            if merged is not None:
                return merged
        elif op == Op.DIV:
            if self.is_const(b, 1.0):
                return a
            if a == b and self.nonzero(a):
                return g.const(1.0)
        elif op == Op.POW:
            if self.is_const(b, 1.0):
                return a
            if self.is_const(b, 0.0):
                return g.const(1.0)
        elif op == Op.NEG:
            inner = g.nodes[a]
            if inner.op == Op.NEG:
                return inner.children[0]
        elif op == Op.LOG:
            inner = g.nodes[a]
            if inner.op == Op.EXP and not self.exact:
                return inner.children[0]
        return ref

    def _merge_power(self, power: int, base: int) -> Optional[int]:
        """x^n * x -> x^(n+1) for a positive integer n on the multiplication path."""
        node = self.graph.nodes[power]
        n = fast_exponent(self.graph, node)
        if n is None or n < 1 or n + 1 > MAX_FAST_EXPONENT or node.children[0] != base:
            return None
        return self.make(Op.POW, base, self.graph.const(float(n + 1)))

    def sweep(self, root: int) -> int:
        """One bottom-up pass rebuilding every node over simplified children."""
        mapping: Dict[int, int] = {}
        for ref in topo_order(self.graph, root):
            node = self.graph.nodes[ref]
            if node.op in (Op.CONST, Op.VAR):
                mapping[ref] = ref
                continue
            children = [mapping[c] for c in node.children]
            guard = None
            if node.guard is not None:
                left, relation, right = node.guard
                guard = (mapping[left], relation, mapping[right])
            rebuilt = intern(self.graph, node.op, children, guard=guard, strict=False)
            mapping[ref] = self.rewrite(rebuilt)
        return mapping[root]


def simplify(
    graph: ExprGraph, root: int, exact: bool = False, box: Optional[BoxLike] = None
) -> int:
    """
    Simplify ``root`` with local algebraic identities until nothing changes.

    Rules: ``x+0``, ``0+x``, ``x-0``, ``0-x -> -x``, ``x*1``, ``1*x``,
    ``x*0``, ``x*(-1) -> -x``, ``x/1``, ``x-x -> 0``, ``x/x -> 1`` (only when
    the bounds of ``x`` exclude zero), ``x^1``, ``x^0 -> 1``,
    ``log(exp(x)) -> x``, ``-(-x) -> x``, ``x+(-y) -> x-y``, ``x*x -> x^2``
    and ``x^n*x -> x^(n+1)``.

    Parameters
    ----------
    graph : ExprGraph
        Mutable graph holding ``root``; new nodes are appended to it.
    root : int
        Node to simplify.
    exact : bool, default False
        Only apply rewrites that give bit-identical results for every input,
        including infinities and signed zeros (drops ``x*0``, ``x-x`` and
        ``log(exp(x))``; ``x+0`` and ``0+x`` only fold for a ``-0`` constant,
        ``x-0`` only for ``+0`` and ``0-x`` only for ``-0``).
    box : Box or mapping, optional
        Variable bounds used to prove ``x`` nonzero for ``x/x``, in addition
        to declared bounds.

    Returns
    -------
    int
        Reference of the simplified root.
    """
    rewriter = _Rewriter(graph, exact, box)
    limit = len(topo_order(graph, root)) + 1
    current = root
    for iteration in range(limit):
        new = rewriter.sweep(current)
        if new == current:
            logger.debug("Simplified node %d to %d in %d sweep(s)", root, new, iteration + 1)
            return new
        current = new
    return current


def count_nodes(graph: ExprGraph, root: int) -> int:
    """Number of distinct nodes reachable from ``root``."""
    return len(topo_order(graph, root))

