"""
Reverse-mode differentiation producing symbolic gradient expressions
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Union

import pandas as pd

from .core import ExprGraph, ExprNode, Relation, VarSpec, topo_order
from .errors import ConstructionError
from .ops import Op
from .parser import print_expr
from .simplify import simplify

logger = logging.getLogger(__name__)

VarsLike = Optional[Sequence[Union[VarSpec, str]]]


@dataclass
class GradientBundle:
    """Partial derivatives of one root, as nodes of the same graph."""

    graph: ExprGraph
    source_root: int
    wrt: List[VarSpec]
    partials: List[int]
    norm_root: Optional[int] = None

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.wrt]

    def partial(self, name: str) -> int:
        if name not in self.names:
            raise ValueError(f"No partial for '{name}'. Available: {self.names}")
        return self.partials[self.names.index(name)]

    def register_roots(self, prefix: str = "d_") -> List[str]:
        """Add the partials (and norm, if built) as labelled roots of the graph."""
        labels = []
        for name, ref in zip(self.names, self.partials):
            labels.append(f"{prefix}{name}")
            self.graph.add_root(ref, labels[-1])
        if self.norm_root is not None:
            labels.append("norm")
            self.graph.add_root(self.norm_root, "norm")
        return labels


class _Builder:
    """Node constructors that skip additions of 0 and multiplications by 0 or 1."""

    def __init__(self, graph: ExprGraph):
        self.g = graph
        self.zero = graph.const(0.0)
        self.one = graph.const(1.0)

    def value(self, ref: int) -> Optional[float]:
        node = self.g.nodes[ref]
        return node.value if node.op == Op.CONST else None

    def add(self, a: int, b: int) -> int:
        if self.value(a) == 0.0:
            return b
        if self.value(b) == 0.0:
            return a
        return self.g.add(a, b)

    def mul(self, a: int, b: int) -> int:
        if self.value(a) == 0.0 or self.value(b) == 0.0:
            return self.zero
        if self.value(a) == 1.0:
            return b
        if self.value(b) == 1.0:
            return a
        return self.g.mul(a, b)

    def select(self, guard, then: int, otherwise: int) -> int:
        if then == otherwise:
            return then
        left, relation, right = guard
        return self.g.piecewise(left, relation, right, then, otherwise)

    def sign(self, u: int) -> int:
        # subgradient 0 at the kink
        positive = self.select((self.zero, Relation.LT, u), self.one, self.zero)
        return self.select((u, Relation.LT, self.zero), self.g.const(-1.0), positive)


def _resolve_wrt(graph: ExprGraph, wrt: VarsLike) -> List[VarSpec]:
    if wrt is None:
        return graph.vars
    specs = []
    for item in wrt:
        name = item.name if isinstance(item, VarSpec) else item
        specs.append(graph.spec(name))
    return specs


def _contributions(b: _Builder, ref: int, node: ExprNode, bar: int, need: Set[int]) -> List[tuple]:
    """(operand, adjoint contribution) pairs for the operands in ``need``."""
    g = b.g
    op = node.op
    if op in (Op.CONST, Op.VAR):
        return []
    u = node.children[0]
    v = node.children[1] if len(node.children) > 1 else None
    result = []
    if op == Op.ADD:
        result = [(u, lambda: bar), (v, lambda: bar)]
    elif op == Op.SUB:
        result = [(u, lambda: bar), (v, lambda: g.neg(bar))]
    elif op == Op.MUL:
        result = [(u, lambda: b.mul(bar, v)), (v, lambda: b.mul(bar, u))]
    elif op == Op.DIV:
        result = [
            (u, lambda: g.div(bar, v)),
            (v, lambda: g.neg(b.mul(bar, g.div(u, g.pow(v, g.const(2.0)))))),
        ]
    elif op == Op.POW:
        exponent = b.value(v)
        if exponent is not None:
            result = [
                (
                    u,
                    lambda: b.mul(
                        bar, b.mul(g.const(exponent), g.pow(u, g.const(exponent - 1.0)))
                    ),
                )
            ]
        else:
            result = [
                (u, lambda: b.mul(bar, g.mul(ref, g.div(v, u)))),
                (v, lambda: b.mul(bar, g.mul(ref, g.log(u)))),
            ]
    elif op == Op.NEG:
        result = [(u, lambda: g.neg(bar))]
    elif op == Op.EXP:
        result = [(u, lambda: b.mul(bar, ref))]
    elif op == Op.LOG:
        result = [(u, lambda: g.div(bar, u))]
    elif op == Op.SQRT:
        result = [(u, lambda: g.div(bar, g.mul(g.const(2.0), ref)))]
    elif op == Op.TANH:
        result = [(u, lambda: b.mul(bar, g.sub(b.one, g.pow(ref, g.const(2.0)))))]
    elif op == Op.SIGMOID:
        result = [(u, lambda: b.mul(bar, g.mul(ref, g.sub(b.one, ref))))]
    elif op == Op.ABS:
        result = [(u, lambda: b.mul(bar, b.sign(u)))]
    elif op in (Op.MIN, Op.MAX):
        guard = (u, Relation.LE, v) if op == Op.MIN else (v, Relation.LE, u)
        result = [
            (u, lambda: b.select(guard, bar, b.zero)),
            (v, lambda: b.select(guard, b.zero, bar)),
        ]
    elif op == Op.PIECEWISE:
        result = [
            (u, lambda: b.select(node.guard, bar, b.zero)),
            (v, lambda: b.select(node.guard, b.zero, bar)),
        ]
    else:
        raise ConstructionError(f"No derivative rule for {op.name}")
    return [(operand, build()) for operand, build in result if operand in need]


def grad(
    graph: ExprGraph, root: int, wrt: VarsLike = None, simplified: bool = True
) -> GradientBundle:
    """
    Symbolic gradient of ``root`` by one reverse sweep.

    Adjoints of shared nodes are summed; Piecewise nodes pass their adjoint
    to the branch selected by the same guard. The partial with respect to a
    variable that ``root`` does not depend on is the constant 0.

    Parameters
    ----------
    graph : ExprGraph
        Mutable graph holding ``root``; derivative nodes are appended to it.
    root : int
        Node to differentiate.
    wrt : sequence of VarSpec or str, optional
        Variables to differentiate with respect to; defaults to all graph
        variables in declaration order.
    simplified : bool, default True
        Run :func:`hadiff.simplify.simplify` on every partial.

    Returns
    -------
    GradientBundle
        One partial per ``wrt`` entry, in the same order.

    Raises
    ------
    ConstructionError
        A ``wrt`` variable is not declared in ``graph``, or the graph is frozen.
    """
    specs = _resolve_wrt(graph, wrt)
    builder = _Builder(graph)
    order = topo_order(graph, root)
    var_refs = {graph.nodes[ref].var: ref for ref in order if graph.nodes[ref].op == Op.VAR}
    names = {spec.name for spec in specs}
    need: Set[int] = set()
    for ref in order:
        node = graph.nodes[ref]
        if (node.op == Op.VAR and node.var in names) or any(c in need for c in node.children):
            need.add(ref)

    pending: Dict[int, List[int]] = {root: [builder.one]}
    adjoint: Dict[int, int] = {}
    for ref in reversed(order):
        parts = pending.pop(ref, None)
        if not parts:
            continue
        total = parts[0]
        for part in parts[1:]:
            total = builder.add(total, part)
        if builder.value(total) == 0.0:
            continue
        adjoint[ref] = total
        for operand, contribution in _contributions(builder, ref, graph.nodes[ref], total, need):
            pending.setdefault(operand, []).append(contribution)

    partials = []
    for spec in specs:
        ref = var_refs.get(spec.name)
        partial = adjoint.get(ref, builder.zero) if ref is not None else builder.zero
        partials.append(simplify(graph, partial) if simplified else partial)
    logger.debug(
        "Differentiated node %d w.r.t. %d variable(s); graph now has %d nodes",
        root,
        len(specs),
        len(graph),
    )
    return GradientBundle(graph, root, specs, partials)


def grad_norm(bundle: GradientBundle) -> int:
    """
    Euclidean norm ``sqrt(sum(partial^2))`` of a gradient, simplified.

    The node is also stored as ``bundle.norm_root``.
    """
    if not bundle.partials:
        raise ValueError("Cannot build the norm of an empty gradient")
    g = bundle.graph
    two = g.const(2.0)
    total = None
    for ref in bundle.partials:
        node = g.nodes[ref]
        if node.op == Op.CONST and node.value == 0.0:
            continue
        square = g.pow(ref, two)
        total = square if total is None else g.add(total, square)
    if total is None:
        total = g.const(0.0)
    bundle.norm_root = simplify(g, g.sqrt(total))
    return bundle.norm_root


def per_sample_grads(graph: ExprGraph, wrt: VarsLike = None) -> GradientBundle:
    """
    Gradient of the per-individual loss (the graph's first root).

    Parameters
    ----------
    graph : ExprGraph
        Loss graph with symbolic feature and target variables.
    wrt : sequence of VarSpec or str, optional
        Defaults to every weight and bias variable.

    Returns
    -------
    GradientBundle
        Executing its partials over a batch yields one gradient per row.
    """
    if wrt is None:
        wrt = [spec for spec in graph.vars if spec.is_parameter]
        if not wrt:
            raise ValueError("Graph has no weight or bias variables")
    return grad(graph, graph.root(), wrt)


def hessian(graph: ExprGraph, root: int, wrt: VarsLike = None) -> List[List[int]]:
    """
    Second-order partials by differentiating each first-order partial again.

    Returns
    -------
    list of list of int
        ``result[i][j]`` is the node for d2 root / d wrt[i] d wrt[j].
    """
    first = grad(graph, root, wrt)
    return [grad(graph, partial, first.wrt).partials for partial in first.partials]


def gradient_table(bundle: GradientBundle) -> pd.DataFrame:
    """
    Tidy table of a gradient: one row per variable, plus the norm if built.

    Returns
    -------
    pd.DataFrame
        Columns ``variable``, ``role``, ``expression`` (closed form) and
        ``node`` (reference in ``bundle.graph``).
    """
    columns = ["variable", "role", "expression", "node"]
    rows = [
        {
            "variable": spec.name,
            "role": spec.role.value,
            "expression": print_expr(bundle.graph, ref),
            "node": ref,
        }
        for spec, ref in zip(bundle.wrt, bundle.partials)
    ]
    if bundle.norm_root is not None:
        rows.append(
            {
                "variable": "norm",
                "role": "",
                "expression": print_expr(bundle.graph, bundle.norm_root),
                "node": bundle.norm_root,
            }
        )
    if not rows:
        return pd.DataFrame(columns=columns)
    return pd.DataFrame(rows, columns=columns)
