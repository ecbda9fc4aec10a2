"""
Local Lipschitz constants by interval branch-and-bound

The supremum of an expression over a box is bracketed from above by interval
enclosures of sub-boxes and from below by evaluating the expression at
concrete points (box centres, a Halton sample and, in low dimension, the box
vertices).
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pybnb
from scipy.stats import qmc

from .autodiff import VarsLike, grad, grad_norm
from .bounds import BoxLike, enclose, propagate_bounds, resolve_box
from .compiler import CompileOptions, Pass, lower
from .core import ExprGraph, VarSpec, evaluate
from .errors import (
    DomainError,
    HadiffError,
    IntervalDomainError,
    KernelDomainError,
    NotLipschitzError,
)
from .interval import Box
from .kernel import execute
from .parser import print_expr

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-3
DEFAULT_BUDGET = 100_000
DEFAULT_SAMPLES = 256
# Box vertices join the multi-start sample up to this many dimensions.
MAX_VERTEX_DIMENSIONS = 6
SPLIT_RULES = ("gradient", "width")


@dataclass
class SupremumResult:
    """Certified bracket ``lower <= sup <= upper`` with a point attaining ``lower``."""

    upper: float
    lower: float
    witness: Dict[str, float]
    iterations: int
    budget_exhausted: bool = False

    @property
    def gap(self) -> float:
        return relative_gap(self.upper, self.lower)


@dataclass
class LipschitzReport:
    """Result of :func:`lipschitz_constant`."""

    k_upper: float
    k_lower: float
    witness: Dict[str, float]
    iterations: int
    tolerance: float
    closed_form: Optional[str] = None
    budget_exhausted: bool = False
    box: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return relative_gap(self.k_upper, self.k_lower)

    @property
    def flags(self) -> List[str]:
        return ["budget_exhausted"] if self.budget_exhausted else []

    def to_dict(self) -> Dict[str, object]:
        return {
            "k_upper": self.k_upper,
            "k_lower": self.k_lower,
            "witness": dict(self.witness),
            "iterations": self.iterations,
            "tolerance": self.tolerance,
            "closed_form": self.closed_form,
            "flags": self.flags,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def relative_gap(upper: float, lower: float) -> float:
    if upper == lower:
        return 0.0
    return (upper - lower) / max(lower, 1.0)


class _Objective:
    """Point evaluation of one root through a compiled kernel."""

    def __init__(self, graph: ExprGraph, root: int, names: Sequence[str]):
        self.graph = graph
        self.root = root
        self.names = list(names)
        opts = CompileOptions("jit", passes={Pass.CSE, Pass.DEAD_CODE})
        self.kernel = lower(graph, [root], opts, labels=["value"], inputs=self.names)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        try:
            return execute(self.kernel, points)[:, 0]
        except KernelDomainError:
            values = np.full(points.shape[0], np.nan)
            for i, row in enumerate(points):
                try:
                    values[i] = evaluate(self.graph, self.root, dict(zip(self.names, row)))
                except DomainError:
                    pass
            return values


class _SplitChooser:
    """Picks the dimension to bisect: width times the slope bound, or width alone."""

    def __init__(self, graph: ExprGraph, root: int, names: Sequence[str], rule: str):
        self.graph = graph
        self.root = root
        self.names = list(names)
        self.rule = rule
        self.partials: Optional[List[int]] = None

    def _slopes(self) -> Optional[List[int]]:
        if self.partials is None and self.rule == "gradient":
            try:
                self.partials = grad(self.graph, self.root, self.names).partials
            except HadiffError as exc:
                logger.debug("No slope bounds for splitting (%s); using widths", exc)
                self.rule = "width"
        return self.partials

    def choose(self, box: Box) -> str:
        widths = [box[name].width for name in self.names]
        scores = widths
        partials = self._slopes()
        if partials is not None:
            try:
                intervals = enclose(self.graph, partials, box)
                weighted = [w * intervals[p].magnitude for w, p in zip(widths, partials)]
                if all(math.isfinite(s) for s in weighted) and max(weighted) > 0.0:
                    scores = weighted
            except IntervalDomainError:
                pass
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        return self.names[best]


def _sample_points(box: Box, samples: int) -> np.ndarray:
    names = box.names
    lows = np.array([box[n].lo for n in names])
    highs = np.array([box[n].hi for n in names])
    points = [lows + (highs - lows) / 2.0]
    if samples > 0:
        unit = qmc.Halton(d=len(names), scramble=False).random(samples)
        points.extend(np.clip(lows + unit * (highs - lows), lows, highs))
    if len(names) <= MAX_VERTEX_DIMENSIONS:
        points.extend(np.array([[v[n] for n in names] for v in box.vertices()]))
    return np.vstack(points)


class _SupremumProblem(pybnb.Problem):
    """Maximisation of one root; each node carries a sub-box as its state."""

    def __init__(
        self,
        graph: ExprGraph,
        root: int,
        box: Box,
        objective: _Objective,
        chooser: _SplitChooser,
        best: float,
        witness: Dict[str, float],
    ):
        self.graph = graph
        self.root = root
        self.names = box.names
        self._evaluate = objective
        self._chooser = chooser
        self._box = box
        self._inherited = math.inf
        self._last_bound = math.inf
        self._at_root = True
        self.best = best
        self.witness = witness
        # Largest bound of a degenerate (point) box; such nodes are never branched.
        self.settled = -math.inf

    def sense(self):
        return pybnb.maximize

    def bound(self) -> float:
        self._last_bound = min(propagate_bounds(self.graph, self.root, self._box).hi, self._inherited)
        return self._last_bound

    def objective(self) -> float:
        point = np.array([[self._box[n].mid for n in self.names]])
        value = float(self._evaluate(point)[0])
        if math.isfinite(value) and value > self.best:
            self.best, self.witness = value, dict(zip(self.names, map(float, point[0])))
        if self._at_root:
            self._at_root = False
            if math.isfinite(self.best):
                return self.best
        return value if math.isfinite(value) else self.infeasible_objective()

    def save_state(self, node):
        node.state = self._box

    def load_state(self, node):
        self._box = node.state
        parent = getattr(node, "bound", None)
        self._inherited = float(parent) if parent is not None and math.isfinite(parent) else math.inf

    def branch(self):
        if all(self._box[n].width == 0.0 for n in self.names):
            self.settled = max(self.settled, self._last_bound)
            return
        for half in self._box.bisect(self._chooser.choose(self._box)):
            child = pybnb.Node()
            child.state = half
            yield child


def supremum_bound(
    graph: ExprGraph,
    root: int,
    box: Optional[BoxLike] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    budget: int = DEFAULT_BUDGET,
    samples: int = DEFAULT_SAMPLES,
    split_rule: str = "gradient",
) -> SupremumResult:
    """
    Bracket the supremum of an expression over a box by branch-and-bound.

    The search runs as a :class:`pybnb.Problem` maximised with the "bound"
    queue strategy: the open sub-box with the highest interval upper bound is
    bisected along the dimension chosen by ``split_rule``, and sub-boxes whose
    bound does not exceed the best sampled value are pruned. The multi-start
    sample seeds the incumbent before the first node is processed.

    Parameters
    ----------
    graph : ExprGraph
        Mutable graph holding ``root`` (the gradient split rule appends
        derivative nodes).
    root : int
        Expression to maximise.
    box : Box or mapping, optional
        Bounds for the variables of ``root``; declared bounds fill gaps.
    tolerance : float, default 1e-3
        Stop when ``(upper - lower) / max(lower, 1)`` is at most this.
    budget : int, default 100000
        Maximum number of box expansions.
    samples : int, default 256
        Size of the Halton multi-start sample.
    split_rule : {"gradient", "width"}, default "gradient"
        ``"gradient"`` bisects the dimension maximising width times the
        bound on the partial derivative (falling back to width);
        ``"width"`` bisects the widest dimension. Ties go to the earlier
        variable.

    Returns
    -------
    SupremumResult

    Raises
    ------
    IntervalDomainError
        The expression may leave its domain on the box.
    UnboundedVariablesError
        A variable of ``root`` has no bounds.
    """
    if not tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")
    if split_rule not in SPLIT_RULES:
        raise ValueError(f"Unknown split rule '{split_rule}'. Available rules: {list(SPLIT_RULES)}")
    full = resolve_box(graph, root, box)
    upper = propagate_bounds(graph, root, full).hi
    names = full.names
    if not names:
        value = evaluate(graph, root, {})
        return SupremumResult(value, value, {}, 0)

    objective = _Objective(graph, root, names)
    points = _sample_points(full, samples)
    values = objective(points)
    best, witness = -math.inf, {}
    if np.isfinite(values).any():
        index = int(np.nanargmax(np.where(np.isfinite(values), values, -np.inf)))
        best, witness = float(values[index]), dict(zip(names, map(float, points[index])))

    if relative_gap(upper, best) <= tolerance:
        return SupremumResult(upper, best, witness, 0)
    if budget == 0:
        logger.warning("Expansion budget of 0 leaves relative gap %.3g", relative_gap(upper, best))
        return SupremumResult(upper, best, witness, 0, True)

    chooser = _SplitChooser(graph, root, names, split_rule)
    problem = _SupremumProblem(graph, root, full, objective, chooser, best, witness)
    results = pybnb.Solver(comm=None).solve(
        problem,
        queue_strategy="bound",
        relative_gap=tolerance,
        node_limit=budget,
        log=logging.getLogger(f"{__name__}.search"),
        disable_signal_handlers=True,
    )
    exhausted = results.termination_condition == pybnb.TerminationCondition.node_limit
    bound = upper if results.bound is None else min(float(results.bound), upper)
    lower = problem.best
    upper = max(bound, problem.settled, lower)
    if exhausted:
        logger.warning(
            "Expansion budget of %d exhausted with relative gap %.3g", budget, relative_gap(upper, lower)
        )
    return SupremumResult(upper, lower, problem.witness, int(results.nodes), exhausted)


def lipschitz_constant(
    graph: ExprGraph,
    root: int,
    box: Optional[BoxLike] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    budget: int = DEFAULT_BUDGET,
    wrt: VarsLike = None,
    samples: int = DEFAULT_SAMPLES,
    split_rule: str = "gradient",
    include_closed_form: bool = True,
) -> LipschitzReport:
    """
    Local Lipschitz constant ``K = sup ||grad f||_2`` of ``root`` over a box.

    Builds the symbolic gradient norm on a copy of ``graph`` and brackets
    its supremum with :func:`supremum_bound`.

    Parameters
    ----------
    graph : ExprGraph
        Graph holding ``root``; it is not modified.
    root : int
        Expression ``f``.
    box : Box or mapping, optional
        Bounds for every variable of ``root``; declared bounds fill gaps.
    tolerance, budget, samples, split_rule
        As for :func:`supremum_bound`.
    wrt : sequence of VarSpec or str, optional
        Variables of the gradient; defaults to all graph variables.
    include_closed_form : bool, default True
        Store the printed norm expression in the report.

    Returns
    -------
    LipschitzReport

    Raises
    ------
    NotLipschitzError
        The gradient norm is unbounded or undefined somewhere on the box
        (for example a division by an interval containing 0).
    UnboundedVariablesError
        A variable of ``root`` has no bounds.
    """
    work = graph.copy()
    full = resolve_box(work, root, box)
    bundle = grad(work, root, wrt)
    norm = grad_norm(bundle)
    try:
        result = supremum_bound(work, norm, full, tolerance, budget, samples, split_rule)
    except IntervalDomainError as exc:
        raise NotLipschitzError(exc) from None
    report = LipschitzReport(
        k_upper=result.upper,
        k_lower=result.lower,
        witness=result.witness,
        iterations=result.iterations,
        tolerance=tolerance,
        closed_form=print_expr(work, norm) if include_closed_form else None,
        budget_exhausted=result.budget_exhausted,
        box=full.as_dict(),
    )
    logger.info(
        "Lipschitz constant in [%.10g, %.10g] after %d expansion(s)",
        report.k_lower,
        report.k_upper,
        report.iterations,
    )
    return report


def weight_box_from_norm(
    weights: Sequence[Union[VarSpec, str]],
    radius: Union[float, Sequence[float], Mapping[str, float]],
) -> Box:
    """
    Box ``[-r, r]`` for each weight variable.

    Parameters
    ----------
    weights : sequence of VarSpec or str
        Weight variables, in order.
    radius : float, sequence of float or mapping of str to float
        One radius for every weight, one per weight in order, or one per name.

    Returns
    -------
    Box
    """
    names = [w.name if isinstance(w, VarSpec) else w for w in weights]
    if isinstance(radius, Mapping):
        missing = [n for n in names if n not in radius]
        if missing:
            raise ValueError(f"No radius given for weights: {missing}")
        radii = [radius[n] for n in names]
    elif isinstance(radius, (int, float)):
        radii = [radius] * len(names)
    else:
        radii = list(radius)
        if len(radii) != len(names):
            raise ValueError(f"Got {len(radii)} radii for {len(names)} weights")
    for name, r in zip(names, radii):
        if not (math.isfinite(r) and r > 0):
            raise ValueError(f"Radius for '{name}' must be positive and finite, got {r}")
    return Box({name: (-float(r), float(r)) for name, r in zip(names, radii)})
