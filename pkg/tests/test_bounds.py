"""
Tests for intervals, boxes and bound propagation
"""

import numpy as np
import pytest

from hadiff import Box, ExprGraph, Interval, evaluate, execute, jit, parse, propagate_bounds
from hadiff.errors import IntervalDomainError, UnboundedVariablesError
from hadiff.interval import power_int

FUZZ_TEXTS = [
    "x*y - z/(1 + x^2)",
    "exp(x - y)*tanh(z) + sigmoid(x*y)",
    "sqrt(1 + x^2 + y^2) - log(2 + z^2)",
    "(x - y)^2 - (x + z)^3 + abs(y*z)",
    "min(x, y*z) - max(exp(x), z^2)",
    "(1 + x^2)^(y + 2) / (3 + z^4)",
    "piecewise(x <= y, x*z, -y^2) + relu(z - x)",
]


class TestInterval:

    def test_reversed_bounds(self):
        """Test that lo > hi is rejected"""
        with pytest.raises(ValueError, match="exceeds upper bound"):
            Interval(2.0, 1.0)

    def test_arithmetic(self):
        """Test basic interval operations"""
        a, b = Interval(-1.0, 2.0), Interval(3.0, 4.0)
        assert (a + b).as_tuple() == (2.0, 6.0)
        assert (a - b).as_tuple() == (-5.0, -1.0)
        assert (a * b).as_tuple() == (-4.0, 8.0)
        assert (-a).as_tuple() == (-2.0, 1.0)
        assert (b / Interval(1.0, 2.0)).as_tuple() == (1.5, 4.0)

    def test_division_by_interval_containing_zero(self):
        """Test that dividing by an interval with 0 inside is a domain error"""
        with pytest.raises(IntervalDomainError, match="division by interval containing 0"):
            Interval(1.0, 2.0) / Interval(-1.0, 1.0)

    def test_even_power_tightening(self):
        """Test that even powers of a sign-changing interval start at 0"""
        assert power_int(Interval(-1.0, 2.0), 2).as_tuple() == (0.0, 4.0)
        assert power_int(Interval(-3.0, -2.0), 2).as_tuple() == (4.0, 9.0)
        assert power_int(Interval(-1.0, 2.0), 3).as_tuple() == (-1.0, 8.0)


class TestBox:

    def test_bisect(self):
        """Test splitting one dimension at its midpoint"""
        box = Box({"x": (0.0, 2.0), "y": (-1.0, 1.0)})
        left, right = box.bisect("x")
        assert left["x"].as_tuple() == (0.0, 1.0)
        assert right["x"].as_tuple() == (1.0, 2.0)
        assert left["y"] == box["y"]

    def test_merge_and_restrict(self):
        """Test combining boxes and selecting variables"""
        box = Box({"x": (0.0, 1.0)}).merge({"y": (2.0, 3.0), "x": (0.5, 1.0)})
        assert box.names == ["x", "y"]
        assert box["x"].as_tuple() == (0.5, 1.0)
        assert box.restrict(["y"]).as_dict() == {"y": (2.0, 3.0)}
        with pytest.raises(KeyError):
            box.restrict(["z"])

    def test_vertices_and_contains(self):
        """Test box corners and membership"""
        box = Box({"x": (0.0, 1.0), "y": (0.0, 1.0), "z": (0.0, 1.0)})
        assert len(box.vertices()) == 8
        assert box.contains({"x": 0.5, "y": 1.0, "z": 0.0})
        assert not box.contains({"x": 1.5, "y": 0.0, "z": 0.0})

    def test_infinite_bounds_rejected(self):
        """Test that boxes are finite"""
        with pytest.raises(ValueError, match="must be finite"):
            Box({"x": (0.0, float("inf"))})


class TestPropagate:

    def test_declared_bounds(self, bmi_graph):
        """Test an enclosure from declared bounds"""
        bounds = propagate_bounds(bmi_graph, bmi_graph.root())
        assert bounds.lo <= 20 * 40 / 2.1**2
        assert bounds.hi >= 80 * 150 / 1.4**2

    def test_box_overrides_declarations(self, bmi_graph):
        """Test that box entries win over declared bounds"""
        bounds = propagate_bounds(bmi_graph, bmi_graph.root(), {"a": (30.0, 30.0)})
        assert bounds.hi < 80 * 150 / 1.4**2

    def test_missing_bounds(self):
        """Test that every variable needs bounds"""
        graph = parse("x + y")
        with pytest.raises(UnboundedVariablesError, match="Missing bounds for variables: y"):
            propagate_bounds(graph, graph.root(), {"x": (0.0, 1.0)})

    def test_domain_error_names_node_and_box(self):
        """Test that a log over a non-positive range is reported with its node"""
        graph = ExprGraph()
        x = graph.var("x")
        root = graph.log(x)
        with pytest.raises(IntervalDomainError) as info:
            propagate_bounds(graph, root, {"x": (-1.0, 1.0)})
        assert info.value.node == root
        assert info.value.box == {"x": (-1.0, 1.0)}
        assert "log of interval with non-positive part" in str(info.value)

    def test_decided_guard_uses_live_branch(self):
        """Test that a decided guard ignores the dead branch, even its domain"""
        graph = parse("piecewise(x <= 0, 0, log(x))")
        root = graph.root()
        assert propagate_bounds(graph, root, {"x": (-2.0, -1.0)}).as_tuple() == (0.0, 0.0)
        live = propagate_bounds(graph, root, {"x": (1.0, 2.0)})
        assert live.lo <= 0.0 and live.hi >= np.log(2.0)
        with pytest.raises(IntervalDomainError):
            propagate_bounds(graph, root, {"x": (-1.0, 1.0)})

    def test_undecided_guard_takes_hull(self):
        """Test that an undecided guard encloses both branches"""
        graph = parse("piecewise(x < 0, -1, 1)*x")
        bounds = propagate_bounds(graph, graph.root(), {"x": (-2.0, 3.0)})
        assert bounds.lo <= -3.0 and bounds.hi >= 3.0


class TestSoundness:

    @pytest.mark.parametrize("text", FUZZ_TEXTS)
    @pytest.mark.parametrize("seed", range(5))
    def test_enclosure_contains_samples(self, text, seed):
        """Test that sampled values always lie inside the enclosure"""
        graph = parse(text)
        root = graph.root()
        rng = np.random.default_rng(seed)
        box = {}
        for name in graph.var_names:
            lo = float(rng.uniform(-2.0, 1.0))
            box[name] = (lo, lo + float(rng.uniform(0.0, 1.5)))
        bounds = propagate_bounds(graph, root, box)
        for _ in range(200):
            point = {n: float(rng.uniform(lo, hi)) for n, (lo, hi) in box.items()}
            value = evaluate(graph, root, point)
            assert bounds.lo <= value <= bounds.hi
        for vertex in Box(box).vertices():
            assert bounds.contains(evaluate(graph, root, vertex))

    @pytest.mark.parametrize("text", FUZZ_TEXTS)
    @pytest.mark.parametrize("seed", range(5))
    def test_shrinking_box_never_widens(self, text, seed):
        """Test that the enclosure over a sub-box lies inside the enclosure over the box"""
        graph = parse(text)
        root = graph.root()
        rng = np.random.default_rng(seed)
        outer, inner = {}, {}
        for name in graph.var_names:
            lo = float(rng.uniform(-2.0, 1.0))
            hi = lo + float(rng.uniform(0.0, 1.5))
            outer[name] = (lo, hi)
            a, b = sorted(float(v) for v in rng.uniform(lo, hi, 2))
            inner[name] = (a, b)
        wide = propagate_bounds(graph, root, outer)
        narrow = propagate_bounds(graph, root, inner)
        assert wide.lo <= narrow.lo
        assert narrow.hi <= wide.hi

    @pytest.mark.slow
    @pytest.mark.parametrize("text", FUZZ_TEXTS)
    def test_million_samples_inside_enclosure(self, text):
        """Test one million compiled evaluations per expression against the enclosure"""
        graph = parse(text)
        kernel = jit(graph)
        rng = np.random.default_rng(6)
        for _ in range(4):
            box = {}
            for name in kernel.input_layout:
                lo = float(rng.uniform(-2.0, 1.0))
                box[name] = (lo, lo + float(rng.uniform(0.0, 1.5)))
            bounds = propagate_bounds(graph, graph.root(), box)
            lows = np.array([box[n][0] for n in kernel.input_layout])
            highs = np.array([box[n][1] for n in kernel.input_layout])
            points = rng.uniform(lows, highs, size=(250_000, len(lows)))
            values = execute(kernel, points)[:, 0]
            assert bounds.lo <= values.min()
            assert values.max() <= bounds.hi
