"""
Tests for branch-and-bound suprema and Lipschitz constants
"""

import json

import pytest

from hadiff import (
    ModelSpec,
    NotLipschitzError,
    build_loss_graph,
    lipschitz_constant,
    parse,
    supremum_bound,
    weight_box_from_norm,
)
from hadiff.errors import UnboundedVariablesError

from .conftest import BMI_LIPSCHITZ


class TestSupremum:

    def test_parabola(self):
        """Test the maximum of x*(1 - x) on [0, 1]"""
        graph = parse("x*(1 - x)")
        result = supremum_bound(graph, graph.root(), {"x": (0.0, 1.0)})
        assert result.lower <= 0.25 <= result.upper
        assert result.upper - result.lower <= 1e-3
        assert result.witness == {"x": 0.5}
        assert not result.budget_exhausted

    def test_budget_exhausted(self):
        """Test that running out of expansions still returns a sound bracket"""
        graph = parse("x*(1 - x)")
        result = supremum_bound(graph, graph.root(), {"x": (0.0, 1.0)}, tolerance=1e-9, budget=0)
        assert result.budget_exhausted
        assert result.iterations == 0
        assert result.lower <= 0.25 <= result.upper

    def test_constant_expression(self):
        """Test an expression without variables"""
        graph = parse("2 + 3")
        result = supremum_bound(graph, graph.root())
        assert (result.lower, result.upper, result.iterations) == (5.0, 5.0, 0)

    @pytest.mark.parametrize("rule", ["gradient", "width"])
    def test_split_rules_agree(self, rule):
        """Test that both split rules bracket the same maximum"""
        graph = parse("tanh(x*y) - (x - 0.3)^2 - (y + 0.2)^2")
        result = supremum_bound(
            graph, graph.root(), {"x": (-1.0, 1.0), "y": (-1.0, 1.0)}, split_rule=rule
        )
        assert result.upper - result.lower <= 1e-3
        assert result.lower <= result.upper

    def test_invalid_arguments(self):
        """Test validation of tolerance, budget and split rule"""
        graph = parse("x")
        box = {"x": (0.0, 1.0)}
        with pytest.raises(ValueError, match="tolerance must be positive"):
            supremum_bound(graph, graph.root(), box, tolerance=0.0)
        with pytest.raises(ValueError, match="budget must be non-negative"):
            supremum_bound(graph, graph.root(), box, budget=-1)
        with pytest.raises(ValueError, match="Unknown split rule 'random'"):
            supremum_bound(graph, graph.root(), box, split_rule="random")


class TestLipschitzConstant:

    def test_bmi(self, bmi_graph):
        """Test the gradient norm bound of a*w/h^2 over an adult population"""
        report = lipschitz_constant(bmi_graph, bmi_graph.root())
        assert report.k_lower == pytest.approx(BMI_LIPSCHITZ, rel=1e-5)
        assert report.k_lower <= report.k_upper
        assert report.gap <= 1e-3
        assert report.witness == {"a": 80.0, "w": 150.0, "h": 1.4}
        assert "sqrt(" in report.closed_form

    def test_graph_not_modified(self, bmi_graph):
        """Test that the input graph is left alone"""
        before = len(bmi_graph)
        lipschitz_constant(bmi_graph, bmi_graph.root(), tolerance=1e-2)
        assert len(bmi_graph) == before

    def test_linear_function(self):
        """Test that the constant of 3x + 4y is exactly 5"""
        graph = parse("3*x + 4*y")
        report = lipschitz_constant(graph, graph.root(), {"x": (-1.0, 1.0), "y": (0.0, 2.0)})
        assert report.k_upper == report.k_lower == 5.0
        assert report.iterations == 0

    def test_height_reaching_zero(self, bmi_graph):
        """Test that a box touching h = 0 is rejected as not Lipschitz"""
        with pytest.raises(NotLipschitzError, match="division by interval containing 0") as info:
            lipschitz_constant(bmi_graph, bmi_graph.root(), {"h": (0.0, 2.0)})
        assert str(info.value).startswith("not locally Lipschitz on box: ")
        assert info.value.box["h"] == (0.0, 2.0)

    def test_missing_bounds(self):
        """Test that every variable needs bounds"""
        graph = parse("x*y")
        with pytest.raises(UnboundedVariablesError, match="Missing bounds for variables: y"):
            lipschitz_constant(graph, graph.root(), {"x": (0.0, 1.0)})

    def test_subset_of_variables(self, bmi_graph):
        """Test a constant with respect to some variables only"""
        report = lipschitz_constant(bmi_graph, bmi_graph.root(), wrt=["a"], tolerance=1e-6)
        # d/da = w/h^2 is largest at w = 150, h = 1.4
        assert report.k_lower == pytest.approx(150 / 1.4**2, rel=1e-9)

    def test_report_json(self, bmi_graph):
        """Test the report's JSON fields"""
        report = lipschitz_constant(bmi_graph, bmi_graph.root(), tolerance=1e-2)
        data = json.loads(report.to_json())
        assert sorted(data) == [
            "closed_form",
            "flags",
            "iterations",
            "k_lower",
            "k_upper",
            "tolerance",
            "witness",
        ]
        assert data["flags"] == []

    def test_budget_flag(self, bmi_graph):
        """Test that an exhausted budget is flagged"""
        report = lipschitz_constant(bmi_graph, bmi_graph.root(), tolerance=1e-12, budget=3)
        assert report.budget_exhausted
        assert report.to_dict()["flags"] == ["budget_exhausted"]
        assert report.k_upper >= BMI_LIPSCHITZ - 0.01


class TestWeightBox:

    def test_scalar_radius(self):
        """Test one radius for every weight"""
        box = weight_box_from_norm(["w1", "w2"], 0.5)
        assert box.as_dict() == {"w1": (-0.5, 0.5), "w2": (-0.5, 0.5)}

    def test_per_weight_radius(self):
        """Test radii given in order and by name"""
        assert weight_box_from_norm(["w1", "w2"], [1.0, 2.0])["w2"].hi == 2.0
        assert weight_box_from_norm(["w1"], {"w1": 3.0})["w1"].lo == -3.0

    def test_invalid_radius(self):
        """Test that radii must be positive and complete"""
        with pytest.raises(ValueError, match="must be positive and finite"):
            weight_box_from_norm(["w1"], 0.0)
        with pytest.raises(ValueError, match=r"No radius given for weights: \['w2'\]"):
            weight_box_from_norm(["w1", "w2"], {"w1": 1.0})
        with pytest.raises(ValueError, match="Got 1 radii for 2 weights"):
            weight_box_from_norm(["w1", "w2"], [1.0])

    def test_radius_shrinks_constant(self):
        """Test that K of a 2-2-1 tanh loss never grows as the weight radius shrinks"""
        spec = ModelSpec((2, 2, 1))
        graph = build_loss_graph(spec)
        data_box = {"x1": (-1.0, 1.0), "x2": (-1.0, 1.0), "y": (0.0, 1.0)}
        uppers = []
        for radius in (1.0, 0.5, 0.25):
            box = weight_box_from_norm(spec.parameter_names, radius).merge(data_box)
            report = lipschitz_constant(
                graph,
                graph.root("loss"),
                box,
                tolerance=0.05,
                budget=500,
                wrt=spec.parameter_names,
                split_rule="width",
                include_closed_form=False,
            )
            assert report.k_lower <= report.k_upper
            uppers.append(report.k_upper)
        assert uppers[2] <= uppers[1] <= uppers[0]


class TestSearch:

    def test_interior_maximum_needs_branching(self):
        """Test that a maximum missed by the start points is found by the search"""
        graph = parse("-(x - 0.123)^2")
        result = supremum_bound(graph, graph.root(), {"x": (0.0, 1.0)}, tolerance=1e-6, samples=0)
        assert result.iterations > 0
        assert not result.budget_exhausted
        assert result.lower <= 0.0 <= result.upper
        assert result.upper - result.lower <= 1e-6
        assert result.witness["x"] == pytest.approx(0.123, abs=2e-3)

    def test_bracket_meets_tolerance(self, bmi_graph):
        """Test that the returned bracket satisfies the relative gap"""
        result = supremum_bound(bmi_graph, bmi_graph.root(), tolerance=1e-4, split_rule="width")
        assert result.lower <= result.upper
        assert result.gap <= 1e-4
