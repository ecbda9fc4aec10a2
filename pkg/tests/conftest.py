"""
Pytest configuration and shared fixtures for hadiff tests
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from openpyxl import Workbook

from hadiff import ExprGraph, parse, parse_declarations
from hadiff.data import synthetic_blobs

BMI_TEXT = "a*w/h^2"
BMI_DECLARATIONS = """
# age, weight and height
a in [20, 80]
w in [40, 150]
h in [1.4, 2.1]
"""
# Brute-force grid maximum of the BMI gradient norm on the box above.
BMI_LIPSCHITZ = 8746.79


# Variables of the random expression corpus.
VARIABLES = ["x", "y", "z"]


def random_expression(graph, rng, depth, smooth=False):
    """Random expression over x, y, z using only operations defined everywhere"""
    if depth == 0 or rng.random() < 0.15:
        if rng.random() < 0.25:
            return graph.const(float(rng.choice([0.5, 1.0, 2.0, -1.5])))
        return graph.var(str(rng.choice(VARIABLES)))
    kind = int(rng.integers(0, 8 if smooth else 9))
    a = random_expression(graph, rng, depth - 1, smooth)
    if kind == 0:
        return graph.add(a, random_expression(graph, rng, depth - 1, smooth))
    if kind == 1:
        return graph.sub(a, random_expression(graph, rng, depth - 1, smooth))
    if kind == 2:
        return graph.mul(a, random_expression(graph, rng, depth - 1, smooth))
    if kind == 3:
        return graph.tanh(a)
    if kind == 4:
        return graph.sigmoid(a)
    if kind == 5:
        return graph.exp(graph.tanh(a))
    if kind == 6:
        b = random_expression(graph, rng, depth - 1, smooth)
        return graph.div(a, graph.add(graph.const(1.0), graph.pow(b, graph.const(2.0))))
    if kind == 7:
        return graph.sqrt(graph.add(graph.const(1.0), graph.pow(a, graph.const(2.0))))
    return graph.max(a, graph.neg(a))


def random_graph(seed, roots=3, depth=5, smooth=False):
    """Graph over x, y, z holding ``roots`` random expressions labelled r0, r1, ..."""
    rng = np.random.default_rng(seed)
    graph = ExprGraph()
    for name in VARIABLES:
        graph.declare(name)
    for i in range(roots):
        graph.add_root(random_expression(graph, rng, depth, smooth), f"r{i}")
    return graph


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def bmi_graph() -> ExprGraph:
    """BMI expression with the bounds of an adult population declared"""
    return parse(BMI_TEXT, parse_declarations(BMI_DECLARATIONS))


@pytest.fixture
def bmi_points():
    """100 random points inside the BMI box as (a, w, h) columns"""
    rng = np.random.default_rng(7)
    return np.column_stack(
        [
            rng.uniform(20, 80, 100),
            rng.uniform(40, 150, 100),
            rng.uniform(1.4, 2.1, 100),
        ]
    )


@pytest.fixture
def blobs():
    """Two separable 2-D blobs with 0/1 targets, inside [-3, 3]^2"""
    return synthetic_blobs(n=200, seed=3)


@pytest.fixture
def blobs_csv(temp_dir, blobs):
    """The blobs dataset written as CSV"""
    filepath = temp_dir / "blobs.csv"
    blobs.to_frame().rename(columns={"x1": "u", "x2": "v", "y": "label"}).to_csv(
        filepath, index=False
    )
    return filepath


@pytest.fixture
def blobs_xlsx(temp_dir, blobs):
    """The blobs dataset written to a workbook with a leading notes sheet"""
    filepath = temp_dir / "blobs.xlsx"

    wb = Workbook()
    notes = wb.active
    notes.title = "Notes"
    notes["A1"] = "synthetic data"

    ws = wb.create_sheet("Data")
    ws.append(["u", "v", "label"])
    for row in blobs.stacked():
        ws.append([float(value) for value in row])

    wb.save(filepath)
    wb.close()

    return filepath


@pytest.fixture
def train_config_file(temp_dir):
    """TOML configuration for a short precomputed-K run"""
    filepath = temp_dir / "train.toml"
    filepath.write_text(
        """
[model]
layers = [2, 4, 1]
activation = "tanh"
loss = "logistic"
seed = 1

[train]
mode = "precomputed-K"
learning_rate = 0.5
noise_multiplier = 1.0
lot_size = 20
steps = 5
sampling = "poisson"
seed = 11

[box]
x1 = [-3.0, 3.0]
x2 = [-3.0, 3.0]
y = [0.0, 1.0]

[precomputed_k]
weight_radius = 1.0
budget = 200

[clip_baseline]
clip_norm = 1.0
""",
        encoding="utf-8",
    )
    return filepath
