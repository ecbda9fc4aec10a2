"""
Differentially private SGD with symbolically bounded sensitivity

The per-individual loss of a small multilayer perceptron is built as an
expression graph, its gradient and gradient norm are compiled ahead of
time, and training bounds the sensitivity of every step in one of three
ways:

``precomputed-K``
    One Lipschitz constant over the feature box times a weight box; weights
    are projected back into the box after every step, so no gradient is
    ever clipped.
``per-step-K``
    The gradient norm is specialised to the current weights and bounded over
    the feature box alone.
``clip-baseline``
    Classic per-sample clipping to a fixed norm ``C``.
"""

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .accountant import (
    GaussianMechanism,
    NoiseConvention,
    PrivacyLedger,
    clip_factors,
    noise_std,
    per_step_sensitivity_noise,
)
from .autodiff import grad, grad_norm
from .compiler import aot, partial_evaluate
from .core import ExprGraph, Role, rebuild
from .data import Dataset, check_in_box, read_toml
from .errors import (
    ConstructionError,
    IntervalDomainError,
    NotLipschitzError,
    UnboundedVariablesError,
)
from .interval import Box, BoundsLike
from .kernel import KernelProgram, execute
from .lipschitz import LipschitzReport, lipschitz_constant, supremum_bound, weight_box_from_norm
from .ops import Op, apply_unary

logger = logging.getLogger(__name__)

# Share of projected weight coordinates above which training is flagged as biased.
BIAS_WARNING_FRACTION = 0.5


class Activation(str, enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    RELU = "relu"
    LINEAR = "linear"


class Loss(str, enum.Enum):
    MSE = "mse"
    LOGISTIC = "logistic"


class Init(str, enum.Enum):
    XAVIER = "xavier"
    NORMAL = "normal"
    ZEROS = "zeros"


class TrainMode(str, enum.Enum):
    PRECOMPUTED_K = "precomputed-K"
    PER_STEP_K = "per-step-K"
    CLIP_BASELINE = "clip-baseline"


class Sampling(str, enum.Enum):
    POISSON = "poisson"
    UNIFORM = "uniform"


class Projection(str, enum.Enum):
    CLIP = "clip"
    RESCALE = "rescale"


@dataclass(frozen=True)
class ModelSpec:
    """
    Fully connected network with a scalar output.

    Parameters
    ----------
    layer_sizes : sequence of int
        Units per layer, input first; the last entry must be 1.
    activation : {"tanh", "sigmoid", "relu", "linear"}, default "tanh"
        Hidden-layer activation; the output layer is affine.
    loss : {"mse", "logistic"}, default "mse"
        ``(z - y)^2`` or ``log(1 + exp(z)) - y*z`` of the output ``z``.
    init : {"xavier", "normal", "zeros"}, default "xavier"
    seed : int, default 0
        Seed of the weight initialisation.
    """

    layer_sizes: Tuple[int, ...]
    activation: Activation = Activation.TANH
    loss: Loss = Loss.MSE
    init: Init = Init.XAVIER
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError(f"A model needs at least 2 layers, got {list(sizes)}")
        if any(n <= 0 for n in sizes):
            raise ValueError(f"Layer sizes must be positive, got {list(sizes)}")
        if sizes[-1] != 1:
            raise ValueError(f"The last layer must have size 1, got {sizes[-1]}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "init", Init(self.init))

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def parameter_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(len(sizes) - 1))

    @property
    def feature_names(self) -> List[str]:
        return [f"x{i + 1}" for i in range(self.n_features)]

    @property
    def parameter_names(self) -> List[str]:
        """``w_l_i_j`` then ``b_l_j`` for each layer ``l``, all 1-based."""
        names = []
        for l in range(len(self.layer_sizes) - 1):
            fan_in, fan_out = self.layer_sizes[l], self.layer_sizes[l + 1]
            names += [f"w_{l + 1}_{i + 1}_{j + 1}" for i in range(fan_in) for j in range(fan_out)]
            names += [f"b_{l + 1}_{j + 1}" for j in range(fan_out)]
        return names


def build_loss_graph(spec: ModelSpec) -> ExprGraph:
    """
    Per-individual loss ``L(theta, x, y)`` of ``spec`` as an expression graph.

    Variables are declared as features ``x1 .. xd``, target ``y``, then the
    parameters in :attr:`ModelSpec.parameter_names` order. The graph has two
    roots: ``loss`` (first) and ``output``.

    Raises
    ------
    ConstructionError
        The activation has no graph form.
    """
    g = ExprGraph()
    units = [g.declare(name, Role.FEATURE) for name in spec.feature_names]
    target = g.declare("y", Role.TARGET)
    n_layers = len(spec.layer_sizes) - 1
    for l in range(n_layers):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        weights = [
            [g.declare(f"w_{l + 1}_{i + 1}_{j + 1}", Role.WEIGHT) for j in range(fan_out)]
            for i in range(fan_in)
        ]
        biases = [g.declare(f"b_{l + 1}_{j + 1}", Role.BIAS) for j in range(fan_out)]
        layer = []
        for j in range(fan_out):
            z = g.mul(weights[0][j], units[0])
            for i in range(1, fan_in):
                z = g.add(z, g.mul(weights[i][j], units[i]))
            z = g.add(z, biases[j])
            if l < n_layers - 1:
                z = _activate(g, spec.activation, z)
            layer.append(z)
        units = layer

    output = units[0]
    if spec.loss == Loss.MSE:
        loss = g.pow(g.sub(output, target), g.const(2.0))
    else:
        softplus = g.log(g.add(g.const(1.0), g.exp(output)))
        loss = g.sub(softplus, g.mul(target, output))
    g.add_root(loss, "loss")
    g.add_root(output, "output")
    logger.debug(
        "Built %s loss graph for layers %s: %d parameter(s), %d node(s)",
        spec.loss.value,
        list(spec.layer_sizes),
        spec.parameter_count,
        len(g),
    )
    return g


def _activate(g: ExprGraph, activation: Activation, z: int) -> int:
    if activation == Activation.TANH:
        return g.tanh(z)
    if activation == Activation.SIGMOID:
        return g.sigmoid(z)
    if activation == Activation.RELU:
        return g.relu(z)
    if activation == Activation.LINEAR:
        return z
    raise ConstructionError(f"Unsupported activation '{activation}'")


def init_weights(spec: ModelSpec) -> Dict[str, float]:
    """Initial parameters by ``spec.init``; biases start at 0."""
    rng = np.random.default_rng(spec.seed)
    weights: Dict[str, float] = {}
    for l in range(len(spec.layer_sizes) - 1):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        if spec.init == Init.XAVIER:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        elif spec.init == Init.NORMAL:
            values = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
        else:
            values = np.zeros((fan_in, fan_out))
        for i in range(fan_in):
            for j in range(fan_out):
                weights[f"w_{l + 1}_{i + 1}_{j + 1}"] = float(values[i, j])
        for j in range(fan_out):
            weights[f"b_{l + 1}_{j + 1}"] = 0.0
    return weights


def predict(spec: ModelSpec, weights: Mapping[str, float], features: np.ndarray) -> np.ndarray:
    """Network output ``z`` for every row of ``features``."""
    units = np.asarray(features, dtype=np.float64)
    if units.ndim != 2 or units.shape[1] != spec.n_features:
        raise ValueError(f"Expected features of shape (n, {spec.n_features}), got {units.shape}")
    n_layers = len(spec.layer_sizes) - 1
    for l in range(n_layers):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        w = np.array(
            [[weights[f"w_{l + 1}_{i + 1}_{j + 1}"] for j in range(fan_out)] for i in range(fan_in)]
        )
        b = np.array([weights[f"b_{l + 1}_{j + 1}"] for j in range(fan_out)])
        units = units @ w + b
        if l < n_layers - 1:
            units = _activate_array(spec.activation, units)
    return units[:, 0]


def _activate_array(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation == Activation.TANH:
        return apply_unary(Op.TANH, z)
    if activation == Activation.SIGMOID:
        return apply_unary(Op.SIGMOID, z)
    if activation == Activation.RELU:
        return np.where(z <= 0, 0.0, z)
    return z


def accuracy(spec: ModelSpec, weights: Mapping[str, float], dataset: Dataset) -> float:
    """Share of rows whose thresholded output matches the 0/1 target."""
    z = predict(spec, weights, dataset.features)
    threshold = 0.0 if spec.loss == Loss.LOGISTIC else 0.5
    return float(np.mean((z >= threshold) == (dataset.targets >= 0.5)))


@dataclass
class PrecompiledKernels:
    """
    Ahead-of-time kernels for one loss graph.

    Every kernel reads the data columns ``x1 .. xd, y`` followed by the
    parameters, in ``inputs`` order.
    """

    loss: KernelProgram
    grad: KernelProgram
    norm: KernelProgram
    joint: KernelProgram
    inputs: List[str]
    parameters: List[str]
    norm_graph: ExprGraph
    compile_seconds: float = 0.0

    @property
    def data_inputs(self) -> List[str]:
        return [name for name in self.inputs if name not in self.parameters]


def precompute_kernels(graph: ExprGraph) -> PrecompiledKernels:
    """
    Compile the loss, its per-parameter gradient and the gradient norm.

    Runs before any data is seen. The joint kernel computes ``loss``, the
    partials ``d_<param>`` and ``norm`` in one pass, sharing subterms.

    Parameters
    ----------
    graph : ExprGraph
        Loss graph from :func:`build_loss_graph`; it is not modified.
    """
    start = time.perf_counter()
    work = graph.copy()
    loss = work.root("loss")
    params = [spec for spec in work.vars if spec.is_parameter]
    if not params:
        raise ValueError("Loss graph has no weight or bias variables")
    bundle = grad(work, loss, params)
    norm = grad_norm(bundle)
    inputs = work.var_names
    labels = [f"d_{name}" for name in bundle.names]
    kernels = PrecompiledKernels(
        loss=aot(work, [loss], labels=["loss"], inputs=inputs),
        grad=aot(work, bundle.partials, labels=labels, inputs=inputs),
        norm=aot(work, [norm], labels=["norm"], inputs=inputs),
        joint=aot(work, [loss, *bundle.partials, norm], labels=["loss", *labels, "norm"], inputs=inputs),
        inputs=inputs,
        parameters=bundle.names,
        norm_graph=rebuild(work, [norm], labels=["norm"])[0],
    )
    kernels.compile_seconds = time.perf_counter() - start
    logger.info(
        "Precompiled kernels for %d parameter(s) in %.3f s (joint kernel: %d instructions)",
        len(params),
        kernels.compile_seconds,
        len(kernels.joint),
    )
    return kernels


@dataclass
class TrainConfig:
    """
    DP-SGD settings.

    Parameters
    ----------
    mode : {"precomputed-K", "per-step-K", "clip-baseline"}
    learning_rate : float, default 0.1
    noise_multiplier : float, default 1.0
        Read according to ``noise_convention``; 0 disables noise and
        privacy accounting.
    lot_size : int, default 32
        Expected lot size ``L``.
    steps : int, default 100
    weight_radius : float, optional
        Required for ``precomputed-K``; every parameter is kept in
        ``[-r, r]``. In ``per-step-K`` mode it caps ``K_t`` while the
        weights stay in the box.
    clip_norm : float, optional
        Required for ``clip-baseline``.
    input_box : mapping of str to (lo, hi), optional
        Bounds for ``x1 .. xd`` and ``y``; required unless clipping.
    sampling : {"poisson", "uniform"}, default "poisson"
    seed : int, default 0
    tolerance : float, default 1e-2
        Relative gap for the Lipschitz branch-and-bound.
    lipschitz_budget : int, default 2000
        Expansions for the precomputed constant.
    per_step_budget : int, default 10000
        Expansions for each per-step constant.
    noise_convention : {"multiplier", "variance", "absolute"}, default "multiplier"
    projection : {"clip", "rescale"}, default "clip"
        Clip each coordinate into the box, or scale the whole parameter
        vector until it fits.
    delta : float, default 1e-5
        Target delta of the reported epsilon.
    workers : int, default 1
        Threads for per-sample kernel execution.
    """

    mode: Union[TrainMode, str]
    learning_rate: float = 0.1
    noise_multiplier: float = 1.0
    lot_size: int = 32
    steps: int = 100
    weight_radius: Optional[float] = None
    clip_norm: Optional[float] = None
    input_box: Optional[Mapping[str, BoundsLike]] = None
    sampling: Union[Sampling, str] = Sampling.POISSON
    seed: int = 0
    tolerance: float = 1e-2
    lipschitz_budget: int = 2000
    per_step_budget: int = 10_000
    noise_convention: Union[NoiseConvention, str] = NoiseConvention.MULTIPLIER
    projection: Union[Projection, str] = Projection.CLIP
    delta: float = 1e-5
    workers: int = 1

    def __post_init__(self):
        self.mode = TrainMode(self.mode)
        self.sampling = Sampling(self.sampling)
        self.noise_convention = NoiseConvention(self.noise_convention)
        self.projection = Projection(self.projection)
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (math.isfinite(self.noise_multiplier) and self.noise_multiplier >= 0):
            raise ValueError(f"noise_multiplier must be non-negative, got {self.noise_multiplier}")
        if int(self.lot_size) != self.lot_size or self.lot_size <= 0:
            raise ValueError(f"lot_size must be a positive integer, got {self.lot_size}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        self.lot_size, self.steps = int(self.lot_size), int(self.steps)
        for name in ("weight_radius", "clip_norm"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")

        required = {
            TrainMode.PRECOMPUTED_K: ("weight_radius", "input_box"),
            TrainMode.PER_STEP_K: ("input_box",),
            TrainMode.CLIP_BASELINE: ("clip_norm",),
        }[self.mode]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"Mode '{self.mode.value}' requires: {missing}")
        if self.mode == TrainMode.CLIP_BASELINE and self.weight_radius is not None:
            raise ValueError("weight_radius is not used in mode 'clip-baseline'")
        if self.mode != TrainMode.CLIP_BASELINE and self.clip_norm is not None:
            raise ValueError(f"clip_norm is not used in mode '{self.mode.value}'")
        if self.input_box is not None:
            self.input_box = Box(self.input_box)


def sample_lot(n: int, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Indices of one lot.

    Poisson sampling includes each row independently with probability
    ``L / n`` (the lot may be empty); uniform sampling draws exactly ``L``
    distinct rows. Indices are returned sorted.
    """
    size = config.lot_size
    if size > n:
        raise ValueError(f"Lot size {size} exceeds dataset size {n}")
    if config.sampling == Sampling.POISSON:
        return np.flatnonzero(rng.random(n) < size / n)
    return np.sort(rng.choice(n, size=size, replace=False))


@dataclass
class StepRecord:
    step: int
    lot_size: int
    loss: Optional[float]
    max_norm: Optional[float]
    mean_norm: Optional[float]
    k: float
    noise_std: float
    clipped: int
    projected: int


@dataclass
class TrainReport:
    """Outcome of :func:`train`."""

    mode: str
    records: List[StepRecord]
    weights: Dict[str, float]
    ledger: PrivacyLedger
    delta: float
    lipschitz: Optional[LipschitzReport] = None
    bias_warning: bool = False
    violations: List[int] = field(default_factory=list)

    @property
    def epsilon(self) -> Optional[float]:
        """Epsilon at ``delta``; None when training ran without noise."""
        if any(r.noise_std == 0 for r in self.records):
            return None
        return self.ledger.to_eps_delta(self.delta)[0]

    @property
    def total_clipped(self) -> int:
        return sum(r.clipped for r in self.records)

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in StepRecord.__dataclass_fields__.values()]
        if not self.records:
            return pd.DataFrame(columns=columns)
        return pd.DataFrame([asdict(r) for r in self.records], columns=columns)

    def summary(self) -> Dict[str, Any]:
        eps = self.epsilon
        order = self.ledger.to_eps_delta(self.delta)[1] if eps is not None else None
        return {
            "summary": True,
            "mode": self.mode,
            "steps": len(self.records),
            "weights": dict(self.weights),
            "epsilon": eps,
            "delta": self.delta,
            "order": order,
            "total_clipped": self.total_clipped,
            "bias_warning": self.bias_warning,
            "k_upper": self.lipschitz.k_upper if self.lipschitz else None,
            "k_lower": self.lipschitz.k_lower if self.lipschitz else None,
        }

    def to_jsonl(self) -> str:
        """One JSON object per step, then a summary object."""
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"


def _project(theta: np.ndarray, radius: float, how: Projection) -> Tuple[np.ndarray, int]:
    outside = int(np.count_nonzero(np.abs(theta) > radius))
    if not outside:
        return theta, 0
    if how == Projection.CLIP:
        return np.clip(theta, -radius, radius), outside
    return theta * (radius / np.max(np.abs(theta))), outside


def _per_step_k(
    kernels: PrecompiledKernels,
    theta: Mapping[str, float],
    data_box: Box,
    config: TrainConfig,
) -> float:
    residual = partial_evaluate(kernels.norm_graph, theta)
    try:
        result = supremum_bound(
            residual,
            residual.root("norm"),
            data_box,
            tolerance=config.tolerance,
            budget=config.per_step_budget,
            split_rule="width",
        )
    except IntervalDomainError as exc:
        raise NotLipschitzError(exc) from None
    return result.upper


def train(spec: ModelSpec, config: TrainConfig, dataset: Dataset) -> TrainReport:
    """
    Run DP-SGD and account its privacy cost.

    Each step samples a lot, computes per-sample gradients and norms with
    the precompiled joint kernel, bounds their sensitivity by the mode,
    adds Gaussian noise to the summed gradient and takes one step on the
    noisy mean. The mean divides by the expected lot size ``L``, so an empty
    Poisson lot still performs a noise-only step that is accounted.

    Parameters
    ----------
    spec : ModelSpec
    config : TrainConfig
    dataset : Dataset
        Features must match ``spec`` and lie in ``config.input_box``.

    Returns
    -------
    TrainReport

    Raises
    ------
    DataBoundsError
        Rows lie outside the input box (indices listed).
    NotLipschitzError
        The gradient norm is unbounded on the box.
    ValueError
        Empty dataset, wrong feature count or lot size above the dataset size.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot train on an empty dataset")
    if dataset.n_features != spec.n_features:
        raise ValueError(
            f"Dataset has {dataset.n_features} feature(s), model expects {spec.n_features}"
        )
    if config.lot_size > len(dataset):
        raise ValueError(f"Lot size {config.lot_size} exceeds dataset size {len(dataset)}")
    if config.input_box is not None:
        check_in_box(dataset, config.input_box)

    graph = build_loss_graph(spec)
    kernels = precompute_kernels(graph)
    names = kernels.parameters
    theta = np.array([init_weights(spec)[name] for name in names])

    k_pre: Optional[float] = None
    lipschitz: Optional[LipschitzReport] = None
    data_box: Optional[Box] = None
    if config.input_box is not None:
        missing = [name for name in kernels.data_inputs if name not in config.input_box]
        if missing:
            raise UnboundedVariablesError(missing)
        data_box = config.input_box.restrict(kernels.data_inputs)
    if config.weight_radius is not None:
        weight_box = weight_box_from_norm(names, config.weight_radius)
        lipschitz = lipschitz_constant(
            graph,
            graph.root("loss"),
            data_box.merge(weight_box),
            tolerance=config.tolerance,
            budget=config.lipschitz_budget,
            wrt=names,
            split_rule="width",
            include_closed_form=False,
        )
        k_pre = lipschitz.k_upper
    if config.mode == TrainMode.PRECOMPUTED_K:
        theta, _ = _project(theta, config.weight_radius, config.projection)

    sampling_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    )
    stacked = dataset.stacked()
    ledger = PrivacyLedger()
    records: List[StepRecord] = []
    violations: List[int] = []
    bias_warning = False
    if config.noise_multiplier == 0 and config.steps:
        logger.warning("noise_multiplier is 0: training is not private and is not accounted")

    for step in range(config.steps):
        lot = sample_lot(len(dataset), config, sampling_rng)
        if lot.size:
            batch = np.hstack([stacked[lot], np.tile(theta, (lot.size, 1))])
            out = execute(kernels.joint, batch, workers=config.workers)
            losses, grads, norms = out[:, 0], out[:, 1:-1], out[:, -1]
        else:
            losses, grads, norms = np.empty(0), np.empty((0, theta.size)), np.empty(0)

        if config.mode == TrainMode.CLIP_BASELINE:
            k = config.clip_norm
            no_clip, factors = clip_factors(norms, k)
            clipped = int(np.count_nonzero(~no_clip))
            std = 0.0
            if config.noise_multiplier:
                std = noise_std(k, config.noise_multiplier, config.noise_convention)
        else:
            if config.mode == TrainMode.PRECOMPUTED_K:
                k = k_pre
            else:
                k = _per_step_k(kernels, dict(zip(names, theta)), data_box, config)
                if k_pre is not None and np.all(np.abs(theta) <= config.weight_radius):
                    k = min(k, k_pre)
            if config.noise_multiplier:
                calibrated = per_step_sensitivity_noise(
                    norms, k, config.noise_multiplier, config.noise_convention
                )
                factors, std = calibrated.clip_factors, calibrated.noise_std
                bad = calibrated.violations
            else:
                no_clip, factors = clip_factors(norms, k)
                std, bad = 0.0, np.flatnonzero(~no_clip)
            clipped = int(bad.size)
            violations.extend(int(lot[i]) for i in bad)

        total = (grads * factors[:, None]).sum(axis=0) if lot.size else np.zeros(theta.size)
        if std > 0:
            total = total + noise_rng.normal(0.0, std, size=theta.size)
            ledger.compose(
                GaussianMechanism.from_noise(k, config.noise_multiplier, config.noise_convention),
                step=step,
            )
        theta = theta - config.learning_rate * total / config.lot_size

        projected = 0
        if config.mode == TrainMode.PRECOMPUTED_K:
            theta, projected = _project(theta, config.weight_radius, config.projection)
            if projected > BIAS_WARNING_FRACTION * theta.size and not bias_warning:
                bias_warning = True
                logger.warning(
                    "Step %d projected %d of %d parameters into the weight box; "
                    "the weight bound may bias training",
                    step,
                    projected,
                    theta.size,
                )

        records.append(
            StepRecord(
                step=step,
                lot_size=int(lot.size),
                loss=float(losses.mean()) if lot.size else None,
                max_norm=float(norms.max()) if lot.size else None,
                mean_norm=float(norms.mean()) if lot.size else None,
                k=float(k),
                noise_std=float(std),
                clipped=clipped,
                projected=projected,
            )
        )
        logger.debug(
            "Step %d: lot %d, K %.6g, max norm %s, clipped %d",
            step,
            lot.size,
            k,
            records[-1].max_norm,
            clipped,
        )

    report = TrainReport(
        mode=config.mode.value,
        records=records,
        weights=dict(zip(names, map(float, theta))),
        ledger=ledger.snapshot(),
        delta=config.delta,
        lipschitz=lipschitz,
        bias_warning=bias_warning,
        violations=sorted(set(violations)),
    )
    logger.info(
        "Trained %d step(s) in mode %s; epsilon %s at delta %g",
        len(records),
        report.mode,
        report.epsilon,
        config.delta,
    )
    return report


_SECTIONS = {
    TrainMode.PRECOMPUTED_K: "precomputed_k",
    TrainMode.PER_STEP_K: "per_step_k",
    TrainMode.CLIP_BASELINE: "clip_baseline",
}
_MODEL_KEYS = {"layers", "activation", "loss", "init", "seed"}
_TRAIN_KEYS = {
    "mode",
    "learning_rate",
    "noise_multiplier",
    "lot_size",
    "steps",
    "sampling",
    "seed",
    "tolerance",
    "noise_convention",
    "delta",
    "workers",
}
_MODE_KEYS = {
    TrainMode.PRECOMPUTED_K: {"weight_radius", "projection", "budget"},
    TrainMode.PER_STEP_K: {"weight_radius", "budget", "per_step_budget"},
    TrainMode.CLIP_BASELINE: {"clip_norm"},
}


def _check_keys(section: str, table: Mapping[str, Any], allowed: set):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ValueError(f"Unknown key(s) in [{section}]: {unknown}. Allowed keys: {sorted(allowed)}")


def config_from_dict(data: Mapping[str, Any]) -> Tuple[ModelSpec, TrainConfig]:
    """
    Model and training settings from a parsed TOML document.

    Sections: ``[model]``, ``[train]``, ``[box]`` and the section of the
    chosen mode (``[precomputed_k]``, ``[per_step_k]`` or
    ``[clip_baseline]``); sections of other modes are ignored.
    """
    model = dict(data.get("model", {}))
    settings = dict(data.get("train", {}))
    _check_keys("model", model, _MODEL_KEYS)
    _check_keys("train", settings, _TRAIN_KEYS)
    if "layers" not in model:
        raise ValueError("[model] needs 'layers'")
    if "mode" not in settings:
        raise ValueError("[train] needs 'mode'")
    spec = ModelSpec(tuple(model.pop("layers")), **model)
    mode = TrainMode(settings["mode"])
    extra = dict(data.get(_SECTIONS[mode], {}))
    _check_keys(_SECTIONS[mode], extra, _MODE_KEYS[mode])
    if "budget" in extra:
        key = "lipschitz_budget" if mode == TrainMode.PRECOMPUTED_K else "per_step_budget"
        extra.setdefault(key, extra.pop("budget"))
    box = {name: tuple(bounds) for name, bounds in data.get("box", {}).items()}
    config = TrainConfig(**settings, **extra, input_box=box or None)
    return spec, config


def load_train_config(path: Union[str, Path]) -> Tuple[ModelSpec, TrainConfig]:
    """Read a TOML training configuration; see :func:`config_from_dict`."""
    return config_from_dict(read_toml(path))


def benchmark_compile(
    hidden_sizes: Sequence[int] = (2, 25, 250),
    n_features: int = 2,
    activation: Union[Activation, str] = Activation.TANH,
) -> pd.DataFrame:
    """
    Time :func:`precompute_kernels` for ``d-h-1`` networks of growing width.

    The default widths give roughly 10, 100 and 1000 parameters.

    Returns
    -------
    pd.DataFrame
        Columns ``hidden``, ``parameters``, ``graph_nodes``,
        ``instructions`` and ``seconds``.
    """
    rows = []
    for hidden in hidden_sizes:
        spec = ModelSpec((n_features, hidden, 1), activation=activation)
        graph = build_loss_graph(spec)
        kernels = precompute_kernels(graph)
        rows.append(
            {
                "hidden": hidden,
                "parameters": spec.parameter_count,
                "graph_nodes": len(graph),
                "instructions": len(kernels.joint),
                "seconds": kernels.compile_seconds,
            }
        )
        logger.info(
            "Compiled %d parameter(s) in %.3f s", spec.parameter_count, kernels.compile_seconds
        )
    return pd.DataFrame(
        rows, columns=["hidden", "parameters", "graph_nodes", "instructions", "seconds"]
    )
