"""
hadiff: hybrid symbolic automatic differentiation for sensitivity analysis

This package builds expression graphs, differentiates them in reverse mode
into closed-form gradients, compiles those gradients into batch kernels, and
bounds gradient norms over input boxes with interval branch-and-bound. The
resulting local Lipschitz constants calibrate Gaussian noise for Renyi
differentially private training without per-sample gradient clipping.
"""

from .accountant import (
    GaussianMechanism,
    NoiseConvention,
    PrivacyLedger,
    compose,
    per_step_sensitivity_noise,
    rdp_epsilon,
    required_noise_std,
    to_eps_delta,
)
from .autodiff import GradientBundle, grad, grad_norm, gradient_table, hessian, per_sample_grads
from .bounds import propagate_bounds
from .compiler import CompileOptions, aot, jit, lower, partial_evaluate
from .core import ExprGraph, Role, VarSpec, evaluate
from .data import Dataset, check_in_box, load_dataset
from .dpsgd import (
    ModelSpec,
    TrainConfig,
    TrainReport,
    benchmark_compile,
    build_loss_graph,
    load_train_config,
    precompute_kernels,
    predict,
    sample_lot,
    train,
)
from .errors import (
    DomainError,
    HadiffError,
    NotLipschitzError,
    ParseError,
    UnboundVariableError,
)
from .interval import Box, Interval
from .kernel import KernelProgram, execute, load_kernel, save_kernel
from .lipschitz import LipschitzReport, lipschitz_constant, supremum_bound, weight_box_from_norm
from .parser import parse, parse_declarations, print_expr
from .simplify import simplify

__version__ = "0.1.0"
__all__ = [
    "Box",
    "CompileOptions",
    "Dataset",
    "DomainError",
    "ExprGraph",
    "GaussianMechanism",
    "GradientBundle",
    "HadiffError",
    "Interval",
    "KernelProgram",
    "LipschitzReport",
    "ModelSpec",
    "NoiseConvention",
    "NotLipschitzError",
    "ParseError",
    "PrivacyLedger",
    "Role",
    "TrainConfig",
    "TrainReport",
    "UnboundVariableError",
    "VarSpec",
    "aot",
    "benchmark_compile",
    "build_loss_graph",
    "check_in_box",
    "compose",
    "evaluate",
    "execute",
    "grad",
    "grad_norm",
    "gradient_table",
    "hessian",
    "jit",
    "lipschitz_constant",
    "load_dataset",
    "load_kernel",
    "load_train_config",
    "lower",
    "parse",
    "parse_declarations",
    "partial_evaluate",
    "per_sample_grads",
    "per_step_sensitivity_noise",
    "precompute_kernels",
    "predict",
    "print_expr",
    "propagate_bounds",
    "rdp_epsilon",
    "required_noise_std",
    "sample_lot",
    "save_kernel",
    "simplify",
    "supremum_bound",
    "to_eps_delta",
    "train",
    "weight_box_from_norm",
]
