"""
Command-line interface

``hadiff derive``  closed-form partials and gradient norm of an expression
``hadiff analyze`` Lipschitz constant over a box, plus an RDP line
``hadiff compile`` lower an expression (and optionally its gradient) to a kernel
``hadiff train``   DP-SGD from a TOML config and a dataset
``hadiff ledger``  privacy ledgers: build one or convert an export

Exit status is 0 on success, 2 for usage, parse or analysis errors and 3 for
data errors. JSON output is deterministic; timings only go to the log.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .accountant import DEFAULT_ORDERS, GaussianMechanism, NoiseConvention, PrivacyLedger, rdp_epsilon
from .autodiff import grad, grad_norm
from .compiler import CompileOptions, Mode, lower
from .core import ExprGraph, VarSpec
from .data import load_dataset
from .dpsgd import load_train_config, train
from .errors import DataBoundsError, HadiffError
from .kernel import save_kernel
from .lipschitz import DEFAULT_BUDGET, DEFAULT_TOLERANCE, lipschitz_constant
from .parser import load_declarations, parse, parse_declarations, print_expr

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class DataError(Exception):
    """Raised by subcommands for problems with the input dataset."""


def _csv(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_expr_flags(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--expr", help="Expression text.")
    source.add_argument("--expr-file", type=Path, help="File holding the expression.")
    parser.add_argument(
        "--bounds-file", type=Path, help="Variable declarations, one 'role name in [lo, hi]' per line."
    )
    parser.add_argument(
        "--bounds",
        action="append",
        default=[],
        metavar="DECL",
        help="Inline declaration such as 'a in [20, 80]'; may be repeated.",
    )
    parser.add_argument("--wrt", type=_csv, help="Comma-separated variables to differentiate by.")


def _add_output_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--out", type=Path, help="Write the result here instead of stdout.")
    parser.add_argument("--format", choices=["json", "text"], default="json")


def _add_seed_flag(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--seed", type=int, default=0, help="Accepted on every subcommand; this one is deterministic."
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hadiff",
        description="Hybrid symbolic automatic differentiation and sensitivity analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-vv for debug).")
    commands = parser.add_subparsers(dest="command", required=True)

    derive = commands.add_parser("derive", help="Print closed-form partials and the gradient norm.")
    _add_expr_flags(derive)
    _add_output_flags(derive)
    _add_seed_flag(derive)

    analyze = commands.add_parser("analyze", help="Bound the gradient norm over a box.")
    _add_expr_flags(analyze)
    _add_output_flags(analyze)
    analyze.add_argument("--alpha", type=float, help="RDP order for the privacy line.")
    analyze.add_argument("--sigma", type=float, help="Absolute noise standard deviation.")
    analyze.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    analyze.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    _add_seed_flag(analyze)

    compile_ = commands.add_parser("compile", help="Lower an expression to a kernel.")
    _add_expr_flags(compile_)
    _add_output_flags(compile_)
    compile_.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.AOT.value)
    compile_.add_argument("--grad", action="store_true", help="Also compile the partials and the norm.")
    compile_.add_argument("--kernel-out", type=Path, help="Write the kernel as a binary artifact.")
    _add_seed_flag(compile_)

    train_ = commands.add_parser("train", help="Run DP-SGD.")
    train_.add_argument("--config", type=Path, required=True, help="TOML training configuration.")
    train_.add_argument("--data", type=Path, required=True, help="CSV or xlsx dataset.")
    train_.add_argument("--sheet", help="Worksheet of an xlsx dataset.")
    train_.add_argument("--steps", type=int, help="Override the configured step count.")
    train_.add_argument("--seed", type=int, help="Override the configured seed.")
    train_.add_argument("--ledger-out", type=Path, help="Write the ledger export here.")
    _add_output_flags(train_)

    ledger = commands.add_parser("ledger", help="Compose Gaussian steps or convert a ledger export.")
    ledger.add_argument("--input", type=Path, help="Ledger export to convert.")
    ledger.add_argument("--steps", type=int, default=0)
    ledger.add_argument("--sensitivity", type=float, default=1.0)
    ledger.add_argument("--sigma", type=float, help="Noise parameter read by --convention.")
    ledger.add_argument(
        "--convention", choices=[c.value for c in NoiseConvention], default=NoiseConvention.MULTIPLIER.value
    )
    ledger.add_argument("--delta", type=float, action="append", help="May be repeated; default 1e-5.")
    ledger.add_argument("--orders", type=_csv, help="Comma-separated RDP orders.")
    _add_seed_flag(ledger)
    _add_output_flags(ledger)
    return parser


def _load_graph(args: argparse.Namespace) -> ExprGraph:
    text = args.expr if args.expr is not None else args.expr_file.read_text(encoding="utf-8")
    declarations: List[VarSpec] = []
    if args.bounds_file is not None:
        declarations += load_declarations(args.bounds_file)
    if args.bounds:
        declarations += parse_declarations("\n".join(args.bounds))
    return parse(text, declarations)


def _emit(args: argparse.Namespace, payload: Dict[str, Any], text: str):
    if args.format == "json":
        output = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        output = text if text.endswith("\n") else text + "\n"
    if args.out is not None:
        args.out.write_text(output, encoding="utf-8")
        logger.info("Wrote %s", args.out)
    else:
        sys.stdout.write(output)


def cmd_derive(args: argparse.Namespace) -> int:
    graph = _load_graph(args)
    root = graph.root()
    bundle = grad(graph, root, args.wrt)
    norm = grad_norm(bundle)
    partials = {name: print_expr(graph, ref) for name, ref in zip(bundle.names, bundle.partials)}
    payload = {
        "expression": print_expr(graph, root),
        "wrt": bundle.names,
        "partials": partials,
        "norm": print_expr(graph, norm),
    }
    lines = [f"d/d{name} = {expr}" for name, expr in partials.items()]
    lines.append(f"norm = {payload['norm']}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    if (args.alpha is None) != (args.sigma is None):
        raise HadiffError("--alpha and --sigma must be given together")
    graph = _load_graph(args)
    report = lipschitz_constant(
        graph, graph.root(), tolerance=args.tolerance, budget=args.budget, wrt=args.wrt
    )
    payload: Dict[str, Any] = report.to_dict()
    lines = [
        f"K in [{report.k_lower:.10g}, {report.k_upper:.10g}] after {report.iterations} expansion(s)",
        f"witness: {report.witness}",
    ]
    if args.alpha is not None:
        mech = GaussianMechanism.absolute(report.k_upper, args.sigma)
        eps = rdp_epsilon(mech, args.alpha)
        payload["rdp"] = {"alpha": args.alpha, "epsilon": eps, "sigma": args.sigma}
        lines.append(f"({args.alpha:g}, {eps:.10g})-RDP with noise std {args.sigma:g}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_compile(args: argparse.Namespace) -> int:
    graph = _load_graph(args)
    root = graph.root()
    roots, labels = [root], ["f"]
    if args.grad:
        bundle = grad(graph, root, args.wrt)
        norm = grad_norm(bundle)
        roots += [*bundle.partials, norm]
        labels += [f"d_{name}" for name in bundle.names] + ["norm"]
    kernel = lower(graph, roots, CompileOptions(args.mode), labels=labels)
    if args.kernel_out is not None:
        save_kernel(kernel, args.kernel_out)
    payload = {
        "inputs": list(kernel.input_layout),
        "outputs": list(kernel.output_layout),
        "instructions": len(kernel),
        "op_counts": kernel.op_counts(),
        "mode": args.mode,
    }
    _emit(args, payload, kernel.listing())
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    spec, config = load_train_config(args.config)
    overrides = {"steps": args.steps, "seed": args.seed}
    config = dataclasses.replace(config, **{k: v for k, v in overrides.items() if v is not None})
    try:
        dataset = load_dataset(args.data, sheet=args.sheet)
        report = train(spec, config, dataset)
    except (DataBoundsError, OSError) as exc:
        raise DataError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, HadiffError):
            raise
        raise DataError(str(exc)) from exc
    if args.ledger_out is not None:
        args.ledger_out.write_text(report.ledger.to_json([config.delta]) + "\n", encoding="utf-8")
    if args.format == "json":
        output = report.to_jsonl()
    else:
        summary = report.summary()
        output = (
            f"{summary['steps']} step(s) in mode {summary['mode']}, "
            f"{summary['total_clipped']} clipped, epsilon {summary['epsilon']} at delta {config.delta:g}\n"
        )
    if args.out is not None:
        args.out.write_text(output, encoding="utf-8")
    else:
        sys.stdout.write(output)
    return EXIT_OK


def cmd_ledger(args: argparse.Namespace) -> int:
    deltas = args.delta or [1e-5]
    if args.input is not None:
        ledger = PrivacyLedger.from_dict(json.loads(args.input.read_text(encoding="utf-8")))
    else:
        orders = [float(a) for a in args.orders] if args.orders else DEFAULT_ORDERS
        ledger = PrivacyLedger(orders)
        if args.steps < 0:
            raise HadiffError(f"--steps must be non-negative, got {args.steps}")
        if args.steps:
            if args.sigma is None:
                raise HadiffError("--sigma is required with --steps")
            mech = GaussianMechanism.from_noise(args.sensitivity, args.sigma, args.convention)
            for step in range(args.steps):
                ledger.compose(mech, step=step)
    payload = ledger.to_dict(deltas)
    lines = [f"alpha {a:g}: {e:.10g}" for a, e in ledger.rdp.items()]
    lines += [
        f"({c['epsilon']:.10g}, {c['delta']:g})-DP at order {c['order']:g}" for c in payload["conversions"]
    ]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "derive": cmd_derive,
    "analyze": cmd_analyze,
    "compile": cmd_compile,
    "train": cmd_train,
    "ledger": cmd_ledger,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the ``hadiff`` console script; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"hadiff {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"hadiff {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
