"""
Lowering of expression graphs to kernel programs, with optimisation passes,
JIT/AOT pipelines and partial evaluation
"""

import enum
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ExprGraph, ExprNode, fast_exponent, rebuild, topo_order
from .errors import ConstructionError
from .kernel import Instruction, KernelProgram, KOp, save_kernel
from .ops import (
    Op,
    apply_binary,
    apply_powi,
    apply_unary,
    binary_violation,
    compare,
    powi_violation,
    quiet,
    unary_violation,
)
from .simplify import simplify

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    JIT = "jit"
    AOT = "aot"


class Pass(str, enum.Enum):
    CONSTANT_FOLD = "constant-fold"
    ALGEBRAIC_SIMPLIFY = "algebraic-simplify"
    CSE = "cse"
    DEAD_CODE = "dead-code"


DEFAULT_PASSES = {
    Mode.JIT: frozenset({Pass.CSE, Pass.DEAD_CODE}),
    Mode.AOT: frozenset(Pass),
}


@dataclass(frozen=True)
class CompileOptions:
    """
    Compilation settings.

    Parameters
    ----------
    mode : {"jit", "aot"}, default "jit"
        JIT lowers quickly with CSE and dead-code elimination; AOT enables
        every pass by default.
    passes : iterable of Pass or str, optional
        Explicit pass set, overriding the mode default. An empty set gives
        naive tree lowering.
    batch_hint : int, optional
        Rows per chunk when executing with several workers.
    """

    mode: Union[Mode, str] = Mode.JIT
    passes: Optional[Iterable[Union[Pass, str]]] = None
    batch_hint: Optional[int] = None

    def __post_init__(self):
        mode = Mode(self.mode)
        object.__setattr__(self, "mode", mode)
        if self.passes is None:
            passes: FrozenSet[Pass] = DEFAULT_PASSES[mode]
        else:
            passes = frozenset(Pass(p) for p in self.passes)
        object.__setattr__(self, "passes", passes)
        if self.batch_hint is not None and self.batch_hint <= 0:
            raise ValueError(f"batch_hint must be positive, got {self.batch_hint}")

    def enabled(self, step: Pass) -> bool:
        return step in self.passes


RootsLike = Optional[Sequence[Union[int, str]]]


def _resolve_roots(
    graph: ExprGraph, roots: RootsLike, labels: Optional[Sequence[str]]
) -> Tuple[List[int], List[str]]:
    if roots is None:
        if not graph.roots:
            raise ValueError("Graph has no roots to compile")
        refs, names = list(graph.roots), list(graph.root_labels)
    else:
        refs, names = [], []
        for item in roots:
            if isinstance(item, str):
                refs.append(graph.root(item))
                names.append(item)
            else:
                refs.append(int(item))
                names.append(
                    graph.root_labels[graph.roots.index(item)]
                    if item in graph.roots
                    else f"out{len(names)}"
                )
    if labels is not None:
        if len(labels) != len(refs):
            raise ValueError(f"Got {len(labels)} label(s) for {len(refs)} root(s)")
        names = list(labels)
    if len(set(names)) != len(names):
        raise ValueError(f"Duplicate output labels: {names}")
    return refs, names


class _Emitter:
    def __init__(self, graph: ExprGraph, inputs: Sequence[str]):
        self.graph = graph
        self.inputs = {name: i for i, name in enumerate(inputs)}
        self.instructions: List[Instruction] = []

    def emit(self, node: ExprNode, args: Sequence[int]) -> int:
        dest = len(self.instructions)
        op = node.op
        if op == Op.CONST:
            ins = Instruction(dest, KOp.LOAD_CONST, imm=node.value)
        elif op == Op.VAR:
            ins = Instruction(dest, KOp.LOAD_INPUT, a=self.inputs[node.var])
        elif op == Op.PIECEWISE:
            ins = Instruction(
                dest, KOp.SELECT, a=args[0], b=args[1], guard=(args[2], node.guard[1], args[3])
            )
        else:
            n = fast_exponent(self.graph, node)
            if n is not None:
                ins = Instruction(dest, KOp.POWI, a=args[0], imm=float(n))
            elif len(args) == 1:
                ins = Instruction(dest, KOp(op), a=args[0])
            else:
                ins = Instruction(dest, KOp(op), a=args[0], b=args[1])
        self.instructions.append(ins)
        return dest

    def shared(self, roots: Sequence[int]) -> List[int]:
        """Emit every distinct node once."""
        slot_of: Dict[int, int] = {}
        for ref in topo_order(self.graph, roots):
            node = self.graph.nodes[ref]
            if node.op == Op.POW and fast_exponent(self.graph, node) is not None:
                args = [slot_of[node.children[0]]]
            else:
                args = [slot_of[c] for c in node.operands]
            slot_of[ref] = self.emit(node, args)
        return [slot_of[r] for r in roots]

    def tree(self, root: int) -> int:
        """Emit ``root`` as a tree, re-emitting shared operands at every use."""
        results: List[int] = []
        work = [(root, False)]
        while work:
            ref, expanded = work.pop()
            node = self.graph.nodes[ref]
            operands = node.operands
            if node.op == Op.POW and fast_exponent(self.graph, node) is not None:
                operands = operands[:1]
            if operands and not expanded:
                work.append((ref, True))
                work.extend((c, False) for c in reversed(operands))
                continue
            args = results[len(results) - len(operands) :] if operands else []
            if operands:
                del results[len(results) - len(operands) :]
            results.append(self.emit(node, args))
        return results[0]


def _renumber(
    instructions: Sequence[Instruction],
    output_slots: Sequence[int],
    alias: Optional[Mapping[int, int]] = None,
    keep: Optional[set] = None,
) -> Tuple[List[Instruction], List[int]]:
    """Drop instructions not in ``keep``, resolve aliases and number slots densely."""
    alias = dict(alias or {})

    def resolve(slot: int) -> int:
        while slot in alias:
            slot = alias[slot]
        return slot

    new_slot: Dict[int, int] = {}
    result: List[Instruction] = []
    for ins in instructions:
        if ins.dest in alias or (keep is not None and ins.dest not in keep):
            continue

        def remap(slot: int) -> int:
            return new_slot[resolve(slot)]

        dest = len(result)
        if ins.op in (KOp.LOAD_INPUT, KOp.LOAD_CONST):
            new = Instruction(dest, ins.op, ins.a, 0, ins.imm)
        elif ins.op == KOp.SELECT:
            left, relation, right = ins.guard
            new = Instruction(
                dest, ins.op, remap(ins.a), remap(ins.b), guard=(remap(left), relation, remap(right))
            )
        elif len(ins.reads()) == 1:
            new = Instruction(dest, ins.op, remap(ins.a), 0, ins.imm)
        else:
            new = Instruction(dest, ins.op, remap(ins.a), remap(ins.b))
        new_slot[ins.dest] = dest
        result.append(new)
    return result, [new_slot[resolve(s)] for s in output_slots]


def _with_instructions(
    kernel: KernelProgram, instructions: List[Instruction], output_slots: List[int]
) -> KernelProgram:
    return KernelProgram(
        tuple(instructions),
        kernel.input_layout,
        kernel.output_layout,
        tuple(output_slots),
        len(instructions),
        kernel.batch_hint,
    )


def constant_fold(kernel: KernelProgram) -> KernelProgram:
    """
    Fold instructions whose operands are all constants.

    Folds that would hit a domain error are left in place so the error still
    surfaces for the rows that reach them. A SELECT with a constant guard
    becomes an alias of the branch it always takes.
    """
    known: Dict[int, float] = {}
    alias: Dict[int, int] = {}
    folded: List[Instruction] = []

    def resolve(slot: int) -> int:
        while slot in alias:
            slot = alias[slot]
        return slot

    with quiet():
        for ins in kernel.instructions:
            if ins.op == KOp.LOAD_CONST:
                known[ins.dest] = ins.imm
                folded.append(ins)
                continue
            if ins.op == KOp.LOAD_INPUT:
                folded.append(ins)
                continue
            if ins.op == KOp.SELECT:
                left, _, right = ins.guard
                left, right = resolve(left), resolve(right)
                if left in known and right in known:
                    taken = compare(
                        ins.guard[1], np.array([known[left]]), np.array([known[right]])
                    )[0]
                    alias[ins.dest] = resolve(ins.a if taken else ins.b)
                    if alias[ins.dest] in known:
                        known[ins.dest] = known[alias[ins.dest]]
                    continue
                folded.append(ins)
                continue
            operands = [resolve(s) for s in ins.reads()]
            if not all(s in known for s in operands):
                folded.append(ins)
                continue
            args = [np.array([known[s]]) for s in operands]
            if ins.op == KOp.POWI:
                value = apply_powi(args[0], int(ins.imm))
                violation = powi_violation(args[0], int(ins.imm))
            elif len(args) == 1:
                value = apply_unary(Op(ins.op), args[0])
                violation = unary_violation(Op(ins.op), args[0])
            else:
                value = apply_binary(Op(ins.op), args[0], args[1])
                violation = binary_violation(Op(ins.op), args[0], args[1])
            if violation is not None and violation[0]:
                folded.append(ins)
                continue
            known[ins.dest] = float(value[0])
            folded.append(Instruction(ins.dest, KOp.LOAD_CONST, imm=known[ins.dest]))
    instructions, outputs = _renumber(folded, kernel.output_slots, alias)
    return _with_instructions(kernel, instructions, outputs)


def dead_code(kernel: KernelProgram) -> KernelProgram:
    """Remove instructions whose results never reach an output."""
    live = set(kernel.output_slots)
    for ins in reversed(kernel.instructions):
        if ins.dest in live:
            live.update(ins.reads())
    instructions, outputs = _renumber(kernel.instructions, kernel.output_slots, keep=live)
    return _with_instructions(kernel, instructions, outputs)


def lower(
    graph: ExprGraph,
    roots: RootsLike = None,
    opts: Optional[CompileOptions] = None,
    labels: Optional[Sequence[str]] = None,
    inputs: Optional[Sequence[str]] = None,
) -> KernelProgram:
    """
    Compile graph roots into a kernel program.

    Parameters
    ----------
    graph : ExprGraph
        Source graph; it is not modified.
    roots : sequence of int or str, optional
        Nodes (or root labels) to compute; defaults to all graph roots.
    opts : CompileOptions, optional
        Mode and passes; defaults to JIT.
    labels : sequence of str, optional
        Output labels; defaults to the root labels.
    inputs : sequence of str, optional
        Input column order; defaults to every graph variable in
        declaration order.

    Returns
    -------
    KernelProgram
        Program whose outputs follow ``roots``. With CSE every distinct node
        is emitted once; without it shared subterms are re-emitted per use.
    """
    opts = opts or CompileOptions()
    refs, names = _resolve_roots(graph, roots, labels)
    inputs = list(inputs) if inputs is not None else graph.var_names
    missing = [name for name in graph.support(refs) if name not in inputs]
    if missing:
        raise ValueError(f"Input layout is missing variables: {missing}")
    unknown = [name for name in inputs if not graph.has_var(name)]
    if unknown:
        raise ValueError(f"Input layout names unknown variables: {unknown}")

    work = graph
    if opts.enabled(Pass.ALGEBRAIC_SIMPLIFY):
        work = graph.copy()
        refs = [simplify(work, ref, exact=True) for ref in refs]

    emitter = _Emitter(work, inputs)
    if opts.enabled(Pass.CSE):
        slots = emitter.shared(refs)
    else:
        slots = [emitter.tree(ref) for ref in refs]
    kernel = KernelProgram(
        tuple(emitter.instructions),
        tuple(inputs),
        tuple(names),
        tuple(slots),
        len(emitter.instructions),
        opts.batch_hint,
    )
    if opts.enabled(Pass.CONSTANT_FOLD):
        kernel = constant_fold(kernel)
    if opts.enabled(Pass.DEAD_CODE):
        kernel = dead_code(kernel)
    return kernel.validate()


def jit(
    graph: ExprGraph, roots: RootsLike = None, labels: Optional[Sequence[str]] = None
) -> KernelProgram:
    """Lower quickly (CSE and dead-code only) and return the kernel."""
    return lower(graph, roots, CompileOptions(Mode.JIT), labels)


def aot(
    graph: ExprGraph,
    roots: RootsLike = None,
    path: Optional[Union[str, Path]] = None,
    labels: Optional[Sequence[str]] = None,
    inputs: Optional[Sequence[str]] = None,
) -> KernelProgram:
    """
    Fully optimise a kernel, optionally writing it to ``path`` as a HADK file.
    """
    start = time.perf_counter()
    kernel = lower(graph, roots, CompileOptions(Mode.AOT), labels, inputs)
    logger.info(
        "AOT-compiled %d output(s) to %d instruction(s) in %.3f s",
        len(kernel.output_layout),
        len(kernel),
        time.perf_counter() - start,
    )
    if path is not None:
        save_kernel(kernel, path)
    return kernel


def _partial_kernel(kernel: KernelProgram, assignment: Mapping[str, float]) -> KernelProgram:
    unknown = [name for name in assignment if name not in kernel.input_layout]
    if unknown:
        raise ValueError(
            f"Unknown kernel input(s): {unknown}. Available inputs: {list(kernel.input_layout)}"
        )
    remaining = [name for name in kernel.input_layout if name not in assignment]
    position = {name: i for i, name in enumerate(remaining)}
    instructions = []
    for ins in kernel.instructions:
        if ins.op == KOp.LOAD_INPUT:
            name = kernel.input_layout[ins.a]
            if name in assignment:
                ins = Instruction(ins.dest, KOp.LOAD_CONST, imm=float(assignment[name]))
            else:
                ins = Instruction(ins.dest, KOp.LOAD_INPUT, a=position[name])
        instructions.append(ins)
    residual = KernelProgram(
        tuple(instructions),
        tuple(remaining),
        kernel.output_layout,
        kernel.output_slots,
        kernel.slot_count,
        kernel.batch_hint,
    )
    return dead_code(constant_fold(residual)).validate()


def partial_evaluate(
    target: Union[ExprGraph, KernelProgram],
    assignment: Mapping[str, float],
    roots: RootsLike = None,
) -> Union[ExprGraph, KernelProgram]:
    """
    Bind some inputs to numbers and fold what becomes constant.

    Parameters
    ----------
    target : ExprGraph or KernelProgram
        Graph (residual is a new graph over the remaining variables) or
        kernel (residual is a kernel over the remaining inputs).
    assignment : mapping of str to float
        Values for a subset of the variables; binding every variable is
        allowed and leaves constant roots.
    roots : sequence of int or str, optional
        Graph roots to keep; defaults to all roots. Ignored for kernels.

    Returns
    -------
    ExprGraph or KernelProgram
        Residual whose evaluation on the remaining variables equals the
        original's evaluation on the combined assignment.
    """
    if isinstance(target, KernelProgram):
        return _partial_kernel(target, assignment)
    for name in assignment:
        if not target.has_var(name):
            raise ConstructionError(
                f"Variable '{name}' not found. Available variables: {target.var_names}"
            )
    if not assignment:
        return target.copy()
    refs, names = _resolve_roots(target, roots, None)
    residual, _ = rebuild(target, refs, bindings=assignment, labels=names)
    logger.debug(
        "Partially evaluated %d variable(s): %d -> %d node(s)",
        len(assignment),
        len(target),
        len(residual),
    )
    return residual
