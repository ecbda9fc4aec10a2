"""
Kernel programs: a linear three-address IR, its batch executor and its
binary file format

Every instruction writes one slot (single assignment). Execution is
column-wise over a batch of rows using the float primitives of
``hadiff.ops``, so a kernel reproduces ``evaluate`` bit for bit.
"""

import enum
import logging
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import KernelDomainError, KernelFormatError
from .ops import (
    MAX_FAST_EXPONENT,
    VIOLATIONS,
    Op,
    Relation,
    apply_binary,
    apply_powi,
    apply_unary,
    binary_violation,
    compare,
    is_fast_exponent,
    powi_violation,
    quiet,
    unary_violation,
)

logger = logging.getLogger(__name__)

MAGIC = b"HADK"
FORMAT_VERSION = 1

_FLAG_GUARD = 0x01
_FLAG_IMMEDIATE = 0x02
_RELATION_CODES = {Relation.LT: 0, Relation.LE: 1}
_RELATIONS = {code: relation for relation, code in _RELATION_CODES.items()}


class KOp(enum.IntEnum):
    """Kernel opcodes; arithmetic codes match ``Op``."""

    LOAD_INPUT = 0
    LOAD_CONST = 1
    ADD = 2
    SUB = 3
    MUL = 4
    DIV = 5
    POW = 6
    NEG = 7
    EXP = 8
    LOG = 9
    SQRT = 10
    TANH = 11
    SIGMOID = 12
    ABS = 13
    MIN = 14
    MAX = 15
    SELECT = 16
    POWI = 17


_UNARY_KOPS = frozenset(KOp(op) for op in (7, 8, 9, 10, 11, 12, 13))
_BINARY_KOPS = frozenset(KOp(op) for op in (2, 3, 4, 5, 6, 14, 15))

KernelGuard = Tuple[int, Relation, int]


@dataclass(frozen=True)
class Instruction:
    """``dest = op(a, b)``; ``imm`` holds constants and POWI exponents."""

    dest: int
    op: KOp
    a: int = 0
    b: int = 0
    imm: Optional[float] = None
    guard: Optional[KernelGuard] = None

    def reads(self) -> Tuple[int, ...]:
        """Slots read by this instruction."""
        if self.op in (KOp.LOAD_INPUT, KOp.LOAD_CONST):
            return ()
        if self.op in _UNARY_KOPS or self.op == KOp.POWI:
            return (self.a,)
        if self.op == KOp.SELECT:
            return (self.a, self.b, self.guard[0], self.guard[2])
        return (self.a, self.b)

    def __str__(self) -> str:
        if self.op == KOp.LOAD_INPUT:
            return f"s{self.dest} = input[{self.a}]"
        if self.op == KOp.LOAD_CONST:
            return f"s{self.dest} = {self.imm!r}"
        if self.op == KOp.POWI:
            return f"s{self.dest} = powi s{self.a}, {int(self.imm)}"
        if self.op == KOp.SELECT:
            left, relation, right = self.guard
            return (
                f"s{self.dest} = select s{left} {relation.value} s{right}, "
                f"s{self.a}, s{self.b}"
            )
        operands = ", ".join(f"s{slot}" for slot in self.reads())
        return f"s{self.dest} = {self.op.name.lower()} {operands}"


@dataclass(frozen=True)
class KernelProgram:
    """
    A compiled set of expressions.

    Attributes
    ----------
    instructions : tuple of Instruction
        Program in execution order.
    input_layout : tuple of str
        Variable name for each input column.
    output_layout : tuple of str
        Label for each output column.
    output_slots : tuple of int
        Slot holding each output.
    slot_count : int
        Number of slots the program writes.
    batch_hint : int, optional
        Preferred rows per chunk when executing with several workers.
    """

    instructions: Tuple[Instruction, ...]
    input_layout: Tuple[str, ...]
    output_layout: Tuple[str, ...]
    output_slots: Tuple[int, ...]
    slot_count: int
    batch_hint: Optional[int] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.instructions)

    def op_counts(self) -> Dict[str, int]:
        counts = Counter(ins.op.name for ins in self.instructions)
        return dict(sorted(counts.items()))

    def count(self, *ops: KOp) -> int:
        return sum(1 for ins in self.instructions if ins.op in ops)

    def listing(self) -> str:
        """Human-readable assembly listing."""
        lines = [f"; inputs: {', '.join(self.input_layout)}"]
        lines += [str(ins) for ins in self.instructions]
        lines += [
            f"; output {label} = s{slot}"
            for label, slot in zip(self.output_layout, self.output_slots)
        ]
        return "\n".join(lines)

    def validate(self) -> "KernelProgram":
        """Check single assignment, def-before-use and layout consistency."""
        if len(self.output_layout) != len(self.output_slots):
            raise KernelFormatError("Output labels and slots differ in length")
        written = set()
        for index, ins in enumerate(self.instructions):
            for slot in ins.reads():
                if slot not in written:
                    raise KernelFormatError(
                        f"Instruction {index} reads slot {slot} before it is written"
                    )
            if ins.dest in written or not 0 <= ins.dest < self.slot_count:
                raise KernelFormatError(f"Instruction {index} has invalid destination {ins.dest}")
            if ins.op == KOp.LOAD_INPUT and not 0 <= ins.a < len(self.input_layout):
                raise KernelFormatError(f"Instruction {index} loads unknown input {ins.a}")
            if ins.op == KOp.POWI and (ins.imm is None or not is_fast_exponent(ins.imm)):
                raise KernelFormatError(
                    f"Instruction {index} has POWI exponent {ins.imm!r}; "
                    f"expected an integer in [-{MAX_FAST_EXPONENT}, {MAX_FAST_EXPONENT}]"
                )
            written.add(ins.dest)
        for slot in self.output_slots:
            if slot not in written:
                raise KernelFormatError(f"Output slot {slot} is never written")
        return self


def _merge_poison(p: Optional[np.ndarray], q: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Combine per-row origin markers (-1 = clean), keeping the earliest origin."""
    if p is None:
        return q
    if q is None:
        return p
    both = np.where(p < 0, q, np.where(q < 0, p, np.minimum(p, q)))
    return both


def _run(kernel: KernelProgram, rows: np.ndarray, offset: int) -> np.ndarray:
    n = rows.shape[0]
    columns = np.ascontiguousarray(rows.T)
    slots: List[Optional[np.ndarray]] = [None] * kernel.slot_count
    poison: List[Optional[np.ndarray]] = [None] * kernel.slot_count
    with quiet():
        for index, ins in enumerate(kernel.instructions):
            op = ins.op
            violation = None
            inherited = None
            if op == KOp.LOAD_INPUT:
                value = columns[ins.a]
            elif op == KOp.LOAD_CONST:
                value = np.full(n, ins.imm)
            elif op == KOp.SELECT:
                left, relation, right = ins.guard
                taken = compare(relation, slots[left], slots[right])
                value = np.where(taken, slots[ins.a], slots[ins.b])
                inherited = _merge_poison(poison[left], poison[right])
                pa, pb = poison[ins.a], poison[ins.b]
                if pa is not None or pb is not None:
                    branch = np.where(
                        taken,
                        pa if pa is not None else -1,
                        pb if pb is not None else -1,
                    )
                    inherited = _merge_poison(inherited, branch)
            elif op == KOp.POWI:
                exponent = int(ins.imm)
                value = apply_powi(slots[ins.a], exponent)
                violation = powi_violation(slots[ins.a], exponent)
                inherited = poison[ins.a]
            elif op in _UNARY_KOPS:
                value = apply_unary(Op(op), slots[ins.a])
                violation = unary_violation(Op(op), slots[ins.a])
                inherited = poison[ins.a]
            else:
                a, b = slots[ins.a], slots[ins.b]
                value = apply_binary(Op(op), a, b)
                violation = binary_violation(Op(op), a, b)
                inherited = _merge_poison(poison[ins.a], poison[ins.b])
            if violation is not None and violation.any():
                fresh = np.where(violation, index, -1)
                inherited = _merge_poison(inherited, fresh)
            slots[ins.dest] = value
            poison[ins.dest] = inherited

    bad = None
    for slot in kernel.output_slots:
        bad = _merge_poison(bad, poison[slot])
    if bad is not None and (bad >= 0).any():
        row = int(np.flatnonzero(bad >= 0)[0])
        instruction = int(bad[row])
        op = kernel.instructions[instruction].op
        message = VIOLATIONS[Op.POW if op == KOp.POWI else Op(op)]
        raise KernelDomainError(message, row=offset + row, instruction=instruction)
    if not kernel.output_slots:
        return np.empty((n, 0))
    return np.column_stack([slots[slot] for slot in kernel.output_slots])


def execute(
    kernel: KernelProgram,
    batch: Union[np.ndarray, Sequence[Sequence[float]]],
    workers: int = 1,
) -> np.ndarray:
    """
    Run a kernel on every row of a batch.

    Parameters
    ----------
    kernel : KernelProgram
        Program to run.
    batch : array-like of shape (n, len(kernel.input_layout))
        One row per individual, columns in ``kernel.input_layout`` order.
    workers : int, default 1
        Threads to split rows across; results are identical to ``workers=1``.

    Returns
    -------
    np.ndarray
        Array of shape (n, len(kernel.output_layout)).

    Raises
    ------
    KernelDomainError
        Some row hits a domain error on a path it actually takes; reports the
        first such row and the instruction where the error arose.
    """
    rows = np.asarray(batch, dtype=np.float64)
    width = len(kernel.input_layout)
    if rows.ndim == 1 and rows.size == 0:
        rows = rows.reshape(0, width)
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ValueError(
            f"Batch must have shape (n, {width}) for inputs {list(kernel.input_layout)}, "
            f"got {rows.shape}"
        )
    n = rows.shape[0]
    if n == 0:
        return np.empty((0, len(kernel.output_layout)))
    if workers <= 1 or n == 1:
        return _run(kernel, rows, 0)

    chunk = kernel.batch_hint or -(-n // workers)
    starts = list(range(0, n, chunk))
    errors: List[KernelDomainError] = []

    def work(start: int) -> Optional[np.ndarray]:
        try:
            return _run(kernel, rows[start : start + chunk], start)
        except KernelDomainError as exc:
            errors.append(exc)
            return None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(work, starts))
    if errors:
        raise min(errors, key=lambda exc: exc.row)
    return np.concatenate(parts, axis=0)


def run(kernel: KernelProgram, assignment: Mapping[str, float]) -> Dict[str, float]:
    """Execute on a single assignment and return outputs keyed by label."""
    missing = [name for name in kernel.input_layout if name not in assignment]
    if missing:
        raise ValueError(f"Missing values for kernel inputs: {missing}")
    row = np.array([[float(assignment[name]) for name in kernel.input_layout]])
    values = execute(kernel, row)[0]
    return {label: float(v) for label, v in zip(kernel.output_layout, values)}


def _pack_text(text: str) -> bytes:
    data = text.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def kernel_to_bytes(kernel: KernelProgram) -> bytes:
    """Encode a kernel in the HADK v1 binary format (little-endian)."""
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(kernel.input_layout)))
    parts += [_pack_text(name) for name in kernel.input_layout]
    parts.append(struct.pack("<I", len(kernel.output_layout)))
    for label, slot in zip(kernel.output_layout, kernel.output_slots):
        parts.append(_pack_text(label) + struct.pack("<I", slot))
    parts.append(struct.pack("<II", kernel.slot_count, len(kernel.instructions)))
    for ins in kernel.instructions:
        flags = (_FLAG_GUARD if ins.guard else 0) | (_FLAG_IMMEDIATE if ins.imm is not None else 0)
        parts.append(struct.pack("<BBIII", ins.op, flags, ins.dest, ins.a, ins.b))
        if ins.imm is not None:
            parts.append(struct.pack("<d", ins.imm))
        if ins.guard:
            left, relation, right = ins.guard
            parts.append(struct.pack("<IBI", left, _RELATION_CODES[relation], right))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise KernelFormatError(f"Truncated kernel data at byte {self.pos}")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def text(self) -> str:
        (length,) = self.take("<I")
        if self.pos + length > len(self.data):
            raise KernelFormatError(f"Truncated string at byte {self.pos}")
        raw = self.data[self.pos : self.pos + length]
        self.pos += length
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise KernelFormatError(f"Invalid UTF-8 string: {exc}") from None


def kernel_from_bytes(data: bytes) -> KernelProgram:
    """Decode a HADK kernel; raises KernelFormatError on malformed input."""
    if data[:4] != MAGIC:
        raise KernelFormatError("Not a kernel artifact: bad magic bytes")
    reader = _Reader(data)
    reader.pos = 4
    (version,) = reader.take("<B")
    if version != FORMAT_VERSION:
        raise KernelFormatError(
            f"Unsupported kernel format version {version}; expected {FORMAT_VERSION}"
        )
    (n_inputs,) = reader.take("<I")
    inputs = tuple(reader.text() for _ in range(n_inputs))
    (n_outputs,) = reader.take("<I")
    labels, slots = [], []
    for _ in range(n_outputs):
        labels.append(reader.text())
        slots.append(reader.take("<I")[0])
    slot_count, n_instructions = reader.take("<II")
    instructions = []
    for _ in range(n_instructions):
        code, flags, dest, a, b = reader.take("<BBIII")
        try:
            op = KOp(code)
        except ValueError:
            raise KernelFormatError(f"Unknown opcode {code}") from None
        imm = reader.take("<d")[0] if flags & _FLAG_IMMEDIATE else None
        guard = None
        if flags & _FLAG_GUARD:
            left, relation, right = reader.take("<IBI")
            if relation not in _RELATIONS:
                raise KernelFormatError(f"Unknown guard relation code {relation}")
            guard = (left, _RELATIONS[relation], right)
        instructions.append(Instruction(dest, op, a, b, imm, guard))
    if reader.pos != len(data):
        raise KernelFormatError(f"{len(data) - reader.pos} trailing byte(s) after kernel")
    for ins in instructions:
        if ins.op in (KOp.LOAD_CONST, KOp.POWI) and ins.imm is None:
            raise KernelFormatError(f"{ins.op.name} instruction without immediate")
        if ins.op == KOp.SELECT and ins.guard is None:
            raise KernelFormatError("SELECT instruction without guard")
    kernel = KernelProgram(tuple(instructions), inputs, tuple(labels), tuple(slots), slot_count)
    return kernel.validate()


def save_kernel(kernel: KernelProgram, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(kernel_to_bytes(kernel))
    logger.info("Wrote kernel with %d instruction(s) to %s", len(kernel), path)
    return path


def load_kernel(path: Union[str, Path]) -> KernelProgram:
    return kernel_from_bytes(Path(path).read_bytes())
