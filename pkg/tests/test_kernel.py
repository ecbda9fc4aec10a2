"""
Tests for kernel execution and the kernel file format
"""

import struct

import numpy as np
import pytest

from hadiff import KernelProgram, execute, jit, load_kernel, parse, save_kernel
from hadiff.compiler import aot
from hadiff.errors import KernelFormatError
from hadiff.kernel import MAGIC, Instruction, KOp, kernel_from_bytes, kernel_to_bytes, run


@pytest.fixture
def bmi_kernel(bmi_graph):
    return aot(bmi_graph)


class TestExecute:

    def test_batch_shape(self, bmi_kernel, bmi_points):
        """Test one output row per input row"""
        result = execute(bmi_kernel, bmi_points)
        assert result.shape == (100, 1)
        a, w, h = bmi_points.T
        np.testing.assert_allclose(result[:, 0], a * w / h**2, rtol=1e-14)

    def test_workers_give_identical_results(self, bmi_kernel, bmi_points):
        """Test that threading rows over workers changes nothing"""
        single = execute(bmi_kernel, bmi_points)
        assert np.array_equal(execute(bmi_kernel, bmi_points, workers=4), single)

    def test_wrong_width(self, bmi_kernel):
        """Test that a batch must have one column per input"""
        with pytest.raises(ValueError, match=r"Batch must have shape \(n, 3\)"):
            execute(bmi_kernel, np.ones((4, 2)))

    def test_empty_batch(self, bmi_kernel):
        """Test that an empty batch gives an empty result"""
        assert execute(bmi_kernel, np.empty((0, 3))).shape == (0, 1)

    def test_run_single_assignment(self, bmi_kernel):
        """Test running on a mapping of input names"""
        assert run(bmi_kernel, {"a": 30.0, "w": 70.0, "h": 1.75}) == {
            "f": pytest.approx(685.7142857142857)
        }
        with pytest.raises(ValueError, match=r"Missing values for kernel inputs: \['h'\]"):
            run(bmi_kernel, {"a": 30.0, "w": 70.0})

    def test_first_failing_row_across_workers(self):
        """Test that the earliest failing row is reported with several workers"""
        kernel = jit(parse("sqrt(x)"))
        rows = np.ones((10, 1))
        rows[[3, 7], 0] = -1.0
        with pytest.raises(ValueError, match="row 3, instruction 1: sqrt of negative value"):
            execute(kernel, rows, workers=3)


class TestProgram:

    def test_listing(self, bmi_kernel):
        """Test the assembly listing"""
        listing = bmi_kernel.listing()
        assert listing.splitlines()[0] == "; inputs: a, w, h"
        assert "powi" in listing
        assert listing.splitlines()[-1].startswith("; output f = s")

    def test_op_counts(self, bmi_kernel):
        """Test opcode counts of the BMI kernel"""
        assert bmi_kernel.op_counts() == {"DIV": 1, "LOAD_INPUT": 3, "MUL": 1, "POWI": 1}

    def test_validate_rejects_read_before_write(self):
        """Test that validation catches a read of an unwritten slot"""
        kernel = KernelProgram(
            (Instruction(0, KOp.NEG, a=1), Instruction(1, KOp.LOAD_INPUT, a=0)),
            ("x",),
            ("f",),
            (0,),
            2,
        )
        with pytest.raises(KernelFormatError, match="reads slot 1 before it is written"):
            kernel.validate()

    def test_validate_rejects_double_assignment(self):
        """Test that every slot is written once"""
        kernel = KernelProgram(
            (Instruction(0, KOp.LOAD_INPUT, a=0), Instruction(0, KOp.LOAD_CONST, imm=1.0)),
            ("x",),
            ("f",),
            (0,),
            1,
        )
        with pytest.raises(KernelFormatError, match="invalid destination 0"):
            kernel.validate()


class TestFormat:

    def test_save_and_load(self, temp_dir):
        """Test that a saved kernel loads back equal and computes the same"""
        kernel = aot(parse("piecewise(x < 1, tanh(x)^2, sqrt(x) - 1)"))
        path = save_kernel(kernel, temp_dir / "k.hadk")
        loaded = load_kernel(path)
        assert loaded == kernel
        rows = np.linspace(-2.0, 3.0, 11).reshape(-1, 1)
        assert np.array_equal(execute(loaded, rows), execute(kernel, rows))

    def test_header(self, bmi_kernel):
        """Test the magic bytes and version"""
        data = kernel_to_bytes(bmi_kernel)
        assert data[:4] == MAGIC
        assert data[4] == 1

    def test_bad_magic(self, bmi_kernel):
        """Test that foreign files are rejected"""
        with pytest.raises(KernelFormatError, match="bad magic bytes"):
            kernel_from_bytes(b"XLSX" + kernel_to_bytes(bmi_kernel)[4:])

    def test_unsupported_version(self, bmi_kernel):
        """Test that other format versions are rejected"""
        data = bytearray(kernel_to_bytes(bmi_kernel))
        data[4] = 9
        with pytest.raises(KernelFormatError, match="Unsupported kernel format version 9"):
            kernel_from_bytes(bytes(data))

    def test_truncated(self, bmi_kernel):
        """Test that a cut-off file is rejected"""
        data = kernel_to_bytes(bmi_kernel)
        with pytest.raises(KernelFormatError, match="Truncated"):
            kernel_from_bytes(data[:-3])

    def test_trailing_bytes(self, bmi_kernel):
        """Test that extra bytes after the program are rejected"""
        data = kernel_to_bytes(bmi_kernel) + struct.pack("<I", 0)
        with pytest.raises(KernelFormatError, match="4 trailing byte"):
            kernel_from_bytes(data)

    def test_unknown_opcode(self):
        """Test that an opcode outside the instruction set is rejected"""
        kernel = jit(parse("exp(x)"))
        data = bytearray(kernel_to_bytes(kernel))
        # opcode of the last instruction sits 14 bytes from the end
        data[-14] = 200
        with pytest.raises(KernelFormatError, match="Unknown opcode 200"):
            kernel_from_bytes(bytes(data))

    def test_powi_exponent_out_of_range(self):
        """Test that a stored POWI exponent beyond the fast-path range is rejected"""
        kernel = jit(parse("x^3"))
        assert kernel.instructions[-1].op == KOp.POWI
        data = bytearray(kernel_to_bytes(kernel))
        # the POWI immediate is the last 8 bytes
        data[-8:] = struct.pack("<d", 1e9)
        with pytest.raises(KernelFormatError, match="POWI exponent 1000000000.0"):
            kernel_from_bytes(bytes(data))
        data[-8:] = struct.pack("<d", 2.5)
        with pytest.raises(KernelFormatError, match=r"expected an integer in \[-64, 64\]"):
            kernel_from_bytes(bytes(data))
