"""
Tests for dataset loading and input-box checks
"""

import numpy as np
import pytest

from hadiff import Dataset, check_in_box, load_dataset
from hadiff.data import out_of_box_rows, read_toml, synthetic_blobs
from hadiff.errors import DataBoundsError


class TestLoadDataset:

    def test_csv(self, blobs_csv, blobs):
        """Test loading the blobs from CSV"""
        dataset = load_dataset(blobs_csv)
        assert dataset.columns == ["u", "v", "label"]
        assert dataset.n_features == 2
        np.testing.assert_allclose(dataset.features, blobs.features)
        np.testing.assert_array_equal(dataset.targets, blobs.targets)

    def test_workbook_sheet(self, blobs_xlsx, blobs):
        """Test loading a named worksheet"""
        dataset = load_dataset(blobs_xlsx, sheet="Data")
        assert len(dataset) == 200
        np.testing.assert_allclose(dataset.stacked(), blobs.stacked())

    def test_workbook_default_sheet(self, blobs_xlsx):
        """Test that the first sheet is read by default"""
        with pytest.raises(ValueError, match="has no data rows"):
            load_dataset(blobs_xlsx)

    def test_missing_sheet(self, blobs_xlsx):
        """Test that an unknown sheet lists the available ones"""
        with pytest.raises(ValueError, match=r"Sheet 'Nope' not found. Available sheets: \['Notes', 'Data'\]"):
            load_dataset(blobs_xlsx, sheet="Nope")

    def test_unsupported_suffix(self, temp_dir):
        """Test that other file types are rejected"""
        path = temp_dir / "blobs.txt"
        path.write_text("u,v,label\n1,2,0\n")
        with pytest.raises(ValueError, match=r"Dataset must be .csv, .xlsx or .xlsm"):
            load_dataset(path)

    def test_non_numeric(self, temp_dir):
        """Test that text cells are rejected with their column"""
        path = temp_dir / "bad.csv"
        path.write_text("u,v,label\n1,two,0\n3,4,1\n")
        with pytest.raises(ValueError, match=r"Non-numeric or missing values in columns: \['v'\]"):
            load_dataset(path)

    def test_single_column(self, temp_dir):
        """Test that a target-only file is rejected"""
        path = temp_dir / "one.csv"
        path.write_text("label\n1\n0\n")
        with pytest.raises(ValueError, match="needs feature columns and a target column"):
            load_dataset(path)


class TestDataset:

    def test_default_columns(self):
        """Test column names when none are given"""
        dataset = Dataset(np.zeros((3, 2)), np.ones(3))
        assert dataset.columns == ["x1", "x2", "y"]
        assert dataset.variable_names == ["x1", "x2", "y"]
        assert list(dataset.to_frame().columns) == ["x1", "x2", "y"]

    def test_shape_mismatch(self):
        """Test that features and targets must have the same rows"""
        with pytest.raises(ValueError, match=r"Got 3 feature row\(s\) and 2 target\(s\)"):
            Dataset(np.zeros((3, 2)), np.ones(2))

    def test_subset(self, blobs):
        """Test selecting rows"""
        part = blobs.subset([0, 5])
        assert len(part) == 2
        np.testing.assert_array_equal(part.features[1], blobs.features[5])

    def test_synthetic_blobs(self):
        """Test that blob labels alternate and points stay in the square"""
        dataset = synthetic_blobs(11, seed=0)
        assert dataset.targets.tolist() == [0.0, 1.0] * 5 + [0.0]
        assert np.abs(dataset.features).max() <= 3.0
        with pytest.raises(ValueError, match="n must be positive"):
            synthetic_blobs(0)


class TestBoxChecks:

    def test_rows_inside(self, blobs):
        """Test that a box containing every row passes"""
        box = {"x1": (-3.0, 3.0), "x2": (-3.0, 3.0), "y": (0.0, 1.0)}
        assert out_of_box_rows(blobs, box) == {}
        check_in_box(blobs, box)

    def test_rows_outside(self):
        """Test that offending rows and variables are reported"""
        dataset = Dataset([[0.0, 0.5], [2.0, 0.0], [-1.5, 4.0]], [0.0, 1.0, 1.0])
        box = {"x1": (-1.0, 1.0), "x2": (-1.0, 1.0)}
        assert out_of_box_rows(dataset, box) == {1: ["x1"], 2: ["x1", "x2"]}
        with pytest.raises(DataBoundsError, match=r"Rows outside the declared input box: 1, 2") as info:
            check_in_box(dataset, box)
        assert info.value.rows == [1, 2]
        assert "variables x1, x2" in str(info.value)

    def test_unlisted_variables_are_ignored(self):
        """Test that only boxed variables are checked"""
        dataset = Dataset([[10.0]], [5.0])
        assert out_of_box_rows(dataset, {"y": (0.0, 10.0)}) == {}


class TestReadToml:

    def test_read(self, train_config_file):
        """Test reading the training configuration"""
        data = read_toml(train_config_file)
        assert data["model"]["layers"] == [2, 4, 1]
        assert data["box"]["y"] == [0.0, 1.0]
