"""
Dataset loading and input-box checks

Datasets are rectangular: a header row, feature columns, then one target
column. They are read from CSV with pandas or from ``.xlsx`` / ``.xlsm``
workbooks with openpyxl.
"""

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from openpyxl import load_workbook

from .errors import DataBoundsError
from .interval import BoundsLike, as_interval

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

WORKBOOK_SUFFIXES = (".xlsx", ".xlsm")


@dataclass
class Dataset:
    """
    Features and targets held as float arrays.

    Parameters
    ----------
    features : np.ndarray
        Shape ``(n, d)``.
    targets : np.ndarray
        Shape ``(n,)``.
    columns : list of str, optional
        Source column names, features first and target last.
    """

    features: np.ndarray
    targets: np.ndarray
    columns: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.features.ndim != 2:
            raise ValueError(f"Features must be 2-dimensional, got shape {self.features.shape}")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"Got {self.features.shape[0]} feature row(s) and {self.targets.shape[0]} target(s)"
            )
        if not self.columns:
            self.columns = [f"x{i + 1}" for i in range(self.n_features)] + ["y"]

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def variable_names(self) -> List[str]:
        """Model variable for each column: ``x1 .. xd`` then ``y``."""
        return [f"x{i + 1}" for i in range(self.n_features)] + ["y"]

    def stacked(self) -> np.ndarray:
        """Features and target side by side, shape ``(n, d + 1)``."""
        return np.column_stack([self.features, self.targets])

    def subset(self, rows: Sequence[int]) -> "Dataset":
        index = np.asarray(rows, dtype=np.intp)
        return Dataset(self.features[index], self.targets[index], list(self.columns))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.stacked(), columns=self.columns)


def _read_workbook(path: Path, sheet: Optional[str]) -> pd.DataFrame:
    wb = load_workbook(filename=path, read_only=True, data_only=True)
    try:
        available_sheets = wb.sheetnames
        if sheet is None:
            sheet = available_sheets[0]
        elif sheet not in available_sheets:
            raise ValueError(f"Sheet '{sheet}' not found. Available sheets: {available_sheets}")
        rows = [
            row
            for row in wb[sheet].iter_rows(values_only=True)
            if any(value is not None for value in row)
        ]
    finally:
        wb.close()
    if not rows:
        return pd.DataFrame()
    header = [str(value) if value is not None else f"column{i + 1}" for i, value in enumerate(rows[0])]
    return pd.DataFrame(rows[1:], columns=header)


def load_dataset(path: Union[str, Path], sheet: Optional[str] = None) -> Dataset:
    """
    Read a dataset with a header row: feature columns, then the target.

    Parameters
    ----------
    path : str or Path
        ``.csv`` file, or ``.xlsx`` / ``.xlsm`` workbook.
    sheet : str, optional
        Worksheet to read from a workbook; defaults to the first one.

    Returns
    -------
    Dataset

    Raises
    ------
    ValueError
        Unsupported file type, no data rows, fewer than two columns, or
        non-numeric cells.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        frame = pd.read_csv(path)
    elif suffix in WORKBOOK_SUFFIXES:
        frame = _read_workbook(path, sheet)
    else:
        raise ValueError(f"Dataset must be .csv, .xlsx or .xlsm, got '{path.name}'")

    if frame.empty:
        raise ValueError(f"Dataset '{path.name}' has no data rows")
    if frame.shape[1] < 2:
        raise ValueError(
            f"Dataset '{path.name}' needs feature columns and a target column, got {list(frame.columns)}"
        )
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = [str(col) for col in frame.columns if numeric[col].isna().any()]
    if bad:
        raise ValueError(f"Non-numeric or missing values in columns: {bad}")

    values = numeric.to_numpy(dtype=np.float64)
    dataset = Dataset(values[:, :-1], values[:, -1], [str(col) for col in frame.columns])
    logger.info(
        "Loaded %d row(s) with %d feature(s) from %s", len(dataset), dataset.n_features, path.name
    )
    return dataset


def out_of_box_rows(dataset: Dataset, box: Mapping[str, BoundsLike]) -> Dict[int, List[str]]:
    """Rows breaking the box, mapped to the variables they break."""
    names = dataset.variable_names
    stacked = dataset.stacked()
    offending: Dict[int, List[str]] = {}
    for j, name in enumerate(names):
        if name not in box:
            continue
        bounds = as_interval(box[name])
        column = stacked[:, j]
        outside = ~((column >= bounds.lo) & (column <= bounds.hi))
        for row in np.flatnonzero(outside):
            offending.setdefault(int(row), []).append(name)
    return dict(sorted(offending.items()))


def check_in_box(dataset: Dataset, box: Mapping[str, BoundsLike]) -> None:
    """
    Reject datasets whose values fall outside the declared input box.

    Raises
    ------
    DataBoundsError
        Listing the 0-based indices of every offending row.
    """
    offending = out_of_box_rows(dataset, box)
    if offending:
        names = sorted({name for broken in offending.values() for name in broken})
        raise DataBoundsError(list(offending), detail=f"variables {', '.join(names)}")


def read_toml(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a TOML configuration file."""
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def synthetic_blobs(
    n: int = 200,
    seed: int = 0,
    separation: float = 1.5,
    spread: float = 0.4,
    limit: float = 3.0,
) -> Dataset:
    """
    Two labelled Gaussian blobs in the plane, clipped into ``[-limit, limit]^2``.

    Class 0 is centred at ``(-separation/2, -separation/2)`` and class 1 at
    ``(separation/2, separation/2)``; labels alternate so both classes have
    ``n // 2`` rows (plus one for odd ``n``).
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(np.float64)
    centres = (labels[:, None] - 0.5) * separation
    points = centres + rng.normal(0.0, spread, size=(n, 2))
    return Dataset(np.clip(points, -limit, limit), labels)
