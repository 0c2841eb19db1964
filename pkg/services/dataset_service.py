"""
Dataset service for reading regression samples, observation streams and projection matrices
"""
import csv
import logging
import os
import sys
from typing import IO, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import CSV_SETTINGS
from core.exceptions import DatasetFormatError, DimensionError
from core.regression import Dataset

logger = logging.getLogger(__name__)


def expected_header(k: int) -> List[str]:
    """Column names for a model with k regressors (intercept included)"""
    prefix = CSV_SETTINGS["regressor_prefix"]
    return [CSV_SETTINGS["response_column"]] + [f"{prefix}{i}" for i in range(1, k)]


def _check_header(columns) -> int:
    columns = [str(c).strip() for c in columns]
    if not columns or columns[0] != CSV_SETTINGS["response_column"]:
        raise DatasetFormatError(
            f"header must start with '{CSV_SETTINGS['response_column']}', got {columns[:1]}"
        )
    k = len(columns)
    if columns != expected_header(k):
        raise DatasetFormatError(f"expected header {','.join(expected_header(k))}, got {','.join(columns)}")
    return k


class DatasetService:
    """Handles CSV ingestion for the test, monitor and estimate-break commands"""

    def __init__(self, encoding: Optional[str] = None):
        self.encoding = encoding or CSV_SETTINGS["encoding"]

    def load_frame(self, file_path: str) -> pd.DataFrame:
        """
        Read a CSV file with header y,x1,...,x{k-1}

        Args:
            file_path: Path to the CSV file

        Returns:
            DataFrame of floats, columns in header order
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"dataset not found: {file_path}")
        try:
            frame = pd.read_csv(file_path, encoding=self.encoding, skipinitialspace=True)
        except pd.errors.EmptyDataError:
            raise DatasetFormatError("empty dataset") from None
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise DatasetFormatError(f"malformed CSV {file_path}: {e}") from e

        _check_header(frame.columns)
        if frame.empty:
            raise DatasetFormatError("empty dataset")
        try:
            frame = frame.apply(pd.to_numeric, errors="raise").astype(float)
        except (ValueError, TypeError) as e:
            raise DatasetFormatError(f"non-numeric value in {file_path}: {e}") from e
        if frame.isna().any().any():
            raise DatasetFormatError(f"missing values in {file_path}")
        logger.debug("Read %s: %d rows, %d columns", file_path, len(frame), frame.shape[1])
        return frame

    def load_dataset(self, file_path: str) -> Dataset:
        """
        Load a regression sample; the intercept column is added implicitly

        Args:
            file_path: Path to the CSV file

        Returns:
            Dataset with k = number of CSV columns
        """
        frame = self.load_frame(file_path)
        values = frame.to_numpy()
        regressors = values[:, 1:] if values.shape[1] > 1 else None
        return Dataset.from_regressors(values[:, 0], regressors)

    def iter_stream(self, source: IO[str], k: int) -> Iterator[Tuple[np.ndarray, float]]:
        """
        Yield (x_t, y_t) rows from a text stream, one line at a time.

        A header line matching y,x1,... is skipped; blank lines are ignored.

        Args:
            source: Open text stream (file or stdin)
            k: Number of regressors including the intercept
        """
        header = expected_header(k)
        for line_no, row in enumerate(csv.reader(source), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if cells[0] == CSV_SETTINGS["response_column"]:
                if cells != header:
                    raise DatasetFormatError(f"stream header {','.join(cells)} does not match {','.join(header)}")
                continue
            if len(cells) != k:
                raise DimensionError(f"stream line {line_no} has {len(cells)} fields, expected {k}")
            try:
                values = [float(cell) for cell in cells]
            except ValueError as e:
                raise DatasetFormatError(f"stream line {line_no}: {e}") from e
            yield np.array([1.0] + values[1:]), values[0]

    def open_stream(self, file_path: Optional[str]) -> IO[str]:
        """Open an observation stream; None or '-' means standard input"""
        if file_path in (None, "-"):
            return sys.stdin
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"stream not found: {file_path}")
        return open(file_path, "r", encoding=self.encoding, newline="")

    def load_projection(self, file_path: str) -> np.ndarray:
        """
        Read a k x nu projection matrix H (no header, comma-separated)

        Args:
            file_path: Path to the CSV file

        Returns:
            2-D float array
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"projection matrix not found: {file_path}")
        try:
            H = pd.read_csv(file_path, header=None, encoding=self.encoding).to_numpy(dtype=float)
        except pd.errors.EmptyDataError:
            raise DatasetFormatError(f"empty projection matrix file {file_path}") from None
        except (pd.errors.ParserError, ValueError) as e:
            raise DatasetFormatError(f"malformed projection matrix {file_path}: {e}") from e
        return H

    def save_dataset(self, data: Dataset, file_path: str) -> str:
        """Write a dataset in the same layout load_dataset reads"""
        columns = expected_header(data.k)
        values = np.column_stack([data.y, data.X[:, 1:]])
        folder = os.path.dirname(file_path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        frame = pd.DataFrame(values, columns=columns)
        frame.to_csv(file_path, index=False, encoding=self.encoding, float_format="%.17g")
        return file_path
