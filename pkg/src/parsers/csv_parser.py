"""
csv_parser.py

Parser for trajectory, checkpoint and sweep tables using Pandas.
"""

from typing import Optional, Sequence

import pandas as pd

from src.utils.errors import ContractViolationError


def parse_table(file_path: str, expected_columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Read a table written by the harness and check its column layout.

    Args:
        file_path: Path to the CSV file.
        expected_columns: Exact column list (names and order) to require.

    Returns:
        pd.DataFrame: The table.
    """
    df = pd.read_csv(file_path)
    if expected_columns is not None and list(df.columns) != list(expected_columns):
        missing = [c for c in expected_columns if c not in df.columns]
        extra = [c for c in df.columns if c not in expected_columns]
        raise ContractViolationError(
            f"{file_path}: column layout differs (missing={missing}, extra={extra})"
        )
    return df
