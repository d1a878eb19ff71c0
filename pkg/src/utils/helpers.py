"""
helpers.py

Array plumbing shared by the library modules: input coercion, finiteness
checks, compensated summation and row-block parallelism.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.utils.errors import ContractViolationError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_ROWS = 256


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    """
    Coerce a scalar or sequence into a 1-D float vector.

    Args:
        x: Point in R^d (a scalar is read as a point in R^1).
        dim: Expected dimension, checked when given.

    Returns:
        np.ndarray: Vector of shape (d,).
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ContractViolationError(f"expected a point, got array of shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractViolationError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    return arr


def as_points(xs, dim: Optional[int] = None) -> np.ndarray:
    """Coerce a point cloud into an (n, d) float matrix; 1-D input is n points in R^1."""
    arr = np.asarray(xs, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ContractViolationError(f"expected an (n, d) point cloud, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ContractViolationError(f"dimension mismatch: expected {dim}, got {arr.shape[1]}")
    return arr


def require_finite(arr, what: str = "input") -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite {what}")
    return arr


def same_dimension(x: np.ndarray, y: np.ndarray) -> int:
    if x.shape[-1] != y.shape[-1]:
        raise ContractViolationError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}"
        )
    return int(x.shape[-1])


def kahan_sum(terms, axis: int = -1) -> np.ndarray:
    """
    Compensated (Kahan) summation along one axis, in index order.

    The loop runs over the reduced axis and is vectorised over every other
    axis, so each output entry sees exactly the same sequence of operations
    no matter how the caller splits the remaining axes into blocks.

    Args:
        terms: Array of summands.
        axis: Axis to reduce.

    Returns:
        np.ndarray: Sums with the reduced axis removed.
    """
    terms = np.moveaxis(np.asarray(terms, dtype=float), axis, 0)
    total = np.zeros(terms.shape[1:])
    comp = np.zeros(terms.shape[1:])
    for term in terms:
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def weighted_kahan_sum(weights: np.ndarray, values: np.ndarray) -> float:
    """Deterministic Σ_i w_i v_i for 1-D arrays."""
    return float(kahan_sum(np.asarray(weights, float) * np.asarray(values, float), axis=0))


def row_blocks(n_rows: int, block_rows: int = DEFAULT_BLOCK_ROWS) -> List[Tuple[int, int]]:
    """Split range(n_rows) into contiguous [start, stop) blocks."""
    if n_rows <= 0:
        return []
    count = math.ceil(n_rows / block_rows)
    per_block = math.ceil(n_rows / count)
    return [(i * per_block, min((i + 1) * per_block, n_rows)) for i in range(count)]


def default_workers() -> int:
    try:
        return max(1, int(os.getenv("SVGD_WORKERS", "1")))
    except ValueError:
        logger.warning("SVGD_WORKERS is not an integer, using 1 worker")
        return 1


def map_row_blocks(func: Callable[[int, int], np.ndarray], n_rows: int,
                   workers: Optional[int] = None,
                   block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """
    Evaluate ``func(start, stop)`` on every row block and stack the results.

    Blocks are evaluated concurrently when ``workers > 1``; results are
    always combined in block order.
    """
    blocks = row_blocks(n_rows, block_rows)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(blocks) == 1:
        parts = [func(start, stop) for start, stop in blocks]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(blocks))) as executor:
            futures = [executor.submit(func, start, stop) for start, stop in blocks]
            parts = [future.result() for future in futures]
    return np.concatenate(parts, axis=0)
