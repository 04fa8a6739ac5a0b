"""Partition agreement scores."""

import numpy as np
from scipy.special import comb

from .errors import ValidationError


def contingency_table(a, b) -> tuple:
    """Counts of (a, b) label pairs; returns (table, a_levels, b_levels)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError("labelings have different lengths")
    la, ia = np.unique(a, return_inverse=True)
    lb, ib = np.unique(b, return_inverse=True)
    table = np.zeros((la.size, lb.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, la, lb


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index; 1 for identical partitions."""
    table, _, _ = contingency_table(a, b)
    n = int(table.sum())
    if n < 2:
        return 1.0
    sum_cells = comb(table, 2).sum()
    sum_rows = comb(table.sum(axis=1), 2).sum()
    sum_cols = comb(table.sum(axis=0), 2).sum()
    expected = sum_rows * sum_cols / comb(n, 2)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
