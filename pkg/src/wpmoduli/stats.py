"""Blocked resampling error estimates for Monte Carlo averages."""
from __future__ import annotations

import numpy as np

JACKKNIFE_BLOCKS = 100


def contiguous_blocks(n: int, n_blocks: int = JACKKNIFE_BLOCKS) -> list:
    n_blocks = max(1, min(n_blocks, n))
    return np.array_split(np.arange(n), n_blocks)


def jackknife(stat, block_sums: np.ndarray):
    """Leave-one-block-out jackknife for a function of summed columns.

    ``block_sums`` has shape (B, k); ``stat`` maps a length-k vector of totals
    to a (complex) scalar.  Returns (full-sample value, stderr, leave-one-out values).
    """
    total = block_sums.sum(axis=0)
    full = stat(total)
    B = len(block_sums)
    if B < 2:
        return full, 0.0, np.array([full])
    loo = np.array([stat(total - block_sums[b]) for b in range(B)])
    var = (B - 1) / B * np.sum(np.abs(loo - loo.mean()) ** 2)
    return full, float(np.sqrt(var)), loo


def batch_mean_stderr(x, n_blocks: int = JACKKNIFE_BLOCKS) -> float:
    """Standard error of ``mean(x)`` from contiguous batch means.

    The points cut out by one line are correlated, so the i.i.d. formula
    underestimates the error; contiguous batches keep each line together.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return 0.0
    if n < 2 * n_blocks:
        return float(x.std(ddof=1) / np.sqrt(n))
    sums = np.array([[len(b), x[b].sum()] for b in contiguous_blocks(n, n_blocks)])
    _, err, _ = jackknife(lambda s: s[1] / s[0], sums)
    return float(err)
