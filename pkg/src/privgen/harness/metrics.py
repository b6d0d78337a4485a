"""Kernel two-sample distance used as the distributional quality metric."""

from __future__ import annotations

import numpy as np


def _sq_dists(a, b):
    aa = np.sum(a**2, axis=1)
    bb = np.sum(b**2, axis=1)
    return np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a @ b.T), 0.0)


def median_bandwidth(a, b) -> float:
    """Median pairwise distance over the pooled sample (zero pairs dropped)."""
    pooled = np.vstack([a, b])
    d = np.sqrt(_sq_dists(pooled, pooled))
    vals = d[np.triu_indices_from(d, k=1)]
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.median(vals))


def mmd2_rbf(sample_a, sample_b, bandwidth="median", biased=False) -> float:
    """Squared maximum mean discrepancy with a Gaussian kernel.

    The default estimator is the unbiased U-statistic, which may dip below
    zero for close distributions; `biased` includes the diagonal terms and
    is zero for identical samples.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("samples must be nonempty (n, d) matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples must share a dimension")
    bw = median_bandwidth(a, b) if bandwidth == "median" else float(bandwidth)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * bw**2)
    kaa = np.exp(-gamma * _sq_dists(a, a))
    kbb = np.exp(-gamma * _sq_dists(b, b))
    kab = np.exp(-gamma * _sq_dists(a, b))
    m, n = a.shape[0], b.shape[0]
    if biased:
        return float(kaa.mean() + kbb.mean() - 2.0 * kab.mean())
    if m < 2 or n < 2:
        raise ValueError("unbiased estimator needs at least 2 points per sample")
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * kab.mean())
