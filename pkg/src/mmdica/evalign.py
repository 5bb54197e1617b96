"""Indeterminacy elimination and matrix error metrics.

Mixing matrices are identified only up to column permutation, scale and
sign.  ``align`` removes all three against a reference by least-squares:
per candidate column pairing the optimal scale is the projection
coefficient, and the pairing itself is the minimum-cost assignment over
the resulting residuals.  Transition/adjacency matrices from the causal
tasks are compared raw (their parametrizations pin the indeterminacies).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class Alignment:
    permutation: tuple      # aligned column j comes from estimate column permutation[j]
    scales: tuple           # signed scale applied to that column
    residual_mse: float


def normalize_first_column(A) -> np.ndarray:
    """Divide the whole matrix by the L2 norm of its first column."""
    A = np.asarray(A, dtype=np.float64)
    norm = float(np.linalg.norm(A[:, 0]))
    if norm < 1e-12:
        raise ValueError("first column is zero; cannot normalize")
    return A / norm


def mse(M1, M2) -> float:
    """Elementwise mean squared error between equal-shaped matrices."""
    M1 = np.asarray(M1, dtype=np.float64)
    M2 = np.asarray(M2, dtype=np.float64)
    if M1.shape != M2.shape:
        raise ValueError(f"shape mismatch: {M1.shape} vs {M2.shape}")
    return float(np.mean((M1 - M2) ** 2))


def align(est, truth):
    """Best permutation/scale match of ``est`` columns onto ``truth`` columns.

    Returns (Alignment, aligned_est) where aligned column j is the optimally
    scaled estimate column assigned to truth column j.  A zero estimated
    column gets scale 0 and pays the full residual of its target.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    p, d = est.shape
    norms_est = (est * est).sum(axis=0)                      # (d,)
    dots = est.T @ truth                                     # dots[i, j] = <est_i, truth_j>
    with np.errstate(divide="ignore", invalid="ignore"):
        scales = np.where(norms_est[:, None] > 0, dots / norms_est[:, None], 0.0)
    # residual of scaling est_i onto truth_j: ||truth_j||^2 - s_ij <est_i, truth_j>
    cost = (truth * truth).sum(axis=0)[None, :] - scales * dots
    cost = np.maximum(cost, 0.0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(d, dtype=int)
    perm[cols] = rows
    col_scales = scales[perm, np.arange(d)]
    aligned = est[:, perm] * col_scales[None, :]
    return Alignment(tuple(int(i) for i in perm),
                     tuple(float(s) for s in col_scales),
                     mse(aligned, truth)), aligned


def scale_columns_by_variance(est, est_source_vars, truth_source_vars) -> np.ndarray:
    """Alternative scale rule: multiply column j by sqrt(var_est_j / var_truth_j).

    Matches columns to reference scale through the variances of the
    recovered vs ground-truth components instead of least squares; column
    order is assumed already matched.
    """
    est = np.asarray(est, dtype=np.float64)
    ratio = np.sqrt(np.asarray(est_source_vars, dtype=np.float64)
                    / np.asarray(truth_source_vars, dtype=np.float64))
    if ratio.shape != (est.shape[1],):
        raise ValueError("need one variance per column on both sides")
    return est * ratio[None, :]


def aligned_mixing_mse(est, truth) -> float:
    """Benchmark metric: normalize the truth's first column, align, measure.

    The global first-column normalization fixes the truth's overall scale;
    per-column least-squares alignment then absorbs the estimate's
    permutation/scale/sign indeterminacies.
    """
    truth_n = normalize_first_column(truth)
    alignment, _ = align(est, truth_n)
    return alignment.residual_mse
