"""Gaussian-kernel maximum mean discrepancy estimators.

Marginal MMD^2 between two sample sets and the joint/conditional variant
built from tensor-product kernels over tuple slots.  Both are differentiable
through the graph engine whenever an input is a Tensor, so generated samples
can be trained by gradient descent on the estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


@dataclass(frozen=True)
class KernelSpec:
    """Sum-of-Gaussians kernel: k(x, y) = sum_b exp(-||x-y||^2 / (2 sigma2_b)).

    estimator selects the MMD^2 estimator: the biased V-statistic (default,
    non-negative, defined down to one sample per side) or the unbiased
    U-statistic (diagonal terms removed, needs >= 2 samples per side).
    """

    bandwidths: tuple
    estimator: str = "biased"

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if len(bw) == 0:
            raise ValueError("bandwidth list must be non-empty")
        if not all(np.isfinite(b) and b > 0 for b in bw):
            raise ValueError(f"bandwidths must be finite and positive, got {bw}")
        object.__setattr__(self, "bandwidths", bw)
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown estimator {self.estimator!r}")

    @property
    def coeffs(self) -> np.ndarray:
        return 1.0 / (2.0 * np.asarray(self.bandwidths, dtype=np.float64))


def gaussian_kernel(x, y, sigma2: float) -> float:
    """Single Gaussian kernel value exp(-||x-y||^2 / (2 sigma2)) for two vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    d = x - y
    return float(np.exp(-(d @ d) / (2.0 * sigma2)))


def median_bandwidth(samples) -> float:
    """Median of pairwise squared distances, the sigma^2 seed for the kernel set.

    Falls back to 1.0 (with a warning) when every sample coincides.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("median_bandwidth needs at least 2 samples")
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    med = float(np.median(d2[np.triu_indices(n, k=1)]))
    if med <= 0.0:
        warnings.warn("degenerate sample set (all points equal); bandwidth falls back to 1.0")
        return 1.0
    return med


def kernel_from_median(samples, scales=(0.25, 0.5, 1.0, 2.0, 4.0), estimator="biased") -> KernelSpec:
    """Multi-bandwidth KernelSpec seeded by the median heuristic on ``samples``."""
    med = median_bandwidth(samples)
    return KernelSpec(tuple(med * s for s in scales), estimator=estimator)


def _rows(x):
    """Validate a sample set shaped (n_samples, dim); returns (operand, value)."""
    v = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"sample sets must be 2-D (n, dim), got shape {v.shape}")
    if v.shape[0] < 1:
        raise ValueError("empty sample set")
    return x, v


def _sqdist(a, b):
    """Pairwise squared distances between row sets, on the graph."""
    aa = dc.tsum(dc.mul(a, a), axis=1, keepdims=True)          # (m, 1)
    bb = dc.tsum(dc.mul(b, b), axis=1, keepdims=True)          # (n, 1)
    cross = dc.matmul(a, dc.transpose(b))                      # (m, n)
    return dc.add(dc.add(aa, dc.transpose(bb)), dc.scale(cross, -2.0))


def _kernel_stacks(X, Y, coeffs):
    """(Kxx, Kyy, Kxy) stacks of per-bandwidth kernel matrices."""
    kxx = dc.rbf_stack(_sqdist(X, X), coeffs)
    kyy = dc.rbf_stack(_sqdist(Y, Y), coeffs)
    kxy = dc.rbf_stack(_sqdist(X, Y), coeffs)
    return kxx, kyy, kxy


def _estimate(kxx, kyy, kxy, m, n, estimator):
    """Combine kernel stacks (B, ., .) into the MMD^2 estimate."""
    cross = dc.scale(dc.tsum(kxy), -2.0 / (m * n))
    if estimator == "biased":
        s_xx = dc.scale(dc.tsum(kxx), 1.0 / (m * m))
        s_yy = dc.scale(dc.tsum(kyy), 1.0 / (n * n))
    else:
        if m < 2 or n < 2:
            raise ValueError("unbiased estimator needs at least 2 samples per side")
        off_x = 1.0 - np.eye(m)
        off_y = 1.0 - np.eye(n)
        s_xx = dc.scale(dc.tsum(dc.mul(kxx, off_x[None, :, :])), 1.0 / (m * (m - 1)))
        s_yy = dc.scale(dc.tsum(dc.mul(kyy, off_y[None, :, :])), 1.0 / (n * (n - 1)))
    return dc.add(dc.add(s_xx, s_yy), cross)


def _maybe_float(out: Tensor, *inputs):
    if any(isinstance(x, Tensor) for x in inputs):
        return out
    return float(out.value)


def mmd2(X, Y, kernel: KernelSpec):
    """Squared MMD between sample sets X and Y (rows are samples).

    Returns a float for plain arrays, or a graph Tensor when either side is
    a Tensor (gradients then flow into that side).
    """
    Xo, xv = _rows(X)
    Yo, yv = _rows(Y)
    if xv.shape[1] != yv.shape[1]:
        raise ValueError(f"sample dimension mismatch: {xv.shape[1]} vs {yv.shape[1]}")
    kxx, kyy, kxy = _kernel_stacks(Xo, Yo, kernel.coeffs)
    out = _estimate(kxx, kyy, kxy, xv.shape[0], yv.shape[0], kernel.estimator)
    return _maybe_float(out, X, Y)


def joint_mmd2(slots_real, slots_gen, kernel):
    """MMD^2 between joint distributions of tuples, via product kernels.

    ``slots_real`` and ``slots_gen`` are sequences of per-slot sample sets,
    slot s shaped (n_tuples, dim_s); tuple i is the i-th row across slots.
    ``kernel`` is one KernelSpec shared by every slot or a per-slot sequence
    (bandwidth counts must agree: the joint kernel is the sum over the
    bandwidth grid of the per-slot kernel product at matched grid index, so
    arity 1 reduces exactly to mmd2).
    """
    arity = len(slots_real)
    if arity != len(slots_gen):
        raise ValueError(f"tuple arity mismatch: {arity} vs {len(slots_gen)}")
    if arity == 0:
        raise ValueError("empty tuples")
    kernels = list(kernel) if isinstance(kernel, (list, tuple)) else [kernel] * arity
    if len(kernels) != arity:
        raise ValueError(f"need one kernel per slot, got {len(kernels)} for arity {arity}")
    n_bw = len(kernels[0].bandwidths)
    estimator = kernels[0].estimator
    if any(len(k.bandwidths) != n_bw or k.estimator != estimator for k in kernels):
        raise ValueError("per-slot kernels must share bandwidth count and estimator")

    m = n = None
    pxx = pyy = pxy = None
    for s in range(arity):
        Xo, xv = _rows(slots_real[s])
        Yo, yv = _rows(slots_gen[s])
        if xv.shape[1] != yv.shape[1]:
            raise ValueError(f"slot {s} dimension mismatch: {xv.shape[1]} vs {yv.shape[1]}")
        if m is None:
            m, n = xv.shape[0], yv.shape[0]
        elif (xv.shape[0], yv.shape[0]) != (m, n):
            raise ValueError("every slot must carry the same number of tuples")
        kxx, kyy, kxy = _kernel_stacks(Xo, Yo, kernels[s].coeffs)
        pxx = kxx if pxx is None else dc.mul(pxx, kxx)
        pyy = kyy if pyy is None else dc.mul(pyy, kyy)
        pxy = kxy if pxy is None else dc.mul(pxy, kxy)

    out = _estimate(pxx, pyy, pxy, m, n, estimator)
    return _maybe_float(out, *slots_real, *slots_gen)
