"""Synthetic data recipes and observation schemes.

Every generator is a pure function of its seed.  Source descriptors cover
the Laplace and two-component mixture-of-Gaussians families used by the
benchmark datasets; time-series data comes from a stable VAR(1) simulation
followed by either subsampling (keep every k-th point) or aggregation
(k-block means).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnstableTransitionError(ValueError):
    """Transition matrix has spectral radius >= 1."""


# ---------------------------------------------------------------------------
# source descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceSpec:
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"Laplace scale must be > 0, got {self.scale}")

    def sample(self, size, rng):
        return rng.laplace(0.0, self.scale, size=size)

    @property
    def variance(self):
        return 2.0 * self.scale ** 2


@dataclass(frozen=True)
class MogSpec:
    """Zero-mean-by-default mixture of Gaussians; variances, not std devs."""

    weights: tuple
    variances: tuple
    means: tuple = None

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        v = tuple(float(x) for x in self.variances)
        mu = tuple(0.0 for _ in w) if self.means is None else tuple(float(x) for x in self.means)
        if len(w) != len(v) or len(w) != len(mu):
            raise ValueError("weights, variances and means must have equal length")
        if abs(sum(w) - 1.0) > 1e-9 or any(x <= 0 for x in w):
            raise ValueError(f"weights must be positive and sum to 1, got {w}")
        if any(x < 0 for x in v):
            raise ValueError(f"variances must be >= 0, got {v}")
        if all(x == 0 for x in v):
            raise ValueError("degenerate mixture: every component has zero variance")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "means", mu)

    def sample(self, size, rng):
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        mu = np.asarray(self.means)[comp]
        sd = np.sqrt(np.asarray(self.variances))[comp]
        return mu + sd * rng.standard_normal(size)

    @property
    def variance(self):
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        v = np.asarray(self.variances)
        mean = float(w @ mu)
        return float(w @ (v + mu ** 2) - mean ** 2)


def laplace_recipe(d):
    """Distinct Laplace sources: scales spread linearly over [0.5, 1.5]."""
    scales = np.linspace(0.5, 1.5, d)
    return [LaplaceSpec(s) for s in scales]


def mog_recipe_oica(d):
    """Distinct super-Gaussian mixtures of N(0,1) and N(0,4) per source."""
    w1 = np.linspace(0.15, 0.85, d)
    return [MogSpec((w, 1.0 - w), (1.0, 4.0)) for w in w1]


def measurement_noise_recipe(n):
    """Causal-noise mixtures 0.8 N(0,0.01) + 0.2 N(0,1), same for every variable."""
    return [MogSpec((0.8, 0.2), (0.01, 1.0)) for _ in range(n)]


def var_noise_recipe(n):
    """VAR noise mixtures of N(0,0.1) and N(0,4) with per-variable proportions."""
    w1 = np.linspace(0.6, 0.9, n) if n > 1 else np.array([0.75])
    return [MogSpec((w, 1.0 - w), (0.1, 4.0)) for w in w1]


def sample_sources(specs, n_samples, rng):
    """(d, n_samples) matrix with row i drawn i.i.d. from specs[i]."""
    return np.stack([spec.sample(n_samples, rng) for spec in specs])


# ---------------------------------------------------------------------------
# static mixing datasets
# ---------------------------------------------------------------------------

def gen_oica(p, d, n_samples, specs=None, seed=0):
    """Overcomplete mixing dataset: (A_true p x d, X p x N).

    Sources follow ``specs`` (default: the Laplace recipe); the mixing matrix
    is i.i.d. uniform on (-0.5, 0.5).
    """
    if d < p:
        raise ValueError(f"need d >= p, got p={p}, d={d}")
    rng = np.random.default_rng(seed)
    specs = laplace_recipe(d) if specs is None else list(specs)
    if len(specs) != d:
        raise ValueError(f"need one source spec per component, got {len(specs)} for d={d}")
    a_true = rng.uniform(-0.5, 0.5, size=(p, d))
    s = sample_sources(specs, n_samples, rng)
    return a_true, a_true @ s


def random_dag_adjacency(n, rng, edge_prob=0.3, weight_range=(0.5, 1.0)):
    """Zero-diagonal adjacency of a random DAG in the original variable order.

    A uniform random topological order is drawn; each admissible edge is
    included independently with ``edge_prob`` and weighted from
    ``weight_range``.
    """
    order = rng.permutation(n)
    b = np.zeros((n, n))
    for i in range(n):        # position in causal order
        for j in range(i):    # earlier variables may influence later ones
            if rng.random() < edge_prob:
                b[order[i], order[j]] = rng.uniform(*weight_range)
    return b


def solve_sem(B, e_tilde, e_meas=None):
    """Observations of the linear SEM: X = (I-B)^-1 e_tilde (+ e_meas)."""
    B = np.asarray(B, dtype=np.float64)
    x = np.linalg.solve(np.eye(B.shape[0]) - B, np.asarray(e_tilde, dtype=np.float64))
    return x if e_meas is None else x + np.asarray(e_meas, dtype=np.float64)


def gen_measurement_error(n, n_samples, seed=0, edge_prob=0.3, meas_variance=0.1):
    """Measurement-error dataset: (B_true, X) with X = (I-B)^-1 E~ + E.

    Causal noises are the spiky two-component mixtures of the benchmark
    recipe; sensor noise is Gaussian with the given variance.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 variables, got {n}")
    rng = np.random.default_rng(seed)
    b_true = random_dag_adjacency(n, rng, edge_prob=edge_prob)
    e_tilde = sample_sources(measurement_noise_recipe(n), n_samples, rng)
    e_meas = np.sqrt(meas_variance) * rng.standard_normal((n, n_samples))
    return b_true, solve_sem(b_true, e_tilde, e_meas)


# ---------------------------------------------------------------------------
# VAR simulation and the two observation schemes
# ---------------------------------------------------------------------------

def spectral_radius(C) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(C, dtype=np.float64)))))


def stabilize_transition(C, target=0.95):
    """(C', rescaled): shrink C to spectral radius ``target`` when unstable."""
    C = np.asarray(C, dtype=np.float64)
    rho = spectral_radius(C)
    if rho >= 1.0:
        return target * C / rho, True
    return C.copy(), False


def sample_transition(n, seed=0, diag_range=(0.5, 1.0), offdiag_range=(0.0, 0.5)):
    """(C, rescaled): random transition matrix with dominant diagonal.

    Diagonal entries are uniform on ``diag_range`` and off-diagonal entries
    uniform on ``offdiag_range``; an unstable draw is shrunk to spectral
    radius 0.95 and flagged.
    """
    rng = np.random.default_rng(seed)
    c = rng.uniform(*offdiag_range, size=(n, n))
    c[np.diag_indices(n)] = rng.uniform(*diag_range, size=n)
    return stabilize_transition(c)


def var_simulate(C, noise_specs, t_high, burn_in=500, seed=0):
    """Simulate x_t = C x_{t-1} + e_t; returns (series, noises), each (n, t_high).

    ``noises[:, t]`` is the shock that produced ``series[:, t]``.  The same
    seed with a longer horizon extends the same trajectory: burn-in only
    trims the returned prefix.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if spectral_radius(C) >= 1.0:
        raise UnstableTransitionError(f"spectral radius {spectral_radius(C):.4f} >= 1")
    rng = np.random.default_rng(seed)
    total = burn_in + t_high
    e = sample_sources(list(noise_specs), total, rng)
    x = np.zeros((n, total))
    prev = np.zeros(n)
    for t in range(total):
        prev = C @ prev + e[:, t]
        x[:, t] = prev
    return x[:, burn_in:], e[:, burn_in:]


def subsample(series, k: int):
    """Keep every k-th time point (indices 0, k, 2k, ...)."""
    if k < 1:
        raise ValueError(f"factor k must be >= 1, got {k}")
    return np.asarray(series)[:, ::k].copy()


def aggregate(series, k: int):
    """Means of consecutive non-overlapping k-blocks; tail remainder dropped."""
    if k < 1:
        raise ValueError(f"factor k must be >= 1, got {k}")
    series = np.asarray(series)
    n, t = series.shape
    m = t // k
    return series[:, :m * k].reshape(n, m, k).mean(axis=2)


@dataclass
class VarDataset:
    """Low-resolution observations plus the ground truth behind them."""

    C: np.ndarray
    data: np.ndarray          # (n, T) low-resolution observations
    scheme: str               # "subsample" | "aggregate"
    k: int
    high_res: np.ndarray      # (n, T_high) underlying series
    noises: np.ndarray        # (n, T_high) shocks aligned with high_res
    rescaled: bool


def gen_var_dataset(n, t_low, k, scheme, seed=0, burn_in=500):
    """Low-resolution VAR dataset with exactly ``t_low`` observations."""
    if scheme not in ("subsample", "aggregate"):
        raise ValueError(f"unknown scheme {scheme!r}")
    c, rescaled = sample_transition(n, seed=seed)
    t_high = (t_low - 1) * k + 1 if scheme == "subsample" else t_low * k
    series, noises = var_simulate(c, var_noise_recipe(n), t_high, burn_in=burn_in, seed=seed + 1)
    low = subsample(series, k) if scheme == "subsample" else aggregate(series, k)
    return VarDataset(C=c, data=low, scheme=scheme, k=k, high_res=series,
                      noises=noises, rescaled=rescaled)


def aggregated_eps(noises, k: int):
    """Rebuild the VARMA noise blocks from recorded high-frequency shocks.

    Block j of eps[:, :, m] is shocks[:, (m+1)k - 1 - j] / k, the stacked
    reversed k-window feeding aggregated observation m.
    """
    noises = np.asarray(noises)
    n, t = noises.shape
    m = t // k
    eps = np.empty((n * k, m))
    for j in range(k):
        eps[j * n:(j + 1) * n, :] = noises[:, k - 1 - j:m * k:k] / k
    return eps
