"""Overcomplete ICA by kernel moment matching.

The model mixes d generated non-Gaussian sources through a p x d matrix and
trains mixing matrix plus generator jointly by minimizing the empirical
MMD^2 between generated and observed mixtures, with an optional L1 proximal
step on the mixing matrix after every optimizer update.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from . import mmd as mmdmod
from .diffcore import Adam, DivergenceError, Param, ProxConfig, Tensor, backward, prox_l1


class TrainingDivergedError(DivergenceError):
    """Training aborted on a non-finite loss or gradient."""

    def __init__(self, iteration: int, cause: str):
        super().__init__(f"training diverged at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass
class OicaModel:
    """Mixing matrix A (p x d) over a d-component source generator."""

    A: Param
    sources: object
    p: int
    d: int

    def __post_init__(self):
        if self.d < self.p:
            raise ValueError(f"need at least as many sources as mixtures, got p={self.p}, d={self.d}")
        if self.A.value.shape != (self.p, self.d):
            raise ValueError(f"A must be {self.p}x{self.d}, got {self.A.value.shape}")

    @classmethod
    def create(cls, p, d, sources, rng=None, init=None, init_noise=0.0):
        """Fresh model; ``init`` seeds A (plus optional Gaussian noise), else U(-0.5, 0.5)."""
        rng = rng or np.random.default_rng(0)
        if init is not None:
            a0 = np.asarray(init, dtype=np.float64).copy()
            if init_noise > 0:
                a0 = a0 + init_noise * rng.standard_normal(a0.shape)
        else:
            a0 = rng.uniform(-0.5, 0.5, size=(p, d))
        return cls(A=Param("A", a0), sources=sources, p=p, d=d)

    def trainable_params(self):
        return [self.A, *self.sources.params()]


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch training settings shared by all trainers."""

    batch: int = 256
    iters: int = 2000
    lr: float = 1e-3
    lr_final: float | None = None   # geometric decay target; None keeps lr constant
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    prox: ProxConfig | None = None
    kernel: mmdmod.KernelSpec | None = None   # None: median heuristic, frozen at start
    bandwidth_scales: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    estimator: str = "biased"
    avg_tail_frac: float = 0.0   # report tail-averaged estimates to damp plateau wander
    warmup_iters: int = 0        # adapt the noise generators before the mixing moves
    seed: int = 0

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError(f"batch must be >= 2, got {self.batch}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.avg_tail_frac <= 1.0:
            raise ValueError(f"avg_tail_frac must be in [0, 1], got {self.avg_tail_frac}")
        if self.warmup_iters < 0:
            raise ValueError(f"warmup_iters must be >= 0, got {self.warmup_iters}")

    def lr_at(self, it: int) -> float:
        if self.lr_final is None or self.iters <= 1:
            return self.lr
        frac = it / (self.iters - 1)
        return self.lr * (self.lr_final / self.lr) ** frac


def mix(model: OicaModel, source_batch) -> Tensor:
    """Mixtures A @ s for a (d, batch) source block."""
    sval = source_batch.value if isinstance(source_batch, Tensor) else np.asarray(source_batch)
    if sval.ndim != 2 or sval.shape[0] != model.d:
        raise ValueError(f"source batch must be ({model.d}, batch), got {sval.shape}")
    return dc.matmul(model.A, source_batch)


class EpochSampler:
    """Without-replacement minibatch indices, reshuffled each epoch."""

    def __init__(self, n: int, batch: int, rng):
        if batch > n:
            raise ValueError(f"batch {batch} exceeds population {n}")
        self.n = n
        self.batch = batch
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def take(self) -> np.ndarray:
        if self._pos + self.batch > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return out


def resolve_kernel(config: TrainConfig, reference_samples) -> mmdmod.KernelSpec:
    """Kernel from config, or median heuristic on reference rows, frozen for the run."""
    if config.kernel is not None:
        return config.kernel
    return mmdmod.kernel_from_median(reference_samples,
                                     scales=config.bandwidth_scales,
                                     estimator=config.estimator)


def run_training(params, loss_fn, config: TrainConfig, post_step=None, average_params=(),
                 warmup_frozen=()):
    """Shared optimization loop: per iteration compute loss, record it, step.

    ``loss_fn(it)`` returns a scalar graph Tensor; ``post_step`` applies
    projections/proximal maps after the optimizer update.  The loss trace is
    recorded before each update.  Diverging runs abort with the iteration.

    For the first ``config.warmup_iters`` iterations the params in
    ``warmup_frozen`` are held fixed (their gradients are dropped), so noise
    generators can adapt before the mixing estimate starts to move.

    When ``config.avg_tail_frac`` > 0, each param in ``average_params`` is
    overwritten at the end with its mean over the final fraction of
    iterations; the averaged value is a reported estimate only and never
    feeds back into the dynamics.
    """
    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    losses = []
    avg_start = config.iters - max(1, int(round(config.avg_tail_frac * config.iters)))
    sums = {id(p): np.zeros_like(p.value) for p in average_params}
    count = 0
    for it in range(config.iters):
        opt.set_lr(config.lr_at(it))
        opt.zero_grad()
        try:
            loss = loss_fn(it)
            backward(loss)
        except DivergenceError as e:
            raise TrainingDivergedError(it, str(e)) from e
        losses.append(float(loss.value))
        if it < config.warmup_iters:
            for p in warmup_frozen:
                p.grad[...] = 0.0
        opt.step()
        if post_step is not None:
            post_step()
        if config.avg_tail_frac > 0 and it >= avg_start:
            for p in average_params:
                sums[id(p)] += p.value
            count += 1
    if count:
        for p in average_params:
            p.value = sums[id(p)] / count
    return losses


def train(model: OicaModel, data, config: TrainConfig):
    """Fit model to (p, N) observations; returns (model, loss trace).

    Each iteration draws fresh generator noise and a fresh data minibatch
    (without replacement per epoch); with a positive prox weight the mixing
    matrix is soft-thresholded after every optimizer step.  Deterministic
    given the config seed.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != model.p:
        raise ValueError(f"data must be ({model.p}, N), got {data.shape}")
    n_obs = data.shape[1]
    if n_obs < config.batch:
        raise ValueError(f"need at least batch={config.batch} observations, got {n_obs}")
    if not np.isfinite(data).all():
        raise ValueError("observations contain non-finite values")

    rng = np.random.default_rng(config.seed)
    ref = data[:, rng.choice(n_obs, size=min(n_obs, 512), replace=False)]
    kernel = resolve_kernel(config, ref.T)
    sampler = EpochSampler(n_obs, config.batch, rng)
    params = model.trainable_params()

    def loss_fn(_it):
        s = model.sources.sample(config.batch, rng)
        x_gen = mix(model, s)
        x_real = data[:, sampler.take()]
        return mmdmod.mmd2(x_real.T, dc.transpose(x_gen), kernel)

    def post_step():
        if config.prox is not None and config.prox.lam > 0:
            model.A.value = prox_l1(model.A.value, config.prox.threshold)

    losses = run_training(params, loss_fn, config, post_step, average_params=(model.A,),
                          warmup_frozen=(model.A,))
    return model, losses
