"""Causal-discovery extensions of the moment-matching ICA trainer.

Three constrained mixing parametrizations are trained with the same loop:

* measurement-error LiNGAM, where observations are [(I-B)^-1  I] applied to
  stacked causal and sensor noises and the zero-diagonal adjacency B is the
  estimand;
* subsampled VAR(1), where consecutive low-resolution observations relate
  through C^k and a block matrix L = [I, C, ..., C^(k-1)] over stacked
  high-frequency noises, trained conditionally on the previous observation;
* aggregated VAR(1), re-expressed as a VARMA step with moving-average block
  matrices M0/M1 and trained on non-overlapping pieces of the series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import mmd as mmdmod
from .diffcore import Param, ProxConfig, Tensor, prox_l1
from .oica import EpochSampler, TrainConfig, resolve_kernel, run_training
from .sources import GaussianScaleGen, make_source_gen

COND_LIMIT = 1e8


class SingularMatrixError(np.linalg.LinAlgError):
    """(I - B) is numerically singular."""


# ---------------------------------------------------------------------------
# mixing constructions
# ---------------------------------------------------------------------------

def measurement_mixing(B):
    """n x 2n mixing [(I-B)^-1  I] for the measurement-error model."""
    bv = B.value if isinstance(B, Tensor) else np.asarray(B, dtype=np.float64)
    n = bv.shape[0]
    if bv.shape != (n, n):
        raise ValueError(f"B must be square, got {bv.shape}")
    eye = np.eye(n)
    cond = np.linalg.cond(eye - bv)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(f"(I - B) is ill-conditioned (cond={cond:.3g})")
    if isinstance(B, Tensor):
        left = dc.inv(dc.add(dc.scale(B, -1.0), eye))
        return dc.concat([left, eye], axis=1)
    return np.concatenate([np.linalg.inv(eye - bv), eye], axis=1)


def matrix_power(C, j: int):
    """C^j by repeated squaring; works on arrays and graph Tensors."""
    if j < 0:
        raise ValueError(f"exponent must be >= 0, got {j}")
    if not isinstance(C, Tensor):
        return np.linalg.matrix_power(np.asarray(C, dtype=np.float64), j)
    n = C.value.shape[0]
    result = None
    base = C
    while j > 0:
        if j & 1:
            result = base if result is None else dc.matmul(result, base)
        j >>= 1
        if j:
            base = dc.matmul(base, base)
    return Tensor(np.eye(n)) if result is None else result


def build_L(C, k: int):
    """n x nk block row [I, C, C^2, ..., C^(k-1)]."""
    if k < 1:
        raise ValueError(f"factor k must be >= 1, got {k}")
    blocks = [matrix_power(C, j) for j in range(k)]
    if isinstance(C, Tensor):
        return dc.concat(blocks, axis=1)
    return np.concatenate(blocks, axis=1)


def build_M0_M1(C, k: int):
    """Moving-average block rows of the aggregated VARMA form.

    M0 block j is sum_{i=0..j} C^i; M1 block j is sum_{i=j+1..k-1} C^i (so
    its last block is zero), and every block pair sums to sum_{i<k} C^i.
    """
    if k < 1:
        raise ValueError(f"factor k must be >= 1, got {k}")
    powers = [matrix_power(C, j) for j in range(k)]
    on_graph = isinstance(C, Tensor)
    add = dc.add if on_graph else np.add
    m0_blocks = [powers[0]]
    for j in range(1, k):
        m0_blocks.append(add(m0_blocks[-1], powers[j]))
    n = C.value.shape[0] if on_graph else np.asarray(C).shape[0]
    zero = Tensor(np.zeros((n, n))) if on_graph else np.zeros((n, n))
    m1_blocks = [zero]
    for j in range(k - 2, -1, -1):
        m1_blocks.insert(0, add(m1_blocks[0], powers[j + 1]))
    cat = (lambda bs: dc.concat(bs, axis=1)) if on_graph else (lambda bs: np.concatenate(bs, axis=1))
    return cat(m0_blocks), cat(m1_blocks)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class MeasurementErrorModel:
    """Zero-diagonal adjacency B plus generators for causal and sensor noise."""

    B: Param
    tilde_sources: object
    meas_noise: GaussianScaleGen
    n: int

    @classmethod
    def create(cls, n, tilde_sources, init_meas_scale=0.3):
        return cls(B=Param("B", np.zeros((n, n))), tilde_sources=tilde_sources,
                   meas_noise=GaussianScaleGen(n, init_scale=init_meas_scale, prefix="meas"), n=n)

    def trainable_params(self):
        return [self.B, *self.tilde_sources.params(), *self.meas_noise.params()]

    def generate(self, batch: int, rng) -> Tensor:
        e_tilde = self.tilde_sources.sample(batch, rng)
        e_meas = self.meas_noise.sample(batch, rng)
        mixing = measurement_mixing(self.B)
        return dc.matmul(mixing, dc.concat([e_tilde, e_meas], axis=0))


def _init_transition(n, rng):
    # positive-diagonal start: for even subsampling factors -C with sign-flipped
    # noises generates the same distribution, so seed the search in the basin
    # matching the positive temporal self-influence convention
    return 0.3 * np.eye(n) + rng.uniform(-0.05, 0.05, size=(n, n))


@dataclass
class SubsampledModel:
    """Transition matrix C with an nk-component generator for stacked noises."""

    C: Param
    k: int
    noise_sources: object
    n: int

    @classmethod
    def create(cls, n, k, noise_sources, rng=None):
        rng = rng or np.random.default_rng(0)
        return cls(C=Param("C", _init_transition(n, rng)), k=k, noise_sources=noise_sources, n=n)

    def trainable_params(self):
        return [self.C, *self.noise_sources.params()]


@dataclass
class AggregatedModel:
    """Transition matrix C with an nk-component generator for VARMA noise blocks."""

    C: Param
    k: int
    piece_len: int
    eps_sources: object
    n: int
    tail_dropped: int = 0

    @classmethod
    def create(cls, n, k, piece_len, eps_sources, rng=None):
        if piece_len < 2:
            raise ValueError(f"piece length must be >= 2, got {piece_len}")
        rng = rng or np.random.default_rng(0)
        return cls(C=Param("C", _init_transition(n, rng)), k=k, piece_len=piece_len,
                   eps_sources=eps_sources, n=n)

    def trainable_params(self):
        return [self.C, *self.eps_sources.params()]


# ---------------------------------------------------------------------------
# conditional generation
# ---------------------------------------------------------------------------

def conditional_generate(model: SubsampledModel, cond, noise) -> Tensor:
    """Next low-resolution observation C^k cond + L noise."""
    cv = cond.value if isinstance(cond, Tensor) else np.asarray(cond)
    nv = noise.value if isinstance(noise, Tensor) else np.asarray(noise)
    if cv.ndim != 2 or cv.shape[0] != model.n:
        raise ValueError(f"condition must be ({model.n}, batch), got {cv.shape}")
    if nv.shape != (model.n * model.k, cv.shape[1]):
        raise ValueError(f"noise must be ({model.n * model.k}, {cv.shape[1]}), got {nv.shape}")
    ck = matrix_power(model.C, model.k)
    ell = build_L(model.C, model.k)
    return dc.add(dc.matmul(ck, cond), dc.matmul(ell, noise))


def divided_generate_piece(model: AggregatedModel, cond, noises):
    """Recursive VARMA rollout of one piece: targets for steps 1..l-1.

    ``noises`` holds l blocks (nk, batch) for piece indices t..t+l-1; the
    first block only enters the first target through M1, exactly as the
    aggregated one-step form dictates.
    """
    if len(noises) != model.piece_len:
        raise ValueError(f"need {model.piece_len} noise blocks, got {len(noises)}")
    ck = matrix_power(model.C, model.k)
    m0, m1 = build_M0_M1(model.C, model.k)
    outs = []
    prev_x, prev_eps = cond, noises[0]
    for j in range(1, model.piece_len):
        x = dc.add(dc.add(dc.matmul(ck, prev_x), dc.matmul(m0, noises[j])),
                   dc.matmul(m1, prev_eps))
        outs.append(x)
        prev_x, prev_eps = x, noises[j]
    return outs


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

DEFAULT_B_PROX_LAM = 1e-3


def _as_data(data, name="data"):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (variables, time), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def train_measurement_error(data, config: TrainConfig, model: MeasurementErrorModel | None = None):
    """Estimate the causal adjacency B from (n, N) noisy observations.

    An L1 proximal step (default weight 1e-3 unless the config overrides it)
    and a hard zero-diagonal projection are applied to B after every update.
    Returns (model, loss trace); the estimate is ``model.B.value``.
    """
    data = _as_data(data)
    n, n_obs = data.shape
    if n_obs < config.batch:
        raise ValueError(f"need at least batch={config.batch} observations, got {n_obs}")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = MeasurementErrorModel.create(
            n, make_source_gen(n, n_obs, rng=np.random.default_rng(config.seed + 1), prefix="etilde"))
    prox = config.prox if config.prox is not None else ProxConfig(DEFAULT_B_PROX_LAM, config.lr)

    ref = data[:, rng.choice(n_obs, size=min(n_obs, 512), replace=False)]
    kernel = resolve_kernel(config, ref.T)
    sampler = EpochSampler(n_obs, config.batch, rng)

    def loss_fn(_it):
        x_gen = model.generate(config.batch, rng)
        x_real = data[:, sampler.take()]
        return mmdmod.mmd2(x_real.T, dc.transpose(x_gen), kernel)

    def post_step():
        if prox.lam > 0:
            model.B.value = prox_l1(model.B.value, prox.threshold)
        np.fill_diagonal(model.B.value, 0.0)

    losses = run_training(model.trainable_params(), loss_fn, config, post_step,
                          average_params=(model.B,), warmup_frozen=(model.B,))
    return model, losses


def train_subsampled(data, k: int, config: TrainConfig, model: SubsampledModel | None = None):
    """Estimate the transition matrix C from an (n, T) subsampled series.

    Minibatches pair each observation with its successor; generated
    successors reuse the real conditions and fresh stacked noise, and the
    loss is the joint MMD^2 over (condition, target) tuples.
    Returns (model, loss trace); the estimate is ``model.C.value``.
    """
    data = _as_data(data)
    n, t_len = data.shape
    if t_len < config.batch + 1:
        raise ValueError(f"need at least batch+1={config.batch + 1} time steps, got {t_len}")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = SubsampledModel.create(
            n, k, make_source_gen(n * k, t_len, rng=np.random.default_rng(config.seed + 1), prefix="e"),
            rng=rng)

    kernel = resolve_kernel(config, data.T)
    sampler = EpochSampler(t_len - 1, config.batch, rng)

    def loss_fn(_it):
        idx = sampler.take()
        cond = data[:, idx]
        target_real = data[:, idx + 1]
        noise = model.noise_sources.sample(config.batch, rng)
        target_gen = conditional_generate(model, cond, noise)
        return mmdmod.joint_mmd2([cond.T, target_real.T],
                                 [cond.T, dc.transpose(target_gen)], kernel)

    def post_step():
        if config.prox is not None and config.prox.lam > 0:
            model.C.value = prox_l1(model.C.value, config.prox.threshold)

    losses = run_training(model.trainable_params(), loss_fn, config, post_step,
                          average_params=(model.C,), warmup_frozen=(model.C,))
    return model, losses


def train_aggregated(data, k: int, piece_len: int, config: TrainConfig,
                     model: AggregatedModel | None = None):
    """Estimate the transition matrix C from an (n, T) aggregated series.

    The series is divided into non-overlapping pieces of ``piece_len``
    starting at index 0 (tail remainder dropped and counted on the model);
    each piece's first element conditions the recursive rollout of the
    remaining targets, matched jointly against the real piece.
    Returns (model, loss trace); the estimate is ``model.C.value``.
    """
    data = _as_data(data)
    n, t_len = data.shape
    if t_len < piece_len:
        raise ValueError(f"series length {t_len} is shorter than piece length {piece_len}")
    n_pieces = t_len // piece_len
    if n_pieces < 2:
        raise ValueError(
            f"only {n_pieces} piece of length {piece_len} fits in {t_len} steps; "
            "the kernel loss needs at least 2 pieces")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = AggregatedModel.create(
            n, k, piece_len,
            make_source_gen(n * k, t_len, rng=np.random.default_rng(config.seed + 1), prefix="eps"),
            rng=rng)
    model.tail_dropped = t_len - n_pieces * piece_len

    starts = np.arange(n_pieces) * piece_len
    kernel = resolve_kernel(config, data.T)
    batch = min(config.batch, n_pieces)
    sampler = EpochSampler(n_pieces, batch, rng)

    def loss_fn(_it):
        sel = starts[sampler.take()]
        cond = data[:, sel]
        real_slots = [cond.T] + [data[:, sel + j].T for j in range(1, piece_len)]
        noises = [model.eps_sources.sample(batch, rng) for _ in range(piece_len)]
        gen_targets = divided_generate_piece(model, cond, noises)
        gen_slots = [cond.T] + [dc.transpose(x) for x in gen_targets]
        return mmdmod.joint_mmd2(real_slots, gen_slots, kernel)

    def post_step():
        if config.prox is not None and config.prox.lam > 0:
            model.C.value = prox_l1(model.C.value, config.prox.threshold)

    losses = run_training(model.trainable_params(), loss_fn, config, post_step,
                          average_params=(model.C,), warmup_frozen=(model.C,))
    return model, losses
