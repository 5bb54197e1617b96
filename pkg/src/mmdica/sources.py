"""Non-Gaussian independent-source generators.

Two families map seed noise to d independent scalar sources: per-source
MLPs transforming one standard-Gaussian input each, and a mixture-of-
Gaussians path (component choice relaxed through Gumbel-softmax, scale and
location through the reparameterization trick) for small-data regimes.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Param, Tensor

# below this many observations the MoG path is the default generator
MOG_SAMPLE_THRESHOLD = 2000


def gumbel_from_uniform(u):
    """Map Uniform(0,1) draws to Gumbel(0,1) via g = -log(-log u)."""
    u = np.asarray(u, dtype=np.float64)
    tiny = np.finfo(np.float64).tiny
    u = np.clip(u, tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def sample_gumbel(shape, rng) -> np.ndarray:
    """Gumbel(0,1) array of the given shape drawn from ``rng``."""
    return gumbel_from_uniform(rng.random(shape))


def gumbel_softmax(w, g, tau: float):
    """Soft one-hot sample from simplex weights ``w`` with Gumbel noise ``g``.

    Computes softmax((log w + g) / tau) along the last axis; differentiable
    in ``w`` when it is a Tensor.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    logw = dc.log(w) if isinstance(w, Tensor) else np.log(np.asarray(w, dtype=np.float64))
    z = dc.scale(dc.add(logw, g), 1.0 / tau)
    out = dc.softmax(z, axis=-1)
    return out if isinstance(w, Tensor) else out.value


def _fan_in_uniform(rng, d, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(d, n_in, n_out))


class MlpSourceGen:
    """d independent source networks, each 1 -> hidden widths -> 1.

    Per-source weights are stacked on a leading axis so one batched matmul
    evaluates all sources; the block structure keeps sources architecturally
    independent (source i never sees parameters or noise of source j).
    """

    def __init__(self, d, widths=(16, 16), slope=0.2, rng=None, prefix="src", trainable=True):
        rng = rng or np.random.default_rng(0)
        self.d = int(d)
        self.slope = float(slope)
        self.trainable = trainable
        dims = [1, *widths, 1]
        self.weights = []
        self.biases = []
        for layer, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.weights.append(Param(f"{prefix}.W{layer}", _fan_in_uniform(rng, self.d, n_in, n_out)))
            self.biases.append(Param(f"{prefix}.b{layer}", np.zeros((self.d, 1, n_out))))

    def params(self):
        if not self.trainable:
            return []
        return [*self.weights, *self.biases]

    def sample(self, batch: int, rng) -> Tensor:
        """(d, batch) source matrix from fresh Gaussian seed noise."""
        if batch < 1:
            raise ValueError("batch must be >= 1")
        z = rng.standard_normal((self.d, batch, 1))
        return self.transform(z)

    def transform(self, z) -> Tensor:
        """Push an explicit (d, batch, 1) seed block through the networks."""
        h = z
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.add(dc.matmul(h, w), b)
            if layer != last:
                h = dc.leaky_relu(h, self.slope)
        return dc.reshape(h, (self.d, np.shape(z)[1]))


class MogSourceGen:
    """d independent mixture-of-Gaussians sources with m components each.

    Mixture weights live as logits (normalized on read), scales as logs so
    positivity is structural.  Sampling draws the Gumbel block first, then
    the Gaussian reparameterization block, from the supplied rng.
    """

    def __init__(self, d, m=2, tau=0.5, rng=None, prefix="mog", learn_weights=True, trainable=True):
        if m < 1:
            raise ValueError("need at least one mixture component")
        if tau <= 0:
            raise ValueError(f"temperature must be > 0, got {tau}")
        rng = rng or np.random.default_rng(0)
        self.d = int(d)
        self.m = int(m)
        self.tau = float(tau)
        self.learn_weights = learn_weights
        self.trainable = trainable
        self.logits = Param(f"{prefix}.logits", np.zeros((d, m)))
        self.means = Param(f"{prefix}.means", rng.uniform(-0.5, 0.5, size=(d, m)))
        # spread initial scales geometrically so components start distinct
        base = np.log(0.3) + np.arange(m) * (np.log(2.0) if m > 1 else 0.0)
        self.log_scales = Param(f"{prefix}.log_scales",
                                base[None, :] + 0.05 * rng.standard_normal((d, m)))

    @property
    def weights(self) -> np.ndarray:
        e = np.exp(self.logits.value - self.logits.value.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def params(self):
        if not self.trainable:
            return []
        ps = [self.means, self.log_scales]
        if self.learn_weights:
            ps.insert(0, self.logits)
        return ps

    def sample(self, batch: int, rng) -> Tensor:
        """(d, batch) source matrix; draws Gumbel then Gaussian noise from rng."""
        if batch < 1:
            raise ValueError("batch must be >= 1")
        g = sample_gumbel((self.d, batch, self.m), rng)
        eps = rng.standard_normal((self.d, batch, 1))
        logits3 = dc.reshape(self.logits, (self.d, 1, self.m))
        soft = dc.softmax(dc.scale(dc.add(logits3, g), 1.0 / self.tau), axis=-1)
        mu = dc.matmul(soft, dc.reshape(self.means, (self.d, self.m, 1)))
        sig = dc.matmul(soft, dc.reshape(dc.exp(self.log_scales), (self.d, self.m, 1)))
        out = dc.add(mu, dc.mul(sig, eps))
        return dc.reshape(out, (self.d, batch))


class GaussianScaleGen:
    """d independent zero-mean Gaussians with learnable positive scales."""

    def __init__(self, d, init_scale=0.3, prefix="gauss", trainable=True):
        self.d = int(d)
        self.trainable = trainable
        self.log_scales = Param(f"{prefix}.log_scales", np.full((d, 1), np.log(init_scale)))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales.value[:, 0])

    def params(self):
        return [self.log_scales] if self.trainable else []

    def sample(self, batch: int, rng) -> Tensor:
        eps = rng.standard_normal((self.d, batch))
        return dc.mul(dc.exp(self.log_scales), eps)


def make_source_gen(d, n_samples, kind="auto", mog_m=2, tau=0.5, widths=(16, 16),
                    rng=None, prefix="src", learn_weights=True):
    """Pick a generator for ``d`` sources given the observed sample count.

    ``auto`` uses the MoG path below MOG_SAMPLE_THRESHOLD observations and the
    MLP path otherwise; explicit ``mlp`` / ``mog`` override the rule.
    """
    if kind == "auto":
        kind = "mog" if n_samples < MOG_SAMPLE_THRESHOLD else "mlp"
    if kind == "mlp":
        return MlpSourceGen(d, widths=widths, rng=rng, prefix=prefix)
    if kind == "mog":
        return MogSourceGen(d, m=mog_m, tau=tau, rng=rng, prefix=prefix, learn_weights=learn_weights)
    raise ValueError(f"unknown source generator kind {kind!r}")
