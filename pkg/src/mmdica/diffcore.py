"""Minimal differentiable-computation substrate.

Reverse-mode gradient accumulation over a small, fixed vocabulary of
array operations (matmul, broadcast add/mul, elementwise nonlinearities,
softmax, reductions, matrix inverse, Gaussian kernel stacks), plus an
adaptive-moment optimizer and the L1 proximal step.  Everything runs in
float64 on plain numpy arrays; graphs are rebuilt every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(ArithmeticError):
    """A non-finite loss or gradient was produced."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the computation graph.

    ``parents`` holds ``(tensor, vjp)`` pairs where ``vjp`` maps the
    upstream gradient to this parent's gradient contribution.  Constant
    inputs are folded away at construction, so graphs only retain the
    differentiable frontier.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents=(), requires_grad=None, name=None):
        self.value = _as_array(value)
        self.parents = tuple(parents)
        if requires_grad is None:
            requires_grad = len(self.parents) > 0
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    # arithmetic sugar; scalars and arrays are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is outside the op vocabulary")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Param(Tensor):
    """Named leaf tensor with a persistent gradient accumulator."""

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _split(x):
    """(value, tensor_or_None) for a tensor-or-constant operand."""
    if isinstance(x, Tensor):
        return x.value, (x if x.requires_grad else None)
    return _as_array(x), None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# op vocabulary
# ---------------------------------------------------------------------------

def add(a, b):
    av, at = _split(a)
    bv, bt = _split(b)
    parents = []
    if at is not None:
        parents.append((at, lambda g: _unbroadcast(g, av.shape)))
    if bt is not None:
        parents.append((bt, lambda g: _unbroadcast(g, bv.shape)))
    return Tensor(av + bv, parents)


def mul(a, b):
    av, at = _split(a)
    bv, bt = _split(b)
    parents = []
    if at is not None:
        parents.append((at, lambda g: _unbroadcast(g * bv, av.shape)))
    if bt is not None:
        parents.append((bt, lambda g: _unbroadcast(g * av, bv.shape)))
    return Tensor(av * bv, parents)


def scale(a, c: float):
    av, at = _split(a)
    c = float(c)
    parents = [(at, lambda g: g * c)] if at is not None else []
    return Tensor(av * c, parents)


def matmul(a, b):
    av, at = _split(a)
    bv, bt = _split(b)
    if av.ndim != bv.ndim or av.ndim not in (2, 3):
        raise ValueError(f"matmul expects matched 2-D or 3-D operands, got {av.shape} @ {bv.shape}")
    if av.ndim == 3 and av.shape[0] != bv.shape[0]:
        raise ValueError(f"batched matmul leading dims differ: {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {av.shape} @ {bv.shape}")
    parents = []
    if at is not None:
        parents.append((at, lambda g: g @ bv.swapaxes(-1, -2)))
    if bt is not None:
        parents.append((bt, lambda g: av.swapaxes(-1, -2) @ g))
    return Tensor(av @ bv, parents)


def transpose(a):
    av, at = _split(a)
    if av.ndim != 2:
        raise ValueError("transpose expects a 2-D operand")
    parents = [(at, lambda g: g.T)] if at is not None else []
    return Tensor(av.T, parents)


def reshape(a, shape):
    av, at = _split(a)
    parents = [(at, lambda g: g.reshape(av.shape))] if at is not None else []
    return Tensor(av.reshape(shape), parents)


def concat(parts, axis: int):
    vals, tens = zip(*(_split(p) for p in parts))
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    parents = []
    for i, t in enumerate(tens):
        if t is not None:
            parents.append((t, lambda g, i=i: np.split(g, sizes, axis=axis)[i]))
    return Tensor(np.concatenate(vals, axis=axis), parents)


def exp(a):
    av, at = _split(a)
    out = np.exp(av)
    parents = [(at, lambda g: g * out)] if at is not None else []
    return Tensor(out, parents)


def log(a):
    av, at = _split(a)
    parents = [(at, lambda g: g / av)] if at is not None else []
    return Tensor(np.log(av), parents)


def leaky_relu(a, slope: float = 0.2):
    av, at = _split(a)
    mask = np.where(av > 0, 1.0, slope)
    parents = [(at, lambda g: g * mask)] if at is not None else []
    return Tensor(np.where(av > 0, av, slope * av), parents)


def softmax(a, axis: int = -1):
    av, at = _split(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    parents = [(at, vjp)] if at is not None else []
    return Tensor(s, parents)


def tsum(a, axis=None, keepdims: bool = False):
    av, at = _split(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    parents = [(at, vjp)] if at is not None else []
    return Tensor(av.sum(axis=axis, keepdims=keepdims), parents)


def tmean(a, axis=None):
    av, at = _split(a)
    count = av.size if axis is None else av.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / count)


def inv(a):
    av, at = _split(a)
    out = np.linalg.inv(av)
    parents = [(at, lambda g: -(out.T @ g @ out.T))] if at is not None else []
    return Tensor(out, parents)


def rbf_stack(d2, coeffs):
    """Stack of Gaussian kernel matrices ``exp(-c_b * d2)`` over bandwidth coefficients.

    ``d2`` is a matrix of squared distances; ``coeffs`` a constant 1-D array of
    ``1 / (2 sigma^2)`` values.  One fused node keeps multi-bandwidth kernels cheap.
    """
    dv, dt = _split(d2)
    c = _as_array(coeffs).reshape(-1, 1, 1)
    out = np.exp(-c * dv[None, :, :])
    parents = [(dt, lambda g: -(g * out * c).sum(axis=0))] if dt is not None else []
    return Tensor(out, parents)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every participating tensor from a scalar loss.

    Raises DivergenceError if the loss or any named parameter's gradient
    comes out non-finite; forward values are left untouched.
    """
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not np.isfinite(loss.value):
        raise DivergenceError("loss is non-finite")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += contrib
    for node in order:
        if node.name is not None and not np.isfinite(node.grad).all():
            raise DivergenceError(f"non-finite gradient in parameter {node.name!r}")


# ---------------------------------------------------------------------------
# optimizer and proximal step
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter adaptive-moment state."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, param: Param, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=np.zeros_like(param.value), v=np.zeros_like(param.value),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: Param, state: AdamState):
    """One bias-corrected adaptive-moment update of ``param`` in place."""
    g = param.grad
    if not np.isfinite(g).all():
        raise DivergenceError(f"non-finite gradient in parameter {param.name!r}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = [AdamState.fresh(p, lr, beta1, beta2, eps) for p in self.params]

    @property
    def lr(self):
        return self.states[0].lr if self.states else None

    def set_lr(self, lr: float):
        for s in self.states:
            s.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, s in zip(self.params, self.states):
            adam_step(p, s)


@dataclass(frozen=True)
class ProxConfig:
    """L1 proximal-step configuration: threshold is ``lam * gamma``."""

    lam: float = 0.0
    gamma: float = 1e-3

    def __post_init__(self):
        t = self.lam * self.gamma
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"prox threshold lam*gamma must be finite and >= 0, got {t}")

    @property
    def threshold(self) -> float:
        return self.lam * self.gamma


def prox_l1(a, t: float) -> np.ndarray:
    """Soft-thresholding: shrink every entry of ``a`` toward zero by ``t``."""
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    a = _as_array(a)
    return np.sign(a) * np.maximum(np.abs(a) - t, 0.0)


def grad_check(forward_fn, params, epsilon: float = 1e-5, max_coords=None, rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``forward_fn`` must be deterministic given the current parameter values
    (freeze any noise before calling).  Error is measured per coordinate as
    ``|analytic - fd| / max(1, |analytic|)`` over all (or ``max_coords``
    sampled) coordinates of every parameter.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    for p in params:
        p.zero_grad()
    backward(forward_fn())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat_v = p.value.reshape(-1)
        flat_g = ga.reshape(-1)
        idx = np.arange(flat_v.size)
        if max_coords is not None and flat_v.size > max_coords:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat_v.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat_v[i]
            flat_v[i] = orig + epsilon
            hi = float(forward_fn().value)
            flat_v[i] = orig - epsilon
            lo = float(forward_fn().value)
            flat_v[i] = orig
            fd = (hi - lo) / (2.0 * epsilon)
            err = abs(flat_g[i] - fd) / max(1.0, abs(flat_g[i]))
            worst = max(worst, err)
    return worst
