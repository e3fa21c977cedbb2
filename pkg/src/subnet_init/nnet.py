"""Small fully connected tanh networks, reverse-mode gradients and Adam.

Parameters are plain numpy arrays. Each network keeps its output layer
(``last_weight``, ``last_bias``) separate from the hidden stack so that the
nonlinear contribution can be switched off by zeroing it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericError


@dataclass
class MLP:
    hidden: list  # [(W, b)], W of shape (out, in)
    last_weight: np.ndarray
    last_bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.hidden[0][0].shape[1] if self.hidden else self.last_weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.last_weight.shape[0]

    @property
    def hidden_dims(self) -> list[int]:
        return [W.shape[0] for W, _ in self.hidden]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in flattening order."""
        out = []
        for W, b in self.hidden:
            out += [W, b]
        return out + [self.last_weight, self.last_bias]

    def copy(self) -> "MLP":
        return MLP([(W.copy(), b.copy()) for W, b in self.hidden], self.last_weight.copy(), self.last_bias.copy())

    def zeros_like(self) -> "MLP":
        return MLP([(np.zeros_like(W), np.zeros_like(b)) for W, b in self.hidden],
                   np.zeros_like(self.last_weight), np.zeros_like(self.last_bias))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_dict(self) -> dict:
        return {"hidden": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.hidden],
                "last_weight": self.last_weight.tolist(), "last_bias": self.last_bias.tolist()}

    @classmethod
    def from_dict(cls, d) -> "MLP":
        hidden = [(np.asarray(h["W"], dtype=float), np.asarray(h["b"], dtype=float)) for h in d["hidden"]]
        return cls(hidden, np.asarray(d["last_weight"], dtype=float), np.asarray(d["last_bias"], dtype=float))


def uniform_scaled(rng: np.random.Generator, shape, n_in: int) -> np.ndarray:
    """U(-1, 1) / sqrt(n_in)."""
    return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(n_in)


def mlp_init(in_dim: int, hidden_dims, out_dim: int, seed=0) -> MLP:
    """Weights U(-1,1)/sqrt(n_in) per layer, all biases zero.

    ``seed`` may be an int or an existing ``np.random.Generator`` (PCG64).
    """
    if in_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden_dims):
        raise ValueError("all layer widths must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hidden = []
    width = in_dim
    for h in hidden_dims:
        hidden.append((uniform_scaled(rng, (h, width), width), np.zeros(h)))
        width = h
    return MLP(hidden, uniform_scaled(rng, (out_dim, width), width), np.zeros(out_dim))


def mlp_hidden(m: MLP, x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != m.in_dim:
        raise DimensionError(f"input width {a.shape[-1]} != {m.in_dim}")
    for W, b in m.hidden:
        a = np.tanh(a @ W.T + b)
    return a


def mlp_forward(m: MLP, x) -> np.ndarray:
    """W_last * phi(x) + b_last; ``x`` may carry leading batch axes."""
    return mlp_hidden(m, x) @ m.last_weight.T + m.last_bias


def mlp_forward_cached(m: MLP, X: np.ndarray):
    acts = [X]
    a = X
    for W, b in m.hidden:
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    return a @ m.last_weight.T + m.last_bias, acts


def mlp_backward(m: MLP, acts, dout: np.ndarray, grads: MLP) -> np.ndarray:
    """Accumulate parameter gradients into ``grads``; return d(loss)/d(input)."""
    grads.last_weight += dout.T @ acts[-1]
    grads.last_bias += dout.sum(axis=0)
    d = dout @ m.last_weight
    for li in range(len(m.hidden) - 1, -1, -1):
        W, _ = m.hidden[li]
        a = acts[li + 1]
        d = d * (1.0 - a * a)
        gW, gb = grads.hidden[li]
        gW += d.T @ acts[li]
        gb += d.sum(axis=0)
        d = d @ W
    return d


def mlp_flatten(m: MLP) -> np.ndarray:
    return np.concatenate([a.ravel() for a in m.arrays()])


def mlp_unflatten(template: MLP, vec) -> MLP:
    vec = np.asarray(vec, dtype=float)
    if vec.size != template.size:
        raise DimensionError(f"expected {template.size} parameters, got {vec.size}")
    out, i = [], 0
    for a in template.arrays():
        out.append(vec[i:i + a.size].reshape(a.shape).copy())
        i += a.size
    hidden = [(out[2 * k], out[2 * k + 1]) for k in range(len(template.hidden))]
    return MLP(hidden, out[-2], out[-1])


# --- general reverse mode over a small set of primitives ----------------------------------

class Var:
    """Node of a reverse-mode graph.

    Supported primitives: matmul, elementwise add/sub/mul (with broadcasting
    and scalars), tanh, square, sum, mean, reshape and basic slicing. That is
    enough to express affine maps, tanh networks and squared-error losses.
    """

    __array_priority__ = 100

    def __init__(self, value, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents  # ((Var, vjp), ...)
        self.op = op
        self.grad = None
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite value produced by '{op}'")

    @property
    def shape(self):
        return self.value.shape

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Var) else Var(x, op="const")

    def __add__(self, other):
        other = self._lift(other)
        return Var(self.value + other.value,
                   ((self, lambda g: _unbroadcast(g, self.shape)), (other, lambda g: _unbroadcast(g, other.shape))),
                   "add")

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),), "neg")

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        return Var(a * b, ((self, lambda g: _unbroadcast(g * b, a.shape)),
                           (other, lambda g: _unbroadcast(g * a, b.shape))), "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value

        def ga(g):
            if b.ndim == 1:
                return np.multiply.outer(g, b) if a.ndim == 2 else g * b
            return g @ b.T if a.ndim > 1 else b @ g

        def gb(g):
            if a.ndim == 1:
                return np.multiply.outer(a, g) if b.ndim == 2 else g * a
            return a.T @ g if b.ndim > 1 else g @ a

        return Var(a @ b, ((self, ga), (other, gb)), "matmul")

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    def tanh(self):
        t = np.tanh(self.value)
        return Var(t, ((self, lambda g: g * (1.0 - t * t)),), "tanh")

    def square(self):
        v = self.value
        return Var(v * v, ((self, lambda g: 2.0 * g * v),), "square")

    def sum(self):
        shape = self.shape
        return Var(self.value.sum(), ((self, lambda g: np.broadcast_to(g, shape).copy()),), "sum")

    def mean(self):
        n = self.value.size
        shape = self.shape
        return Var(self.value.mean(), ((self, lambda g: np.full(shape, g / n)),), "mean")

    def reshape(self, *shape):
        old = self.shape
        return Var(self.value.reshape(*shape), ((self, lambda g: g.reshape(old)),), "reshape")

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, vjp),), "getitem")

    def backward(self):
        if self.value.size != 1:
            raise DimensionError("backward() needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p, _ in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            for p, vjp in node.parents:
                g = vjp(node.grad)
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient through '{node.op}'")
                p.grad = p.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def gradient(loss_fn, params) -> np.ndarray:
    """Reverse-mode gradient of a scalar ``loss_fn(Var) -> Var`` at ``params``."""
    p = Var(np.array(params, dtype=float), op="param")
    out = loss_fn(p)
    if not isinstance(out, Var):
        raise TypeError("loss_fn must return a Var")
    out.backward()
    return p.grad


def mlp_forward_var(template: MLP, flat: Var, x) -> Var:
    """Evaluate an MLP whose parameters are the slices of ``flat`` (MLP flattening order)."""
    i = 0
    mats = []
    for a in template.arrays():
        mats.append(flat[i:i + a.size].reshape(a.shape))
        i += a.size
    h = Var._lift(x)
    for k in range(len(template.hidden)):
        W, b = mats[2 * k], mats[2 * k + 1]
        h = _affine(h, W, b).tanh()
    return _affine(h, mats[-2], mats[-1])


def _affine(x: Var, W: Var, b: Var) -> Var:
    # x @ W^T + b, expressed as (W @ x^T)^T for 1-D x
    if x.value.ndim == 1:
        return W @ x + b
    return _transpose(W @ _transpose(x)) + b


def _transpose(v: Var) -> Var:
    return Var(v.value.T, ((v, lambda g: g.T),), "transpose")


# --- Adam ------------------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, **kw)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if params.shape != grad.shape or grad.shape != state.first_moment.shape:
        raise DimensionError("params, grad and optimizer state must have the same shape")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, replace(state, first_moment=m, second_moment=v, step_count=t)
