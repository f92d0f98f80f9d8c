"""Minimal reverse-mode autodiff substrate on float64 numpy arrays.

Provides exactly the differentiable operations the detection network
needs: dense layers, a stacked LSTM, degree-normalized graph convolution,
a full-width convolution kernel, softmax and cross-entropy, plus Adam
with decoupled weight decay, dropout, Xavier initialization, and a
central finite-difference gradient checker.

Everything is float64 and deterministic. No operation consumes entropy
except dropout, which takes an explicit numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "add",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "pow_const",
    "tsum",
    "sum_axis",
    "mean",
    "concat",
    "narrow",
    "gather_rows",
    "edge_matrix",
    "reshape",
    "softmax",
    "cross_entropy",
    "dropout",
    "mlp_apply",
    "lstm_apply",
    "gcn_layer",
    "conv_scalar",
    "Adam",
    "xavier_uniform",
    "GradCheckReport",
    "grad_check",
]


class Tensor:
    """A float64 array plus the bookkeeping reverse-mode differentiation needs.

    Constructing a Tensor from external data checks finiteness; internal op
    results skip the check (ops cannot create NaN/Inf from finite inputs
    given the domains this substrate uses them on).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (got NaN/Inf)")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar w.r.t. every graph leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; constants are promoted to non-grad Tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __sub__(self, other):
        return add(self, mul(_wrap(other), _wrap(-1.0)))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, _wrap(-1.0)))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named, trainable Tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Grads are only ever rebound, never mutated in place, so holding a
    # reference (even a read-only broadcast view) is safe.
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reverse numpy broadcasting: reduce g down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _sum_to(g, a.data.shape))
        _accumulate(b, _sum_to(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _sum_to(g * b.data, a.data.shape))
        _accumulate(b, _sum_to(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    data = np.where(mask, x.data, 0.0)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _result(data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - data * data))

    return _result(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * data)

    return _result(data, (x,), backward)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(g):
        _accumulate(x, g / x.data)

    return _result(data, (x,), backward)


def pow_const(x: Tensor, p: float) -> Tensor:
    data = np.power(x.data, p)

    def backward(g):
        _accumulate(x, g * p * np.power(x.data, p - 1.0))

    return _result(data, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _result(data, (x,), backward)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _result(data, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.sum() / n)

    def backward(g):
        _accumulate(x, np.broadcast_to(g / n, x.data.shape))

    return _result(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _result(data, tensors, backward)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full)

    return _result(data, (x,), backward)


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accumulate(x, full)

    return _result(data, (x,), backward)


def edge_matrix(weights: Tensor, pairs: Sequence[tuple[int, int]], n: int) -> Tensor:
    """Scatter per-edge weights (shape (n_edges, 1)) into an (n, n) adjacency.

    Unlisted cells, including the diagonal, stay zero.
    """
    rows = np.fromiter((i for i, _ in pairs), dtype=np.intp, count=len(pairs))
    cols = np.fromiter((j for _, j in pairs), dtype=np.intp, count=len(pairs))
    data = np.zeros((n, n), dtype=np.float64)
    data[rows, cols] = weights.data[:, 0]

    def backward(g):
        _accumulate(weights, g[rows, cols].reshape(-1, 1))

    return _result(data, (weights,), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _result(data, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise max-shifted softmax; each row sums to 1."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _result(data, (x,), backward)


def cross_entropy(probs: Tensor, target) -> Tensor:
    """-sum(y_i * ln p_i) for a one-hot target over a probability row.

    `target` is a class index or a one-hot array. `probs` must already be a
    distribution (softmax output); this is validated, not assumed.
    """
    p = probs.data.reshape(-1)
    if np.any(p < 0.0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-6):
        raise ValueError("cross_entropy expects a probability distribution")
    if isinstance(target, (int, np.integer)):
        idx = int(target)
    else:
        onehot = np.asarray(target, dtype=np.float64).reshape(-1)
        if onehot.shape != p.shape or not math.isclose(onehot.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("target must be one-hot over the same classes")
        idx = int(np.argmax(onehot))
    if not 0 <= idx < p.size:
        raise ValueError(f"target index {idx} out of range for {p.size} classes")
    data = np.asarray(-np.log(p[idx]))

    def backward(g):
        full = np.zeros_like(probs.data)
        full.reshape(-1)[idx] = -float(g) / p[idx]
        _accumulate(probs, full)

    return _result(data, (probs,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors.

    Identity at rate 0 or outside training; inference never consumes rng.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask

    def backward(g):
        _accumulate(x, g * mask)

    return _result(data, (x,), backward)


# ---------------------------------------------------------------------------
# network building blocks

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda t: t,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
}


def mlp_apply(
    layers: Sequence[tuple[Tensor, Tensor, str]],
    x: Tensor,
    *,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Affine-then-activation stack: x -> act(x @ W + b) per layer.

    Each layer is (W, b, activation_name). Dropout, when requested, follows
    every activation.
    """
    out = x
    for W, b, act in layers:
        if out.data.shape[-1] != W.data.shape[0]:
            raise ValueError(
                f"mlp_apply shape mismatch: input width {out.data.shape[-1]} "
                f"vs weight rows {W.data.shape[0]}"
            )
        out = _ACTIVATIONS[act](add(matmul(out, W), b))
        if dropout_rate > 0.0:
            out = dropout(out, dropout_rate, rng, training)
    return out


def lstm_apply(cells: Sequence[dict[str, Tensor]], X: Tensor, hidden: int) -> Tensor:
    """Run a stacked LSTM over the rows of X and return the final hidden state.

    Each cell dict holds Wx (in, 4h), Wh (h, 4h), b (1, 4h) with gate order
    i, f, g, o. An empty input (0 rows) yields the zero vector, the rule for
    empty subsequences.
    """
    n = X.data.shape[0] if X is not None else 0
    if n == 0:
        return Tensor(np.zeros((1, hidden)))
    if X.data.shape[1] != cells[0]["Wx"].data.shape[0]:
        raise ValueError(
            f"lstm_apply input width {X.data.shape[1]} does not match "
            f"Wx rows {cells[0]['Wx'].data.shape[0]}"
        )
    h = hidden
    inputs = [narrow(X, 0, t, t + 1) for t in range(n)]
    last_h: Tensor | None = None
    for cell in cells:
        h_t = Tensor(np.zeros((1, h)))
        c_t = Tensor(np.zeros((1, h)))
        outputs = []
        for x_t in inputs:
            z = add(add(matmul(x_t, cell["Wx"]), matmul(h_t, cell["Wh"])), cell["b"])
            i_g = sigmoid(narrow(z, 1, 0, h))
            f_g = sigmoid(narrow(z, 1, h, 2 * h))
            g_g = tanh(narrow(z, 1, 2 * h, 3 * h))
            o_g = sigmoid(narrow(z, 1, 3 * h, 4 * h))
            c_t = add(mul(f_g, c_t), mul(i_g, g_g))
            h_t = mul(o_g, tanh(c_t))
            outputs.append(h_t)
        inputs = outputs
        last_h = h_t
    return last_h


def gcn_layer(W: Tensor, X: Tensor, A: Tensor) -> Tensor:
    """One graph-convolution layer with symmetric degree normalization.

    Self-loops are added internally: with A_hat = A + I and D the row-sum
    degrees of A_hat, the output is D^-1/2 A_hat D^-1/2 X W. The caller
    applies its own nonlinearity.
    """
    n = A.data.shape[0]
    if A.data.shape != (n, n):
        raise ValueError(f"adjacency must be square, got {A.data.shape}")
    if X.data.shape[0] != n:
        raise ValueError(f"node count mismatch: A is {n}x{n}, X has {X.data.shape[0]} rows")
    a_hat = add(A, Tensor(np.eye(n)))
    deg = sum_axis(a_hat, axis=1)
    d_inv_sqrt = pow_const(deg, -0.5)
    a_norm = mul(mul(d_inv_sqrt, a_hat), reshape(d_inv_sqrt, (1, n)))
    return matmul(matmul(a_norm, X), W)


def conv_scalar(kernel: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """Full-width 1-D convolution producing one value: dot(kernel, x) + bias."""
    if x.data.shape[-1] != kernel.data.shape[0]:
        raise ValueError(
            f"conv_scalar length mismatch: input {x.data.shape[-1]} vs kernel {kernel.data.shape[0]}"
        )
    return add(matmul(x, kernel), bias)


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    The decay shrinks parameters by lr * weight_decay * theta before the
    moment-based update, so the moments never see the decay term.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for parameter {getattr(p, 'name', i)}")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1**self.t)
            v_hat = self._v[i] / (1.0 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [m.copy() for m in self._m],
            "v": [v.copy() for v in self._v],
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self._m = [np.asarray(m, dtype=np.float64).copy() for m in state["m"]]
        self._v = [np.asarray(v, dtype=np.float64).copy() for v in state["v"]]


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Xavier/Glorot uniform draw; 1-D shapes are treated as fan_in x 1."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        raise ValueError(f"unsupported shape {shape}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]

    def ok(self, tolerance: float = 1e-3) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of scalar fn() against central differences.

    Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator; the
    floor keeps finite-difference roundoff on near-zero gradients from
    drowning the signal.
    """
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    per_param: dict[str, float] = {}
    worst = 0.0
    worst_name = ""
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = fn().item()
            flat[k] = orig - step
            f_minus = fn().item()
            flat[k] = orig
            num[k] = (f_plus - f_minus) / (2.0 * step)
        a_flat = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a_flat), np.abs(num)), 1e-3)
        err = float(np.max(np.abs(a_flat - num) / denom)) if flat.size else 0.0
        name = getattr(p, "name", f"param{len(per_param)}")
        per_param[name] = err
        if err >= worst:
            worst = err
            worst_name = name
    return GradCheckReport(max_rel_error=worst, worst_param=worst_name, per_param=per_param)
