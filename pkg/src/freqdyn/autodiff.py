"""Dense-tensor math with reverse-mode differentiation.

Minimal op set for spectrogram CNN/RNN models: dilated 2-D convolution,
average pooling, batch normalization, elementwise nonlinearities,
temperature softmax, and shape plumbing. Values are numpy arrays,
row-major, with rank-4 data laid out as [batch, channel, time, frequency].

Every operation builds a node in a DAG when any input requires gradients;
`backward(loss)` zeroes the gradients of the whole reachable graph and then
accumulates into them in one reverse topological sweep.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from absorbing Tensors in mixed expressions; binary ops
    # then fall back to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if requires_grad and not np.issubdtype(self.data.dtype, np.floating):
            raise ConfigurationError(
                f"gradients need a float dtype, got {self.data.dtype}")
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    # -- arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_coerce(other, self), -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) != 1 else axes[0])

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _node(data: Array, parents: Sequence[Tensor],
          backward_fn: Callable[[Array], None]) -> Tensor:
    """Create a graph node, or a detached constant when nothing needs grads."""
    tracked = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward_fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Zero the reachable graph's gradients, then run one reverse sweep.

    The loss must be a single scalar value. Gradients accumulate within the
    sweep (fan-out adds), but every sweep starts from a clean slate, so
    calling this twice on the same graph yields identical leaf gradients.
    """
    if loss.data.size != 1:
        raise ConfigurationError(
            f"reverse sweep needs a scalar loss, got shape {loss.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- elementwise arithmetic ------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data + b.data

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), fn)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data * b.data

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _node(data, (a, b), fn)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    data = a.data ** exponent

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * exponent * a.data ** (exponent - 1.0)

    return _node(data, (a,), fn)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * data

    return _node(data, (a,), fn)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g / a.data

    return _node(data, (a,), fn)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * (1.0 - data * data)

    return _node(data, (a,), fn)


def sigmoid(a: Tensor) -> Tensor:
    # Evaluate on the stable side of the exponential for both signs.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype, copy=False)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * data * (1.0 - data)

    return _node(data, (a,), fn)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * (a.data > 0)

    return _node(data, (a,), fn)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ConfigurationError(f"clip needs lo < hi, got [{lo}, {hi}]")
    data = np.clip(a.data, lo, hi)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g * ((a.data >= lo) & (a.data <= hi))

    return _node(data, (a,), fn)


# -- linear algebra and shape plumbing --------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigurationError(
            f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(
            f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                                   a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                                   b.data.shape)

    return _node(data, (a, b), fn)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    return _node(data, (a,), fn)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad += g.transpose(inverse)

    return _node(data, (a,), fn)


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def fn(g: Array) -> None:
        if a.requires_grad:
            a.grad[key] += g

    return _node(data, (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn(g: Array) -> None:
        index: list = [slice(None)] * g.ndim
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index[axis] = slice(start, stop)
                t.grad += g[tuple(index)]

    return _node(data, tensors, fn)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g: Array) -> None:
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += g
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.data.shape)

    return _node(data, (a,), fn)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a: Tensor, axis: int, tau: float = 1.0) -> Tensor:
    """Temperature softmax along one axis: softmax(x / tau)."""
    if tau <= 0:
        raise ConfigurationError(f"softmax temperature must be > 0, got {tau}")
    scaled = a.data / tau
    scaled = scaled - scaled.max(axis=axis, keepdims=True)
    ex = np.exp(scaled)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def fn(g: Array) -> None:
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a.grad += data * (g - dot) / tau

    return _node(data, (a,), fn)


# -- convolution and pooling -------------------------------------------------

def _same_padding(kernel: int, dilation: int) -> tuple[int, int]:
    """Zero padding preserving extent at stride 1; the extra cell goes last."""
    total = (kernel - 1) * dilation
    return total // 2, total - total // 2


def _conv_geometry(x_shape, w_shape, stride, dilation, padding):
    _, c_in, t_in, f_in = x_shape
    c_out, c_w, k_t, k_f = w_shape
    if c_w != c_in:
        raise ConfigurationError(
            f"conv2d channel mismatch: input {x_shape} vs kernel {w_shape}")
    s_t, s_f = stride
    d_t, d_f = dilation
    if min(s_t, s_f, d_t, d_f) < 1:
        raise ConfigurationError(
            f"conv2d stride/dilation must be >= 1, got {stride}/{dilation}")
    if padding == "same":
        pads = (_same_padding(k_t, d_t), _same_padding(k_f, d_f))
    elif isinstance(padding, int):
        pads = ((padding, padding), (padding, padding))
    else:
        (p0, p1), (q0, q1) = padding
        pads = ((int(p0), int(p1)), (int(q0), int(q1)))
    eff_t = (k_t - 1) * d_t + 1
    eff_f = (k_f - 1) * d_f + 1
    t_out = (t_in + sum(pads[0]) - eff_t) // s_t + 1
    f_out = (f_in + sum(pads[1]) - eff_f) // s_f + 1
    if t_out <= 0 or f_out <= 0:
        raise ConfigurationError(
            f"conv2d output would be empty: input {x_shape}, kernel {w_shape}, "
            f"stride {stride}, dilation {dilation}, padding {pads}")
    return pads, t_out, f_out


def _windows(xp: Array, k_t: int, k_f: int, stride, dilation,
             t_out: int, f_out: int) -> Array:
    """Strided view [B, C, kT, kF, To, Fo] over the padded input."""
    s_t, s_f = stride
    d_t, d_f = dilation
    sb, sc, st, sf = xp.strides
    shape = (xp.shape[0], xp.shape[1], k_t, k_f, t_out, f_out)
    strides = (sb, sc, st * d_t, sf * d_f, st * s_t, sf * s_f)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: tuple[int, int] = (1, 1),
           dilation: tuple[int, int] = (1, 1),
           padding="same") -> Tensor:
    """2-D cross-correlation over [B, C, T, F] with zero padding.

    "same" padding preserves T and F at stride 1; when the pad total is odd
    the extra cell goes at the end of the axis. Dilation spreads kernel taps
    by the given factor (dilation 1 is an ordinary dense kernel).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(
            f"conv2d expects rank-4 input and kernel, got {x.shape} and "
            f"{weight.shape}")
    pads, t_out, f_out = _conv_geometry(
        x.shape, weight.shape, stride, dilation, padding)
    c_out, c_in, k_t, k_f = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), pads[0], pads[1]))
    win = _windows(xp, k_t, k_f, stride, dilation, t_out, f_out)
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(-1, c_in * k_t * k_f)
    out = cols @ weight.data.reshape(c_out, -1).T
    out = out.reshape(x.shape[0], t_out, f_out, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ConfigurationError(
                f"conv2d bias shape {bias.shape} does not match C_out={c_out}")
        out = out + bias.data.reshape(1, c_out, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def fn(g: Array) -> None:
        if bias is not None and bias.requires_grad:
            bias.grad += g.sum(axis=(0, 2, 3))
        if weight.requires_grad:
            weight.grad += np.tensordot(g, win, axes=([0, 2, 3], [0, 4, 5]))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            s_t, s_f = stride
            d_t, d_f = dilation
            for i in range(k_t):
                for j in range(k_f):
                    patch = np.tensordot(g, weight.data[:, :, i, j],
                                         axes=([1], [0]))
                    dxp[:, :,
                        i * d_t: i * d_t + t_out * s_t: s_t,
                        j * d_f: j * d_f + f_out * s_f: s_f
                        ] += patch.transpose(0, 3, 1, 2)
            t_in, f_in = x.shape[2], x.shape[3]
            x.grad += dxp[:, :, pads[0][0]: pads[0][0] + t_in,
                          pads[1][0]: pads[1][0] + f_in]

    return _node(out, parents, fn)


def avg_pool2d(x: Tensor, window: tuple[int, int]) -> Tensor:
    """Non-overlapping mean pooling; window must divide the pooled axes."""
    p_t, p_f = window
    b, c, t, f = x.shape
    if t % p_t or f % p_f:
        raise ConfigurationError(
            f"avg_pool2d window {window} does not divide input {x.shape}")
    data = x.data.reshape(b, c, t // p_t, p_t, f // p_f, p_f).mean(axis=(3, 5))

    def fn(g: Array) -> None:
        if x.requires_grad:
            spread = g[:, :, :, None, :, None] / (p_t * p_f)
            x.grad += np.broadcast_to(
                spread, (b, c, t // p_t, p_t, f // p_f, p_f)).reshape(x.shape)

    return _node(data, (x,), fn)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: Array | None = None,
                 running_var: Array | None = None,
                 training: bool = True, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over [B, C, T, F].

    Training mode normalizes with biased batch statistics and, when running
    buffers are given, folds unbiased statistics into them in place. Eval
    mode normalizes with the running buffers only. Buffer updates are a
    plain in-place side effect; callers serialize access.
    """
    if eps <= 0:
        raise ConfigurationError(f"batch_norm2d eps must be > 0, got {eps}")
    if x.ndim != 4:
        raise ConfigurationError(f"batch_norm2d expects rank 4, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(
            f"batch_norm2d affine shapes {gamma.shape}/{beta.shape} do not "
            f"match C={c}")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // c
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            unbiased = var * (n / max(n - 1, 1))
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ConfigurationError(
                "batch_norm2d eval mode needs running statistics")
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def fn(g: Array) -> None:
        if beta.requires_grad:
            beta.grad += g.sum(axis=axes)
        if gamma.requires_grad:
            gamma.grad += (g * xhat).sum(axis=axes)
        if not x.requires_grad:
            return
        gg = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            n = x.data.size // c
            sum_gg = gg.sum(axis=axes, keepdims=True)
            sum_gg_xhat = (gg * xhat).sum(axis=axes, keepdims=True)
            x.grad += (inv.reshape(1, c, 1, 1) / n) * (
                n * gg - sum_gg - xhat * sum_gg_xhat)
        else:
            x.grad += gg * inv.reshape(1, c, 1, 1)

    return _node(data, (x, gamma, beta), fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout; identity when p == 0 or not training."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    mask = mask.astype(x.data.dtype)
    return mul(x, Tensor(mask))


# -- parameterized activations ----------------------------------------------

def context_gate(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Channel-gated linear unit: x * sigmoid(linear over the channel axis).

    The gate logit at (b, c, t, f) is sum_c' weight[c, c'] * x[b, c', t, f]
    plus bias[c], so each position is gated by a linear view of its own
    channel vector.
    """
    moved = transpose(x, (0, 2, 3, 1))
    logits = add(matmul(moved, transpose(weight, (1, 0))), bias)
    gate = transpose(sigmoid(logits), (0, 3, 1, 2))
    return mul(x, gate)


def activation(x: Tensor, kind: str, weight: Tensor | None = None,
               bias: Tensor | None = None) -> Tensor:
    """Dispatch over the supported activation kinds."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "glu_context_gate":
        if weight is None or bias is None:
            raise ConfigurationError(
                "glu_context_gate needs gate weight and bias parameters")
        return context_gate(x, weight, bias)
    raise ConfigurationError(f"unknown activation kind: {kind!r}")
