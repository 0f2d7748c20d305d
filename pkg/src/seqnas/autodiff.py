"""Reverse-mode automatic differentiation over float64 numpy arrays.

Forward math runs in numpy. While a :class:`Tape` is active (see
:func:`record`), every differentiable op appends a node holding its inputs,
its output and a backward closure. :func:`backward` walks the tape in
reverse execution order, which is a valid topological order because an op
can only consume tensors that already exist, and accumulates gradients
additively, so a tensor consumed twice receives the sum of both
contributions.

Everything is float64: fast enough at desk scale and tight enough that
central finite differences at eps=1e-5 resolve relative errors below 1e-4.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import ConfigError

# Additive score offset used to exclude masked attention keys. Large enough
# that exp underflows to exactly 0 after max subtraction, finite so no NaN.
_MASK_OFFSET = 1e30


class Tensor:
    """Dense n-d float64 array with a gradient slot and an optional tape handle."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_id = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of the value with no grad and no tape membership."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar; floats/ints are lifted to constant tensors --

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), _lift(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, _lift(-1.0)))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Execution-ordered operation record for one backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []


_ACTIVE: Tape | None = None


class record:
    """Context manager activating a fresh tape; ops outside run untracked."""

    def __enter__(self) -> Tape:
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = Tape()
        return _ACTIVE

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._prev
        return False


def active_tape() -> Tape | None:
    return _ACTIVE


def _track(inputs: tuple, out: Tensor, backward_fn) -> Tensor:
    tape = _ACTIVE
    if tape is None or not any(i.requires_grad for i in inputs):
        return out
    out.requires_grad = True
    out.tape_id = len(tape.nodes)
    tape.nodes.append(_Node(inputs, out, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.shape), dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate .grad for every requires_grad tensor reachable from `loss`.

    `loss` must be scalar. A constant (untracked) scalar is a no-op: there
    is nothing to propagate.
    """
    if loss.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _ACTIVE
    if tape is None or loss.tape_id is None:
        return
    loss.grad = np.ones((), dtype=np.float64)
    # Reverse execution order; nodes whose output never received a gradient
    # are unreachable from the loss and are skipped. Each node runs once.
    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        if node.output.grad is None:
            continue
        node.backward_fn(node.output.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _track((a, b), out, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _track((a, b), out, bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _track((a, b), out, bw)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def bw(g):
        _accum(x, g * (x.data > 0.0))

    return _track((x,), out, bw)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = Tensor(y)

    def bw(g):
        _accum(x, g * (0.5 / y))

    return _track((x,), out, bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _track((x,), out, bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.shape[ax]
    return mul(tsum(x, axis=axis, keepdims=keepdims), _lift(1.0 / n))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _track((x,), out, bw)


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    inv = np.argsort(axes)

    def bw(g):
        _accum(x, np.transpose(g, inv))

    return _track((x,), out, bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _track(tensors, out, bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dimensions like np.matmul.

    Backward: a.grad += g @ b^T, b.grad += a^T @ g (swapping the last two
    axes), with broadcast batch dimensions summed back out.
    """
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bw(g):
        _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _track((a, b), out, bw)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Softmax along `axis`, computed with max subtraction for stability."""
    if axis >= x.data.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax: NaN in input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot))

    return _track((x,), out, bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, kernel: Tensor, dilation: int = 1, groups: int = 1) -> Tensor:
    """Grouped dilated 1-d convolution with "same" zero padding.

    x is [batch, channels, time]; kernel is [out_channels, channels/groups, k].
    Output time length always equals input time length. Tap j reads input
    offset j*dilation - pad_left, so odd kernels are centered. groups ==
    channels gives the depthwise form.
    """
    B, Cin, T = x.shape
    Cout, cing, K = kernel.shape
    if Cin % groups != 0 or Cout % groups != 0:
        raise ConfigError(
            f"channels ({Cin} in, {Cout} out) not divisible by groups={groups}"
        )
    if cing != Cin // groups:
        raise ValueError(
            f"kernel expects {cing} channels/group, input has {Cin // groups}"
        )
    pad = dilation * (K - 1)
    pl = pad // 2
    pr = pad - pl
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if pad else x.data
    og = Cout // groups
    depthwise = groups == Cin and og == 1
    w = kernel.data
    if depthwise:
        acc = np.zeros((B, Cout, T), dtype=np.float64)
        for j in range(K):
            acc += w[None, :, 0, j, None] * xp[:, :, j * dilation : j * dilation + T]
        out = Tensor(acc)
    elif groups == 1:
        acc = np.zeros((B, Cout, T), dtype=np.float64)
        for j in range(K):
            acc += np.matmul(w[:, :, j], xp[:, :, j * dilation : j * dilation + T])
        out = Tensor(acc)
    else:
        xg = xp.reshape(B, groups, cing, T + pad)
        wg = w.reshape(groups, og, cing, K)
        acc = np.zeros((B, groups, og, T), dtype=np.float64)
        for j in range(K):
            seg = xg[:, :, :, j * dilation : j * dilation + T]
            acc += np.einsum("bgct,goc->bgot", seg, wg[:, :, :, j])
        out = Tensor(acc.reshape(B, Cout, T))

    def bw(g):
        gxp = np.zeros((B, Cin, T + pad), dtype=np.float64)
        gw = np.zeros_like(w)
        for j in range(K):
            sl = slice(j * dilation, j * dilation + T)
            seg = xp[:, :, sl]
            if depthwise:
                gxp[:, :, sl] += w[None, :, 0, j, None] * g
                gw[:, 0, j] = (g * seg).sum(axis=(0, 2))
            elif groups == 1:
                gxp[:, :, sl] += np.matmul(w[:, :, j].T, g)
                gw[:, :, j] = np.tensordot(g, seg, axes=([0, 2], [0, 2]))
            else:
                gg = g.reshape(B, groups, og, T)
                sg = seg.reshape(B, groups, cing, T)
                wj = w.reshape(groups, og, cing, K)[:, :, :, j]
                gxp[:, :, sl] += np.einsum("bgot,goc->bgct", gg, wj).reshape(B, Cin, T)
                gw.reshape(groups, og, cing, K)[:, :, :, j] = np.einsum(
                    "bgot,bgct->goc", gg, sg)
        _accum(x, gxp[:, :, pl : pl + T] if pad else gxp)
        _accum(kernel, gw)

    return _track((x, kernel), out, bw)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor) -> Tensor:
    """Single-head attention: softmax(q k^T / sqrt(dim)) v with key masking.

    mask is [batch, time] in {0,1}. Masked keys get a -1e30 score offset, so
    their softmax weight underflows to exactly zero; outputs at masked query
    positions are zeroed, which also defines an all-masked row as zero output.
    """
    dim = q.shape[-1]
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), _lift(1.0 / math.sqrt(dim)))
    scores = add(scores, Tensor((m[:, None, :] - 1.0) * _MASK_OFFSET))
    weights = softmax(scores, axis=2)
    out = matmul(weights, v)
    return mul(out, Tensor(m[:, :, None]))


# ---------------------------------------------------------------------------
# lookup, dropout, loss
# ---------------------------------------------------------------------------


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...]]. Backward scatter-adds."""
    ids = np.asarray(ids)
    out = Tensor(weight.data[ids])

    def bw(g):
        if not weight.requires_grad:
            return
        if weight.grad is None:
            weight.grad = np.zeros(weight.shape, dtype=np.float64)
        np.add.at(weight.grad, ids.reshape(-1), g.reshape(-1, weight.shape[1]))

    return _track((weight,), out, bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) at train time, identity at eval."""
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


def cross_entropy_masked(logits: Tensor, labels, ignore_id: int) -> Tensor:
    """Mean negative log-softmax over positions whose label != ignore_id.

    Ignored positions contribute zero loss and zero gradient. If every label
    is ignored the loss is defined as 0.0 and a warning is emitted.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(
            f"labels length {labels.shape[0]} != logits rows {logits.shape[0]}"
        )
    if np.isnan(logits.data).any():
        raise FloatingPointError("cross_entropy_masked: NaN in logits")
    valid = labels != ignore_id
    n = int(valid.sum())
    if n == 0:
        warnings.warn("cross_entropy_masked: every label ignored, loss defined as 0")
        return Tensor(0.0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.nonzero(valid)[0]
    out = Tensor(-logp[rows, labels[rows]].mean())

    def bw(g):
        p = np.exp(logp)
        gl = p.copy()
        gl[rows, labels[rows]] -= 1.0
        gl *= valid[:, None] * (g / n)
        _accum(logits, gl)

    return _track((logits,), out, bw)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps the given tensors to a scalar Tensor. The relative error for each
    input scalar is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    for t in inputs:
        t.grad = None
    with record():
        loss = f(*inputs)
        backward(loss)
        analytic = [
            t.grad.copy() if t.grad is not None else np.zeros(t.shape) for t in inputs
        ]
    worst = 0.0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(*inputs).data)
            flat[i] = orig - eps
            down = float(f(*inputs).data)
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            a = an.reshape(-1)[i]
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst
