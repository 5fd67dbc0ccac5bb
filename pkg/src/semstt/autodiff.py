"""Reverse-mode automatic differentiation on dense float64 tensors.

The graph is built eagerly: every operation returns a new `Tensor` node
that remembers its inputs, its op kind, and a backward closure over the
saved activations. Construction order is a topological order, and
`backward` replays the closures in reverse, accumulating gradients.
Everything is float64 so finite-difference checks stay tight.

Ops validate result finiteness; since leaf tensors are validated at
construction, op inputs are finite by induction and NaN/Inf is caught at
the op that produced it.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager

import numpy as np

from .errors import DataFormatError, NumericsError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if arr.size and not np.isfinite(np.sum(arr)):
        raise NumericsError(f"{op}: non-finite values in result")


class Tensor:
    """A node in the computation graph: float64 data plus backward context."""

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "needs_grad",
                 "_backward_fn", "_backward_used")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        self.data = arr
        self.grad = None
        self.op = "leaf"
        self.parents = ()
        self.requires_grad = requires_grad
        self.needs_grad = requires_grad
        self._backward_fn = None
        self._backward_used = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


def parameter(data, rng: np.random.Generator | None = None, fan_in: int | None = None) -> Tensor:
    """Create a trainable leaf. With `rng` and `fan_in`, init uniform in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)] over the given shape."""
    if rng is not None:
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=data)
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _node(data: np.ndarray, op: str, parents, backward_fn) -> Tensor:
    _check_finite(data, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.op = op
    t.requires_grad = False
    t._backward_used = False
    if _grad_enabled and any(p.needs_grad for p in parents):
        t.parents = tuple(parents)
        t.needs_grad = True
        t._backward_fn = backward_fn
    else:
        t.parents = ()
        t.needs_grad = False
        t._backward_fn = None
    return t


# ---------------------------------------------------------------------------
# op kinds
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), backward)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match last dim of {x.shape}")
    out = x.data + b.data

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        return g, g.sum(axis=axes) if axes else g

    return _node(out, "bias_add", (x, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ: {a.shape} vs {b.shape}")
    return _node(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    return _node(x.data * factor, "scale", (x,), lambda g: (g * factor,))


def mul_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a 0-d tensor (broadcast scalar with gradient)."""
    if s.data.shape != ():
        raise ShapeError(f"mul_scalar: scalar operand has shape {s.shape}")
    out = x.data * s.data

    def backward(g):
        return g * s.data, np.asarray(np.sum(g * x.data))

    return _node(out, "mul_scalar", (x, s), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div: shapes differ: {a.shape} vs {b.shape}")
    out = a.data / b.data

    def backward(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return _node(out, "div", (a, b), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g):
        return (g / (2.0 * out),)

    return _node(out, "sqrt", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _node(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _node(out, "relu", (x,), lambda g: (g * (x.data > 0.0),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, "softmax", (x,), backward)


def masked_softmax(x: Tensor, mask: Tensor) -> Tensor:
    """Softmax over the last axis restricted to mask==1 entries.

    Masked entries are exactly 0 in the output; each row must have at
    least one unmasked entry. The mask is not differentiated.
    """
    if x.shape != mask.shape:
        raise ShapeError(f"masked_softmax: mask {mask.shape} does not match {x.shape}")
    m = mask.data
    if np.any(m.sum(axis=-1) < 1):
        raise ShapeError("masked_softmax: a row has no unmasked entries")
    neg = np.where(m > 0, x.data, -np.inf)
    shifted = x.data - neg.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * m
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return out * (g - dot), None

    return _node(out, "masked_softmax", (x, mask), backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        soft = np.exp(out)
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _node(out, "log_softmax", (x,), backward)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Same-padded 1-D cross-correlation: (B,T,Cin) * (K,Cin,Cout) -> (B,T,Cout).

    K must be odd; the kernel is centered on each output step.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d: expected (B,T,Cin) and (K,Cin,Cout), got {x.shape} and {w.shape}")
    k, cin, cout = w.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel length {k} must be odd")
    if x.shape[2] != cin:
        raise ShapeError(f"conv1d: input channels {x.shape[2]} != kernel channels {cin}")
    b, t, _ = x.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros((b, t, cout))
    for off in range(k):
        out += xp[:, off:off + t, :] @ w.data[off]

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for off in range(k):
            dxp[:, off:off + t, :] += g @ w.data[off].T
            dw[off] = np.einsum("bti,bto->io", xp[:, off:off + t, :], g)
        return dxp[:, pad:pad + t, :], dw

    return _node(out, "conv1d", (x, w), backward)


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Same-padded stride-1 2-D cross-correlation:
    (B,H,W,Cin) * (kh,kw,Cin,Cout) -> (B,H,W,Cout). Odd kernels only."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected (B,H,W,Cin) and (kh,kw,Cin,Cout), got {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} must have odd sides")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[3]} != kernel channels {cin}")
    b, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((b, h, wd, cout))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + wd, :] @ w.data[i, j]

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + h, j:j + wd, :] += g @ w.data[i, j].T
                dw[i, j] = np.einsum("bhwi,bhwo->io", xp[:, i:i + h, j:j + wd, :], g)
        return dxp[:, ph:ph + h, pw:pw + wd, :], dw

    return _node(out, "conv2d", (x, w), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 on (B,H,W,C), ceil mode.

    Odd trailing rows/cols are padded with -inf so padding never wins;
    every window keeps at least one real element.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2x2: expected (B,H,W,C), got {x.shape}")
    b, h, w, c = x.shape
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    xp = np.full((b, 2 * h2, 2 * w2, c), -np.inf)
    xp[:, :h, :w, :] = x.data
    windows = xp.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dxp = dwin.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)
        return (dxp[:, :h, :w, :],)

    return _node(out, "maxpool2x2", (x,), backward)


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup: table (V,E), integer ids (...) -> (..., E)."""
    if table.data.ndim != 2:
        raise ShapeError(f"embed: table must be 2-D, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed: id out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dt,)

    return _node(out, "embed", (table,), backward)


def concat(*xs: Tensor, axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat: no inputs")
    out = np.concatenate([x.data for x in xs], axis=axis)
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(out, "concat", xs, backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    orig = x.data.shape
    return _node(out, "reshape", (x,), lambda g: (g.reshape(orig),))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = x.data[sl]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        return (dx,)

    return _node(out, "slice", (x,), backward)


def stride_time(x: Tensor, step: int) -> Tensor:
    """Keep every `step`-th element along axis 1 starting at 0."""
    if step < 1:
        raise ShapeError(f"stride_time: step {step} < 1")
    out = np.ascontiguousarray(x.data[:, ::step])

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, ::step] = g
        return (dx,)

    return _node(out, "stride_time", (x,), backward)


def reverse_time(x: Tensor, lengths) -> Tensor:
    """Reverse each batch item's first lengths[i] steps along axis 1."""
    lengths = np.asarray(lengths, dtype=np.int64)
    b, t = x.shape[0], x.shape[1]
    if lengths.shape != (b,) or lengths.min() < 0 or lengths.max() > t:
        raise ShapeError(f"reverse_time: bad lengths for {x.shape}")
    idx = np.tile(np.arange(t), (b, 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n - 1, -1, -1)
    rows = np.arange(b)[:, None]
    out = x.data[rows, idx]

    def backward(g):
        return (g[rows, idx],)  # the permutation is an involution

    return _node(out, "reverse_time", (x,), backward)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor: (N,D), idx (M,) -> (M,D)."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D input, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    out = x.data[idx]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _node(out, "gather_rows", (x,), backward)


def weighted_sum_time(attn: Tensor, values: Tensor) -> Tensor:
    """Context vectors: attn (B,T) x values (B,T,H) -> (B,H)."""
    if attn.data.ndim != 2 or values.data.ndim != 3 or attn.shape != values.shape[:2]:
        raise ShapeError(f"weighted_sum_time: {attn.shape} incompatible with {values.shape}")
    out = np.einsum("bt,bth->bh", attn.data, values.data)

    def backward(g):
        da = np.einsum("bh,bth->bt", g, values.data)
        dv = attn.data[:, :, None] * g[:, None, :]
        return da, dv

    return _node(out, "weighted_sum_time", (attn, values), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    return _node(out, "sum", (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def take_last(x: Tensor, ids) -> Tensor:
    """Pick one entry along the last axis per leading index: (...,V), ids (...) -> (...)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise ShapeError(f"take: ids {ids.shape} do not match leading dims of {x.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[-1]):
        raise ShapeError(f"take: id out of range for last dim {x.shape[-1]}")
    out = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, ids[..., None], g[..., None], axis=-1)
        return (dx,)

    return _node(out, "take", (x,), backward)


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor):
    """One LSTM cell step, composed from primitive ops.

    Gate layout along the last axis of `w`/`b` is [input, forget, cell,
    output]. x (B,D), h/c (B,H), w (D+H, 4H), b (4H,) -> (h', c').
    """
    hidden = h.shape[1]
    if w.shape != (x.shape[1] + hidden, 4 * hidden):
        raise ShapeError(f"lstm_step: weight {w.shape} does not match input {x.shape} + hidden {h.shape}")
    z = bias_add(matmul(concat(x, h, axis=1), w), b)
    i = sigmoid(slice_axis(z, 1, 0, hidden))
    f = sigmoid(slice_axis(z, 1, hidden, 2 * hidden))
    g = tanh(slice_axis(z, 1, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_axis(z, 1, 3 * hidden, 4 * hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def add_time(x: Tensor, y: Tensor) -> Tensor:
    """Broadcast-add a per-batch vector across time: (B,T,A) + (B,A)."""
    if x.data.ndim != 3 or y.data.ndim != 2 or (x.shape[0], x.shape[2]) != y.shape:
        raise ShapeError(f"add_time: {y.shape} does not broadcast over {x.shape}")
    out = x.data + y.data[:, None, :]

    def backward(g):
        return g, g.sum(axis=1)

    return _node(out, "add_time", (x, y), backward)


FORWARD_KINDS = {
    "matmul": matmul,
    "bias_add": bias_add,
    "add": add,
    "mul": mul,
    "scale": scale,
    "mul_scalar": mul_scalar,
    "div": div,
    "sqrt": sqrt,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "masked_softmax": masked_softmax,
    "log_softmax": log_softmax,
    "conv1d": conv1d,
    "conv2d": conv2d,
    "maxpool2x2": maxpool2x2,
    "embed": embed,
    "concat": concat,
    "reshape": reshape,
    "slice": slice_axis,
    "stride_time": stride_time,
    "reverse_time": reverse_time,
    "gather_rows": gather_rows,
    "weighted_sum_time": weighted_sum_time,
    "sum": sum_all,
    "take": take_last,
    "add_time": add_time,
}


def forward(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch an op by kind name. `inputs` is a list of Tensors, `attrs`
    the op's non-tensor arguments (axis, shape, ids, ...)."""
    if kind not in FORWARD_KINDS:
        raise ShapeError(f"forward: unknown op kind {kind!r}")
    return FORWARD_KINDS[kind](*inputs, **(attrs or {}))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, params: dict[str, Tensor] | None = None):
    """Reverse sweep from a scalar loss.

    Populates `.grad` on every reachable requires_grad tensor. When a
    `params` mapping is given, returns {name: gradient}, with zeros for
    parameters the loss does not reach. A loss node may only be swept once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward_used:
        raise RuntimeError("backward: already called for this loss; run a new forward pass")
    loss._backward_used = True

    if params:
        for p in params.values():
            p.grad = None

    # iterative post-order DFS over grad-requiring parents
    order = []
    visited = set()
    stack = [(loss, 0)]
    while stack:
        node, pi = stack.pop()
        if pi == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if pi < len(node.parents):
            stack.append((node, pi + 1))
            child = node.parents[pi]
            if child.needs_grad and id(child) not in visited:
                stack.append((child, 0))
        else:
            order.append(node)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        for p, pg in zip(node.parents, node._backward_fn(g)):
            if pg is None or not p.needs_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg

    if params is not None:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    return None


# ---------------------------------------------------------------------------
# Adadelta
# ---------------------------------------------------------------------------

class AdadeltaState:
    """Running averages E[g^2] and E[dx^2] for one parameter."""

    __slots__ = ("accum_grad_sq", "accum_delta_sq", "rho", "eps")

    def __init__(self, shape, rho: float = 0.95, eps: float = 1e-6):
        self.accum_grad_sq = np.zeros(shape)
        self.accum_delta_sq = np.zeros(shape)
        self.rho = rho
        self.eps = eps


def adadelta_step(param: np.ndarray, grad: np.ndarray, state: AdadeltaState) -> np.ndarray:
    """One Adadelta update. Mutates `state`, returns the updated parameter.

    E[g2] <- rho E[g2] + (1-rho) g^2
    dx    <- -sqrt(E[dx2]+eps)/sqrt(E[g2]+eps) * g
    E[dx2]<- rho E[dx2] + (1-rho) dx^2
    """
    if param.shape != grad.shape or param.shape != state.accum_grad_sq.shape:
        raise ShapeError(f"adadelta_step: shapes differ: param {param.shape}, grad {grad.shape}")
    if grad.size and not np.isfinite(np.sum(grad)):
        raise NumericsError("adadelta_step: non-finite gradient, step rejected")
    rho, eps = state.rho, state.eps
    state.accum_grad_sq *= rho
    state.accum_grad_sq += (1.0 - rho) * grad * grad
    delta = -np.sqrt(state.accum_delta_sq + eps) / np.sqrt(state.accum_grad_sq + eps) * grad
    state.accum_delta_sq *= rho
    state.accum_delta_sq += (1.0 - rho) * delta * delta
    return param + delta


class Adadelta:
    """Adadelta over a named parameter dict. Steps mutate param data in place."""

    def __init__(self, params: dict[str, Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.params = params
        self.state = {name: AdadeltaState(p.data.shape, rho, eps) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        # validate everything up front so a rejected step leaves no partial update
        for name in self.params:
            g = grads[name]
            if g.size and not np.isfinite(np.sum(g)):
                raise NumericsError(f"adadelta: non-finite gradient for {name!r}, step rejected")
        for name, p in self.params.items():
            p.data = adadelta_step(p.data, grads[name], self.state[name])


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SEMSTTCK"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    """Write named parameters plus a JSON metadata block.

    Layout: magic, version u32, meta length u32 + UTF-8 JSON, param count
    u32, then per parameter: name length u16 + name, rank u8, dims u32
    each, row-major little-endian float64 payload.
    """
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    """Read a checkpoint back; parameters round-trip bit-exactly."""
    with open(path, "rb") as f:
        blob = f.read()

    def need(n, what):
        nonlocal off
        if off + n > len(blob):
            raise DataFormatError(f"checkpoint truncated while reading {what}")
        piece = blob[off:off + n]
        off += n
        return piece

    off = 0
    if need(8, "magic") != _CKPT_MAGIC:
        raise DataFormatError("checkpoint: bad magic bytes")
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != _CKPT_VERSION:
        raise DataFormatError(f"checkpoint: unsupported version {version}")
    (meta_len,) = struct.unpack("<I", need(4, "meta length"))
    meta = json.loads(need(meta_len, "metadata").decode("utf-8"))
    (count,) = struct.unpack("<I", need(4, "parameter count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2, "name length"))
        name = need(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, "rank"))
        dims = struct.unpack(f"<{rank}I", need(4 * rank, "dims"))
        n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if rank else 8
        arr = np.frombuffer(need(n_bytes, f"payload of {name!r}"), dtype="<f8").reshape(dims)
        params[name] = Tensor(arr.copy(), requires_grad=True)
    if off != len(blob):
        raise DataFormatError("checkpoint: trailing bytes after last parameter")
    return params, meta
