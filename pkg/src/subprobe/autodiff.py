"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor wraps an ndarray and remembers the op that produced it; calling
`backward` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients into every reachable tensor
with `requires_grad`. Only the ops the masked-transformer pipeline needs
are provided; broadcasting is supported for add/mul-style ops via a
sum-reduce of the upstream gradient.

All arithmetic is float64. Any op producing a non-finite value raises
NonFiniteError naming the op (disable with `set_nan_checks(False)` only
for benchmarking).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "NonFiniteError",
    "no_grad",
    "set_nan_checks",
    "backward",
    "topological_order",
    "add",
    "mul",
    "matmul",
    "linear",
    "split_heads",
    "merge_heads",
    "group_masked",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "clamp",
    "layer_norm",
    "softmax",
    "attention",
    "dropout",
    "embedding",
    "cross_entropy",
    "tsum",
    "tmean",
    "sum_axis",
    "reshape",
    "transpose",
    "index_slice",
    "gather_nodes",
    "tile_expand",
    "prepend_root",
    "append_ones",
]

_grad_enabled = True
_nan_checks = True


class NonFiniteError(FloatingPointError):
    """A forward value or gradient stopped being finite."""

    def __init__(self, op: str, kind: str = "value"):
        super().__init__(f"non-finite {kind} produced by op '{op}'")
        self.op = op


def set_nan_checks(enabled: bool) -> None:
    global _nan_checks
    _nan_checks = bool(enabled)


class no_grad:
    """Context manager: ops inside build no graph (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar; constants (floats / ndarrays) are allowed on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"


class Parameter(Tensor):
    """Trainable leaf tensor with a unique name within its model."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check(data: np.ndarray, op: str) -> None:
    # a sum of finite float64s in this workload cannot overflow, so one
    # reduction catches any NaN/Inf without allocating a bool array
    if _nan_checks and not np.isfinite(data.sum()):
        raise NonFiniteError(op)


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias a consumer's gradient
    else:
        t.grad += g


def _accum_new(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient array the caller just allocated (safe to own)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a gradient back to the pre-broadcast shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    return _make(data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(out):
        if a.requires_grad:
            _accum_new(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accum_new(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _make(data, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs a >=1-d left and >=2-d right operand, got {a.data.shape} @ {b.data.shape}"
        )
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}") from e

    def bw(out):
        g = out.grad
        if a.requires_grad:
            _accum_new(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # leading batch axes collapse into one 2-d GEMM
                k = a.data.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            _accum_new(b, gb)

    return _make(data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b over the last axis (w: (d, k), b: (k,))."""
    d, k = w.data.shape
    x2 = x.data.reshape(-1, d)
    data = (x2 @ w.data + b.data).reshape(x.data.shape[:-1] + (k,))

    def bw(out):
        g2 = out.grad.reshape(-1, k)
        if x.requires_grad:
            _accum_new(x, (g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            _accum_new(w, x2.T @ g2)
        if b.requires_grad:
            _accum_new(b, g2.sum(axis=0))

    return _make(data, (x, w, b), bw, "linear")


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, T, d) -> (B, h, T, d/h)."""
    B, T, d = x.data.shape
    dh = d // n_heads
    data = np.ascontiguousarray(x.data.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3))

    def bw(out):
        _accum_new(x, out.grad.transpose(0, 2, 1, 3).reshape(B, T, d))

    return _make(data, (x,), bw, "split_heads")


def merge_heads(x: Tensor) -> Tensor:
    """(B, h, T, dh) -> (B, T, h*dh)."""
    B, h, T, dh = x.data.shape
    data = np.ascontiguousarray(x.data.transpose(0, 2, 1, 3)).reshape(B, T, h * dh)

    def bw(out):
        _accum(x, out.grad.reshape(B, T, h, dh).transpose(0, 2, 1, 3))

    return _make(data, (x,), bw, "merge_heads")


def group_masked(w: Tensor, z: Tensor, offset: int, r_tiles: int, c_tiles: int,
                 n_r: int, n_c: int) -> Tensor:
    """w * dense-mask where the mask expands z[offset : offset+r*c] over
    (n_r, n_c) tiles; one fused op per masked matrix."""
    count = r_tiles * c_tiles
    grid = z.data[offset:offset + count].reshape(r_tiles, c_tiles)
    dense = np.broadcast_to(grid[:, None, :, None],
                            (r_tiles, n_r, c_tiles, n_c)).reshape(w.data.shape)
    data = w.data * dense

    def bw(out):
        g = out.grad
        if w.requires_grad:
            _accum_new(w, g * dense)
        if z.requires_grad:
            gz = (g * w.data).reshape(r_tiles, n_r, c_tiles, n_c).sum(axis=(1, 3))
            if z.grad is None:
                z.grad = np.zeros_like(z.data)
            z.grad[offset:offset + count] += gz.reshape(-1)

    return _make(data, (w, z), bw, "group_masked")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def bw(out):
        _accum_new(x, out.grad * (x.data > 0.0))

    return _make(data, (x,), bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # stable two-sided form
    data = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                    np.exp(x.data) / (1.0 + np.exp(x.data)))

    def bw(out):
        _accum_new(x, out.grad * data * (1.0 - data))

    return _make(data, (x,), bw, "sigmoid")


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.exp(x.data)

    def bw(out):
        _accum_new(x, out.grad * data)

    return _make(data, (x,), bw, "exp")


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def bw(out):
        _accum_new(x, out.grad / x.data)

    return _make(data, (x,), bw, "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; subgradient is 1 strictly inside (lo, hi), 0 at and
    beyond saturation."""
    x = _as_tensor(x)
    data = np.clip(x.data, lo, hi)

    def bw(out):
        inside = (x.data > lo) & (x.data < hi)
        _accum_new(x, out.grad * inside)

    return _make(data, (x,), bw, "clamp")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then optionally
    apply an elementwise affine (gain, bias)."""
    x = _as_tensor(x)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...d,...d->...", xhat, xhat)[..., None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    if gain is not None:
        data = xhat * gain.data
        if bias is not None:
            data += bias.data
    elif bias is not None:
        data = xhat + bias.data
    else:
        data = xhat.copy()

    parents = (x,) + tuple(p for p in (gain, bias) if p is not None)

    def bw(out):
        g = out.grad
        if bias is not None and bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if gain is not None and gain.requires_grad:
            _accum_new(gain, _unbroadcast(g * xhat, gain.data.shape))
        gx = g if gain is None else g * gain.data
        # d/dx of xhat: inv * (g - mean(g) - xhat * mean(g * xhat))
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = np.einsum("...d,...d->...", gx, xhat)[..., None] / d
        gx = gx - m1
        gx -= xhat * m2
        gx *= inv
        _accum_new(x, gx)

    return _make(data, parents, bw, "layer_norm")


def softmax(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. `additive_mask` is a constant (e.g. -1e30
    at padded keys) added to the logits before normalizing."""
    x = _as_tensor(x)
    z = x.data if additive_mask is None else x.data + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(out):
        g = out.grad
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum_new(x, (g - dot) * data)

    return _make(data, (x,), bw, "softmax")


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float,
              additive_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over (B, h, T, dh) projections; one
    fused op: softmax(q k^T * scale + mask) v."""
    a = q.data @ np.swapaxes(k.data, -1, -2)
    a *= scale
    if additive_mask is not None:
        a += additive_mask
    a -= a.max(axis=-1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=-1, keepdims=True)
    data = a @ v.data

    def bw(out):
        g = out.grad
        if v.requires_grad:
            _accum_new(v, np.swapaxes(a, -1, -2) @ g)
        if q.requires_grad or k.requires_grad:
            ga = g @ np.swapaxes(v.data, -1, -2)
            gs = (ga - (ga * a).sum(axis=-1, keepdims=True)) * a
            gs *= scale
            if q.requires_grad:
                _accum_new(q, gs @ k.data)
            if k.requires_grad:
                _accum_new(k, np.swapaxes(gs, -1, -2) @ q.data)

    return _make(data, (q, k, v), bw, "attention")


def dropout(x: Tensor, keep_prob: float, rng) -> Tensor:
    """Inverted dropout. Callers invoke this only in training mode; keep_prob
    is the probability of keeping a unit."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    x = _as_tensor(x)
    if keep_prob == 1.0:
        return x
    keep = (rng.uniform(x.data.shape) < keep_prob) / keep_prob
    data = x.data * keep

    def bw(out):
        _accum_new(x, out.grad * keep)

    return _make(data, (x,), bw, "dropout")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    data = table.data[ids]

    def bw(out):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1),
                      out.grad.reshape(-1, table.data.shape[1]))

    return _make(data, (table,), bw, "embedding")


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  valid: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over the last axis of `logits`.

    `targets` holds class indices with the same shape as logits minus the
    class axis; `valid` (same shape as targets) selects which positions
    count. Fused stable log-softmax.
    """
    x = logits.data
    n_class = x.shape[-1]
    flat = x.reshape(-1, n_class)
    t = np.asarray(targets).reshape(-1)
    if valid is None:
        v = np.ones(t.shape, dtype=bool)
    else:
        v = np.asarray(valid).reshape(-1).astype(bool)
    n = int(v.sum())
    if n == 0:
        raise ValueError("cross_entropy: no valid target positions")
    if t[v].min() < 0 or t[v].max() >= n_class:
        raise IndexError(f"cross_entropy targets out of range [0, {n_class})")

    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[:, 0]
    idx = np.arange(flat.shape[0])
    nll = lse - flat[idx, t.clip(0)]
    data = np.array(nll[v].mean())

    def bw(out):
        if not logits.requires_grad:
            return
        p = np.exp(flat - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[idx, t.clip(0)] -= 1.0
        p[~v] = 0.0
        g = (float(out.grad) / n) * p
        _accum_new(logits, g.reshape(x.shape))

    return _make(data, (logits,), bw, "cross_entropy")


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.array(x.data.sum())

    def bw(out):
        _accum_new(x, np.broadcast_to(out.grad, x.data.shape).copy())

    return _make(data, (x,), bw, "sum")


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.array(x.data.mean())

    def bw(out):
        _accum_new(x, np.broadcast_to(out.grad / x.data.size, x.data.shape).copy())

    return _make(data, (x,), bw, "mean")


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum_new(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), bw, "sum_axis")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def bw(out):
        _accum(x, out.grad.reshape(x.data.shape))

    return _make(data, (x,), bw, "reshape")


def transpose(x: Tensor, axes: tuple) -> Tensor:
    x = _as_tensor(x)
    data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def bw(out):
        _accum(x, np.transpose(out.grad, inv))

    return _make(data, (x,), bw, "transpose")


def index_slice(x: Tensor, sl: slice) -> Tensor:
    """Slice along the first axis."""
    x = _as_tensor(x)
    data = x.data[sl]

    def bw(out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[sl] += out.grad

    return _make(data, (x,), bw, "index_slice")


def gather_nodes(x: Tensor, idx: np.ndarray) -> Tensor:
    """x: (B, N, D), idx: (B, M) int -> (B, M, D) rows gathered along axis 1."""
    idx = np.asarray(idx)
    B = x.data.shape[0]
    bi = np.arange(B)[:, None]
    data = x.data[bi, idx]

    def bw(out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (bi, idx), out.grad)

    return _make(data, (x,), bw, "gather_nodes")


def tile_expand(z: Tensor, n_r: int, n_c: int) -> Tensor:
    """Expand a (R, C) grid of group values to (R*n_r, C*n_c) by repeating
    each entry over its n_r x n_c tile."""
    z = _as_tensor(z)
    R, C = z.data.shape
    data = np.broadcast_to(z.data[:, None, :, None],
                           (R, n_r, C, n_c)).reshape(R * n_r, C * n_c)

    def bw(out):
        g = out.grad.reshape(R, n_r, C, n_c).sum(axis=(1, 3))
        _accum_new(z, g)

    return _make(data.copy(), (z,), bw, "tile_expand")


def prepend_root(hidden: Tensor, root: Tensor) -> Tensor:
    """hidden: (B, N, D), root: (D,) -> (B, N+1, D) with root at position 0."""
    B, N, D = hidden.data.shape
    data = np.empty((B, N + 1, D), dtype=np.float64)
    data[:, 0, :] = root.data
    data[:, 1:, :] = hidden.data

    def bw(out):
        _accum_new(root, out.grad[:, 0, :].sum(axis=0))
        _accum(hidden, out.grad[:, 1:, :])

    return _make(data, (hidden, root), bw, "prepend_root")


def append_ones(x: Tensor) -> Tensor:
    """Append a constant 1 feature along the last axis (bias augmentation)."""
    x = _as_tensor(x)
    shape = x.data.shape[:-1] + (x.data.shape[-1] + 1,)
    data = np.empty(shape, dtype=np.float64)
    data[..., :-1] = x.data
    data[..., -1] = 1.0

    def bw(out):
        _accum(x, out.grad[..., :-1])

    return _make(data, (x,), bw, "append_ones")


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list:
    """Record of the computation reaching `root`, parents before children."""
    order: list = []
    seen = set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of every tensor reachable from a scalar loss.

    Each recorded node is visited exactly once, in reverse topological
    order. Tensors not on the graph keep whatever gradient they had
    (training loops zero trainable parameters first).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
            if _nan_checks:
                for p in node._parents:
                    if p.requires_grad and p.grad is not None and not np.isfinite(p.grad).all():
                        raise NonFiniteError(node.op, kind="gradient")
            # free graph edges as we go; keeps memory flat across steps
            node._parents = ()
            node._backward = None
