"""Dense-tensor engine with reverse-mode differentiation.

Just enough machinery for the ranker network: broadcast arithmetic,
batched matmul, masked softmax, layer norm, multi-head attention,
inverted dropout, and masked cross-entropy. The op graph is rebuilt on
every forward pass (define-by-run); `backward` replays the recorded tape
in exact reverse creation order.

Default precision is 64-bit so gradient checks are meaningful; switch to
32-bit for training throughput with `set_default_dtype("float32")`.
"""

import math

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float64


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}, expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype():
    return _default_dtype


class Tensor:
    """A dense array plus an optional gradient buffer and tape linkage.

    Tensors produced by ops hold references to their parents and a local
    backward closure; `backward()` on a scalar loss fills `.grad` on every
    requires-grad tensor that contributed to it.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_grad_fn", "_tape_id")

    _counter = 0

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray) and \
                data.dtype in (np.float32, np.float64):
            self.data = data  # keep the caller's precision
        else:
            self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._grad_fn = None
        Tensor._counter += 1
        self._tape_id = Tensor._counter

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Wrap operands; bare Python scalars adopt the partner's precision so
    mixing a float32 graph with literal constants never upcasts."""
    ta = isinstance(a, Tensor)
    tb = isinstance(b, Tensor)
    if ta and not tb:
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if tb and not ta:
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _make(data, parents, grad_fn) -> Tensor:
    """Wrap an op result, recording tape linkage only when grads can flow."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _accumulate(parent: Tensor, g: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        parent.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss.

    Visits the tape in exact reverse creation order; every reachable
    requires-grad tensor ends up with a populated `.grad`.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # deterministic topological order via iterative DFS
    order = []
    seen = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product; batch dims must match exactly or `b` may be 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires tensors with ndim >= 2")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
            _accumulate(b, gb)

    return _make(out_data, (a, b), grad_fn)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def grad_fn(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(out_data, (a,), grad_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def grad_fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def grad_fn(g):
        _accumulate(a, g * (a.data > 0))

    return _make(out_data, (a,), grad_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def grad_fn(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), grad_fn)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    # stable: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def grad_fn(g):
        _accumulate(a, g / (1.0 + np.exp(-a.data)))

    return _make(out_data, (a,), grad_fn)


def mean(a, axis, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.shape[axis]

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(out_data, (a,), grad_fn)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def grad_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))

    return _make(out_data, (a,), grad_fn)


def pick(a, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    a = _as_tensor(a)
    if a.ndim != 1:
        raise ValueError("pick expects a 1-D tensor")
    out_data = np.asarray(a.data[index])

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        _accumulate(a, buf)

    return _make(out_data, (a,), grad_fn)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(out_data, tuple(tensors), grad_fn)


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    a = _as_tensor(a)
    if rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout with rate > 0 requires an explicit rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    out_data = a.data * keep

    def grad_fn(g):
        _accumulate(a, g * keep)

    return _make(out_data, (a,), grad_fn)


def masked_softmax(a, mask=None, axis=-1) -> Tensor:
    """Softmax over `axis`, restricted to positions where `mask` is True.

    Masked positions get exactly zero weight; a row with no valid
    position yields an all-zero row rather than NaN.
    """
    a = _as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        shifted = np.where(mask, x, -np.inf)
    else:
        shifted = x
    hi = shifted.max(axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)  # all-masked rows
    z = np.exp(shifted - hi)
    denom = z.sum(axis=axis, keepdims=True)
    out_data = z / np.where(denom == 0.0, 1.0, denom)

    def grad_fn(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), grad_fn)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must have shape (d,)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def grad_fn(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, inv * (gx - m1 - xhat * m2))

    return _make(out_data, (a, gain, bias), grad_fn)


def attention(q, k, v, key_mask=None, heads: int = 1, return_weights: bool = False):
    """Multi-head scaled dot-product attention (no learned projections).

    q: [b, n_q, d], k/v: [b, n_k, d], key_mask: optional bool [b, n_k]
    where True marks usable keys. Masked keys get exactly zero weight; a
    query whose keys are all masked produces a zero output row.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ValueError("attention expects [batch, seq, dim] tensors")
    b, n_q, d = q.shape
    n_k = k.shape[1]
    if k.shape != (b, n_k, d) or v.shape != (b, n_k, d):
        raise ValueError(f"attention shape mismatch: q={q.shape} k={k.shape} v={v.shape}")
    if d % heads != 0:
        raise ValueError(f"dim {d} not divisible by heads {heads}")
    e = d // heads

    def split(t):
        return transpose(reshape(t, (b, -1, heads, e)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)  # [b, h, n, e]
    scores = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(e))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (b, n_k):
            raise ValueError(f"key_mask shape {key_mask.shape} != {(b, n_k)}")
        mask = key_mask[:, None, None, :]
    else:
        mask = None
    weights = masked_softmax(scores, mask, axis=-1)  # [b, h, n_q, n_k]
    out = reshape(transpose(matmul(weights, vh), (0, 2, 1, 3)), (b, n_q, d))
    if return_weights:
        return out, weights
    return out


def softmax_cross_entropy(logits, target: int, valid_mask=None) -> Tensor:
    """-log softmax(logits restricted to valid positions)[target].

    Masked positions contribute zero probability; a masked target is a
    hard error.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ValueError("softmax_cross_entropy expects 1-D logits")
    k = logits.shape[0]
    if valid_mask is None:
        valid = np.ones(k, dtype=bool)
    else:
        valid = np.asarray(valid_mask, dtype=bool)
        if valid.shape != (k,):
            raise ValueError("valid_mask shape mismatch")
    if not (0 <= target < k) or not valid[target]:
        raise ValueError(f"target {target} is not a valid unmasked index")
    x = np.where(valid, logits.data, -np.inf)
    hi = x.max()
    z = np.exp(x - hi)
    denom = z.sum()
    p = z / denom
    out_data = np.asarray(-(x[target] - hi - np.log(denom)))

    def grad_fn(g):
        buf = p.copy()
        buf[target] -= 1.0
        _accumulate(logits, g * buf)

    return _make(out_data, (logits,), grad_fn)


def log_softmax_masked(logits_data: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Plain-array masked log-softmax (no tape). Invalid slots get -inf."""
    x = np.where(valid, logits_data, -np.inf)
    hi = x[valid].max()
    z = np.exp(x - hi)
    return x - hi - np.log(z.sum())
