"""Minimal reverse-mode differentiable tensor core.

Values are stored as float64 throughout; the checkpoint container stores
little-endian float32. Graphs are single-owner: build a forward expression,
call backward() once, read .grad on the leaves.
"""

from __future__ import annotations

import contextlib
import struct

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._bw = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions carry the real implementations
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, bw) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    else:
        out.requires_grad = False
        out._parents = ()
        out._bw = None
    return out


def backward(t: Tensor) -> None:
    """Accumulate gradients of a scalar tensor into every reachable leaf."""
    if t.data.size != 1:
        raise ValueError("backward() requires a scalar tensor")
    # iterative reverse topological order; each node visited exactly once
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(t): np.ones_like(t.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._bw is None:
            # leaf: expose the accumulated gradient
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._bw(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise ops with numpy broadcasting


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    data = a.data / b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def sqrt(a) -> Tensor:
    a = ensure_tensor(a)
    root = np.sqrt(a.data)
    return _make(root, (a,), lambda g: (g * 0.5 / root,))


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def relu(a) -> Tensor:
    a = ensure_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = ensure_tensor(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(a.data) / (1.0 + np.exp(a.data)))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    a = ensure_tensor(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(a.data) / (1.0 + np.exp(a.data)))
    return _make(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def maximum_scalar(a, c: float) -> Tensor:
    """Elementwise max(a, c) with the subgradient assigned to a where a > c."""
    a = ensure_tensor(a)
    mask = a.data > c
    return _make(np.maximum(a.data, c), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = ensure_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [ensure_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(ts), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = ensure_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _make(a.data[idx].copy(), (a,), bw)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(np.asarray(data), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# matmul / softmax / conv / pooling


def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def softmax(a, axis: int = -1) -> Tensor:
    a = ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _make(s, (a,), bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * kh * kw, ho * wo)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution (cross-correlation) on a single CHW sample."""
    x, w = ensure_tensor(x), ensure_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects CHW input and OIHW weight, got {x.shape}, {w.shape}")
    ci, h, ww_ = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input {ci}, weight expects {ci_w}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww_ + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("convolution output would be empty")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(co, ci * kh * kw)
    out = wmat @ cols
    parents: list[Tensor] = [x, w]
    bt = ensure_tensor(b) if b is not None else None
    if bt is not None:
        out = out + bt.data[:, None]
        parents.append(bt)
    data = out.reshape(co, ho, wo)

    def bw(g):
        g2 = g.reshape(co, ho * wo)
        gw = (g2 @ cols.T).reshape(co, ci, kh, kw)
        gcols = (wmat.T @ g2).reshape(ci, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
        gx = gxp[:, padding : padding + h, padding : padding + ww_] if padding else gxp
        if bt is not None:
            return (gx, gw, g2.sum(axis=1))
        return (gx, gw)

    return _make(data, tuple(parents), bw)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of a CHW tensor."""
    x = ensure_tensor(x)
    c, h, w = x.shape
    data = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bw(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# composite layers (autodiff flows through the primitives above)


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def mlp(x, w1, b1, w2, b2) -> Tensor:
    """Two-layer perceptron with SiLU in between."""
    return linear(silu(linear(x, w1, b1)), w2, b2)


def group_norm(x, num_groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Group normalisation over a CHW tensor; stats use population variance."""
    x = ensure_tensor(x)
    c, h, w = x.shape
    if c % num_groups:
        raise ValueError(f"channels {c} not divisible by groups {num_groups}")
    xg = reshape(x, (num_groups, (c // num_groups) * h * w))
    mu = mean(xg, axis=1, keepdims=True)
    xc = sub(xg, mu)
    var = mean(mul(xc, xc), axis=1, keepdims=True)
    norm = div(xc, sqrt(add(var, eps)))
    norm = reshape(norm, (c, h, w))
    gamma = reshape(ensure_tensor(gamma), (c, 1, 1))
    beta = reshape(ensure_tensor(beta), (c, 1, 1))
    return add(mul(norm, gamma), beta)


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention: softmax(QK^T / sqrt(d_k)) V."""
    q, k, v = ensure_tensor(q), ensure_tensor(k), ensure_tensor(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ValueError("attention expects 2-d Q, K, V")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query/key dims disagree: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value row counts disagree: {k.shape} vs {v.shape}")
    dk = q.shape[1]
    if dk < 1:
        raise ValueError("d_k must be >= 1")
    scores = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(dk))
    return matmul(softmax(scores, axis=-1), v)


def adain(x, y, eps: float = 1e-5) -> Tensor:
    """Renormalise x so each feature channel carries y's mean and std.

    Statistics are population statistics over the token axis (axis 0). The
    denominator is max(std(x), eps): for any non-degenerate x the output
    statistics match y to float precision, and constant channels map to the
    constant mean of y instead of dividing by zero.
    """
    x, y = ensure_tensor(x), ensure_tensor(y)
    if x.data.ndim != 2 or y.data.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"adain expects matching feature dims, got {x.shape}, {y.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu_x = mean(x, axis=0, keepdims=True)
    xc = sub(x, mu_x)
    sig_x = sqrt(mean(mul(xc, xc), axis=0, keepdims=True))
    mu_y = mean(y, axis=0, keepdims=True)
    yc = sub(y, mu_y)
    sig_y = sqrt(mean(mul(yc, yc), axis=0, keepdims=True))
    return add(mul(div(xc, maximum_scalar(sig_x, eps)), sig_y), mu_y)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn, inputs, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn must return a scalar Tensor. Error per entry is
    |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    max_err = 0.0
    for ti, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        an = analytic[ti].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(*inputs).data.item()
            flat[i] = orig - step
            fm = fn(*inputs).data.item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"non-finite value while perturbing input {ti} entry {i}")
            num = (fp - fm) / (2.0 * step)
            err = abs(an[i] - num) / max(1.0, abs(num))
            if err > max_err:
                max_err = err
    return max_err


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, count, then per tensor
# (u32 name length, name bytes, u32 rank, u32 dims..., float32 little-endian)

_MAGIC = b"PFTC"
_VERSION = 1


def float32_snap(arr: np.ndarray) -> np.ndarray:
    """Round values onto the float32 grid (stored as float64)."""
    return arr.astype(np.float32).astype(np.float64)


def save_checkpoint(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(tensors)))
        for name in sorted(tensors):
            t = tensors[name]
            arr = t.data if isinstance(t, Tensor) else np.asarray(t)
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {name: float64 ndarray of the stored float32 values}."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").astype(np.float64)
            out[name] = data.reshape(dims)
    return out
