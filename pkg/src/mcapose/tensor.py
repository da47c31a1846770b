"""Dense tensors with reverse-mode automatic differentiation.

Every operation in this module takes and returns :class:`Tensor` objects,
records a backward closure on its output, and raises
:class:`NonFiniteError` as soon as it produces a NaN or Inf. Feature maps use
the ``N x C x H x W`` layout throughout.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ArrayLike = Union[np.ndarray, float, int, Sequence]

_DEFAULT_DTYPE = np.float64
_SCOPE: list[str] = []


class NonFiniteError(FloatingPointError):
    """Raised by the operation that first produces a NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar root, reused graph, ...)."""


def set_default_dtype(dtype) -> None:
    """Switch newly created tensors between float64 (default) and float32."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def scope(name: str) -> Iterator[None]:
    """Tag operations created inside the block; the tag shows up in errors."""
    _SCOPE.append(name)
    try:
        yield
    finally:
        _SCOPE.pop()


def _where() -> str:
    return "/".join(_SCOPE) if _SCOPE else "<top>"


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    Attributes:
        data: the values.
        grad: accumulated gradient (same shape as ``data``) or None.
        requires_grad: whether gradients flow into this tensor.
        op: name of the operation that produced it ("leaf" for inputs).
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        *,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "leaf",
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = _op
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    # -- autodiff --------------------------------------------------------
    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op} in scope {_where()}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar ``loss`` into every requires_grad leaf.

    The graph is consumed: calling this twice on the same forward pass raises
    :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached from every trainable tensor")
    if loss._consumed:
        raise GraphError("graph already consumed; rerun the forward pass")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                _accumulate(node, g)
            continue
        if g is None:
            continue
        # the closure pushes into parents via `send`
        node._backward(g, grads)  # type: ignore[misc]
        node._backward = None
        node._consumed = True
    loss._consumed = True


def _send(grads: dict[int, np.ndarray], t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, grads):
        if a.requires_grad:
            _send(grads, a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _send(grads, b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors, recorded as a single node."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"add_n shape mismatch: {shape} vs {t.shape}")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data

    def bw(g, grads):
        for t in tensors:
            _send(grads, t, g)

    return _make(total, tuple(tensors), "add_n", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g, grads):
        _send(grads, x, g * mask)

    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), "relu", bw)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g, grads):
        _send(grads, x, g * out * (1.0 - out))

    return _make(out, (x,), "sigmoid", bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g, grads):
        _send(grads, x, np.broadcast_to(g, x.shape).copy())

    return _make(np.asarray(x.data.sum()), (x,), "sum", bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, grads):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _send(grads, t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", bw)


def channel(x: Tensor, index: int) -> Tensor:
    """Channel ``index`` of an N x C x H x W tensor, kept as N x 1 x H x W."""

    def bw(g, grads):
        full = np.zeros_like(x.data)
        full[:, index : index + 1] = g
        _send(grads, x, full)

    return _make(x.data[:, index : index + 1].copy(), (x,), "channel", bw)


def hadamard_broadcast(features: Tensor, amap: Tensor) -> Tensor:
    """Multiply every channel of ``features`` elementwise by a one-channel map."""
    f, m = as_tensor(features), as_tensor(amap)
    if m.ndim != 4 or m.shape[1] != 1:
        raise ValueError(f"attention map must be N x 1 x H x W, got {m.shape}")
    if f.ndim != 4 or f.shape[2:] != m.shape[2:] or f.shape[0] != m.shape[0]:
        raise ValueError(f"spatial size mismatch: features {f.shape} vs map {m.shape}")

    def bw(g, grads):
        if f.requires_grad:
            _send(grads, f, g * m.data)
        if m.requires_grad:
            _send(grads, m, (g * f.data).sum(axis=1, keepdims=True))

    return _make(f.data * m.data, (f, m), "hadamard", bw)


def spatial_softmax(s: Tensor) -> Tensor:
    """Softmax over all spatial positions of each N x 1 x H x W item."""
    if s.ndim != 4 or s.shape[1] != 1:
        raise ValueError(f"softmax input must be N x 1 x H x W, got {s.shape}")
    flat = s.data.reshape(s.shape[0], -1)
    e = np.exp(flat - flat.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = p.reshape(s.shape)

    def bw(g, grads):
        gf = g.reshape(p.shape)
        dot = (gf * p).sum(axis=1, keepdims=True)
        _send(grads, s, (p * (gf - dot)).reshape(s.shape))

    return _make(out, (s,), "softmax", bw)


# ---------------------------------------------------------------------------
# spatial layers
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation (the deep-learning "convolution").

    ``x`` is N x C x H x W, ``weight`` is O x C x kH x kW, ``bias`` is O.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {x.shape} and weight {weight.shape}")

    if kh == 1 and kw == 1 and pad == 0:
        xs = x.data[:, :, ::stride, ::stride]
        w2 = weight.data[:, :, 0, 0]
        out = np.einsum("oc,nchw->nohw", w2, xs, optimize=True)
        cols = None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        # N x Ho x Wo x (C kh kw) im2col matrix
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)
        out = (cols @ weight.data.reshape(o, -1).T).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, grads):
        if bias is not None and bias.requires_grad:
            _send(grads, bias, g.sum(axis=(0, 2, 3)))
        if cols is None:
            if weight.requires_grad:
                gw = np.einsum("nohw,nchw->oc", g, xs, optimize=True)
                _send(grads, weight, gw[:, :, None, None])
            if x.requires_grad:
                gx_s = np.einsum("oc,nohw->nchw", w2, g, optimize=True)
                if stride == 1:
                    _send(grads, x, gx_s)
                else:
                    gx = np.zeros_like(x.data)
                    gx[:, :, ::stride, ::stride] = gx_s
                    _send(grads, x, gx)
            return
        gt = g.transpose(0, 2, 3, 1)  # N Ho Wo O
        if weight.requires_grad:
            gw = gt.reshape(-1, o).T @ cols.reshape(-1, c * kh * kw)
            _send(grads, weight, gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = (gt @ weight.data.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            _send(grads, x, gxp[:, :, pad : pad + h, pad : pad + w])

    return _make(out, parents, "conv2d", bw)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties send the gradient to the first max in
    row-major window order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial extent, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g, grads):
        gw = np.zeros(win.shape, dtype=x.data.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _send(grads, x, gx)

    return _make(np.ascontiguousarray(out), (x,), "maxpool2x2", bw)


def upsample_nearest_2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g, grads):
        _send(grads, x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(out, (x,), "upsample2x", bw)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization with a learned affine.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In eval mode the running statistics are used.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm affine shape mismatch for input {x.shape}")
    g4 = gamma.data[None, :, None, None]
    if training:
        m = n * h * w
        if m < 2:
            raise ValueError("batchnorm in training mode needs at least two values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        m = None
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def bw(g, grads):
        if beta.requires_grad:
            _send(grads, beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _send(grads, gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * g4
            if training:
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - mean_g - xhat * mean_gx) * inv_std[None, :, None, None]
            else:
                gx = gxhat * inv_std[None, :, None, None]
            _send(grads, x, gx)

    return _make(out, (x, gamma, beta), "batchnorm2d", bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Squared error summed over parts and locations, averaged over the batch."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = pred.shape[0] if pred.ndim else 1
    value = np.asarray((diff * diff).sum() / n)

    def bw(g, grads):
        _send(grads, pred, (2.0 / n) * g * diff)
        _send(grads, target, (-2.0 / n) * g * diff)

    return _make(value, (pred, target), "mse_loss", bw)
