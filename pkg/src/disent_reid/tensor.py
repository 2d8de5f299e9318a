"""Dense float64 tensors with a recorded graph for reverse-mode differentiation.

Only the operations the re-id model needs are provided. Every op computes its
forward value eagerly with numpy; when a :class:`Record` is active and at least
one input is tracked, the op also appends a node holding a backward closure.

    >>> x = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Record() as rec:
    ...     loss = sum_all(mul(x, x))
    >>> grads = backward(rec, loss)
    >>> grads[x]
    array([[2., 2.],
           [2., 2.]])
"""
from __future__ import annotations

import contextvars
import itertools
from collections.abc import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

_active: contextvars.ContextVar[Record | None] = contextvars.ContextVar("active_record", default=None)
_record_ids = itertools.count()


class Tensor:
    """An immutable float64 array plus gradient bookkeeping.

    ``node`` is ``(record_id, index)`` once the tensor has been produced by (or
    registered as a leaf in) a :class:`Record`.
    """

    __slots__ = ("data", "grad", "name", "node", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if any(s < 1 for s in arr.shape):
            raise ValueError(f"tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node: tuple[int, int] | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __radd__ = __add__
    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("backward", "inputs", "leaf", "tag")

    def __init__(self, tag, inputs, backward, leaf):
        self.tag = tag
        self.inputs = inputs
        self.backward = backward
        self.leaf = leaf


class Record:
    """Append-only list of graph nodes for one training step.

    Use as a context manager; ops executed inside it are recorded. Input node
    ids always precede the node that consumes them.
    """

    def __init__(self):
        self.id = next(_record_ids)
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n.leaf for n in self.nodes if n.leaf is not None]

    def _index_of(self, t: Tensor) -> int:
        """Node index of ``t`` in this record, or -1 when untracked."""
        if t.node is not None and t.node[0] == self.id:
            return t.node[1]
        if t.requires_grad:
            self.nodes.append(_Node("leaf", (), None, t))
            t.node = (self.id, len(self.nodes) - 1)
            return t.node[1]
        return -1


def record_op(tag: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out`` in a Tensor and record it when any input is tracked.

    ``backward_fn(grad, needs)`` receives the upstream gradient and a tuple of
    booleans (one per input) and returns one gradient (or None) per input.
    """
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.node = None
    result.requires_grad = False
    result.name = None
    rec = _active.get()
    if rec is None:
        return result
    ids = tuple(rec._index_of(t) for t in inputs)
    if all(i < 0 for i in ids):
        return result
    rec.nodes.append(_Node(tag, ids, backward_fn, None))
    result.node = (rec.id, len(rec.nodes) - 1)
    return result


def backward(record: Record, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Every leaf registered in ``record`` gets ``.grad`` set (zeros when it does
    not influence the loss). Returns a mapping leaf -> gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.node is None or loss.node[0] != record.id:
        raise ValueError("loss was not produced inside this record")
    grads: list[np.ndarray | None] = [None] * len(record.nodes)
    grads[loss.node[1]] = np.ones_like(loss.data)
    for idx in range(loss.node[1], -1, -1):
        node = record.nodes[idx]
        g = grads[idx]
        if g is None or node.leaf is not None:
            continue
        needs = tuple(i >= 0 for i in node.inputs)
        for i, gi in zip(node.inputs, node.backward(g, needs)):
            if i < 0 or gi is None:
                continue
            grads[i] = gi if grads[i] is None else grads[i] + gi
    out = {}
    for idx, node in enumerate(record.nodes):
        if node.leaf is not None:
            g = grads[idx]
            g = np.zeros_like(node.leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(node.leaf.shape)
            node.leaf.grad = g
            out[node.leaf] = g
    return out


# ---------------------------------------------------------------------------
# convolution


def _conv_out(size: int, k: int, stride: int, pad: int, dim: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ValueError(f"conv2d: kernel {dim}={k} does not fit padded input {dim}={size + 2 * pad}")
    return span // stride + 1


def _pad_nhwc(x: np.ndarray, pad: int) -> np.ndarray:
    """NCHW array -> zero-padded, C-contiguous NHWC array."""
    n, c, h, w = x.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    out[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of an NHWC array as rows ``[N*Ho*Wo, kh*kw*C]``."""
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, shape=(n, ho, wo, kh, kw, c),
                      strides=(s0, s1 * stride, s2 * stride, s1, s2, s3), writeable=False)
    return view.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[Co,C,kh,kw]`` plus bias.

    Output extents use floor division: ``(H + 2*pad - kh) // stride + 1``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} or pad={pad}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input channels C={c} but weight expects C={ci}")
    if b is not None and b.shape != (co,):
        raise ValueError(f"conv2d: bias length {b.shape} does not match output channels Co={co}")
    ho = _conv_out(h, kh, stride, pad, "H")
    wo = _conv_out(wd, kw, stride, pad, "W")
    # internal layout is NHWC; outputs are NCHW views of NHWC buffers
    xp = _pad_nhwc(x.data, pad)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(co, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    xp_shape = xp.shape

    def back(g, needs):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        dx = dw = db = None
        if needs[1]:
            dw = (g2.T @ cols).reshape(co, kh, kw, c).transpose(0, 3, 1, 2)
        if len(needs) > 2 and needs[2]:
            db = g2.sum(axis=0)
        if needs[0] and stride == 1:
            # correlation of the padded gradient with the flipped kernel
            gd = np.zeros((n, ho + 2 * (kh - 1), wo + 2 * (kw - 1), co))
            gd[:, kh - 1:kh - 1 + ho, kw - 1:kw - 1 + wo, :] = g.transpose(0, 2, 3, 1)
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, -1)
            gcols = _im2col(gd[:, pad:, pad:, :], kh, kw, 1, h, wd)
            dx = (gcols @ wflip.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        elif needs[0]:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros(xp_shape)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += \
                        dcols[:, :, :, i, j, :]
            dx = dxp[:, pad:pad + h, pad:pad + wd, :].transpose(0, 3, 1, 2)
        return (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return record_op("conv2d", out, inputs, back)


def conv1d_channels(v: Tensor, kernel: Tensor) -> Tensor:
    """Same-length zero-padded 1-D cross-correlation along the last axis.

    ``v`` is ``[C]`` or ``[N, C]``; ``kernel`` has odd length k.
    """
    k = kernel.shape[0] if kernel.ndim == 1 else -1
    if k < 1 or k % 2 == 0:
        raise ValueError(f"conv1d_channels needs a 1-d kernel of odd length, got shape {kernel.shape}")
    half = (k - 1) // 2
    squeeze = v.ndim == 1
    vd = v.data[None, :] if squeeze else v.data
    c = vd.shape[1]
    vp = np.pad(vd, ((0, 0), (half, half)))
    windows = np.lib.stride_tricks.sliding_window_view(vp, k, axis=1)  # [N, C, k]
    out = windows @ kernel.data
    if squeeze:
        out = out[0]

    def back(g, needs):
        g2 = g[None, :] if squeeze else g
        dv = dk = None
        if needs[0]:
            dvp = np.zeros_like(vp)
            for j in range(k):
                dvp[:, j:j + c] += g2 * kernel.data[j]
            dv = dvp[:, half:half + c]
            if squeeze:
                dv = dv[0]
        if needs[1]:
            dk = np.einsum("nc,nck->k", g2, windows)
        return (dv, dk)

    return record_op("conv1d_channels", out, (v, kernel), back)


# ---------------------------------------------------------------------------
# pooling


def _check_nchw(x: Tensor, op: str):
    if x.ndim != 4:
        raise ValueError(f"{op} expects [N,C,H,W], got shape {x.shape}")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    # summing sorted values in a contiguous buffer makes the result bitwise
    # independent of spatial order and of the input's memory layout
    ordered = np.ascontiguousarray(np.sort(x.data.reshape(n, c, h * w), axis=2))
    out = ordered.sum(axis=2) / (h * w)

    def back(g, needs):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return record_op("global_avg_pool", out, (x,), back)


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max; the subgradient goes to the first maximum in row-major order."""
    _check_nchw(x, "global_max_pool")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def back(g, needs):
        dx = np.zeros((n, c, h * w))
        np.put_along_axis(dx, arg[:, :, None], g[:, :, None], axis=2)
        return (dx.reshape(x.shape),)

    return record_op("global_max_pool", out, (x,), back)


# ---------------------------------------------------------------------------
# pointwise


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_OPEN_LO = np.nextafter(0.0, 1.0)
_OPEN_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor, open_interval: bool = False) -> Tensor:
    """Logistic function; ``open_interval`` keeps saturated outputs strictly inside (0, 1)."""
    s = _sigmoid(x.data)
    if open_interval:
        s = np.clip(s, _OPEN_LO, _OPEN_HI)
    return record_op("sigmoid", s, (x,), lambda g, needs: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op("relu", x.data * mask, (x,), lambda g, needs: (g * mask,))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def _broadcast_rhs(a: Tensor, b: Tensor, op: str) -> np.ndarray:
    """Return b's data reshaped to broadcast over a (trailing singleton dims only)."""
    if a.shape == b.shape:
        return b.data
    if b.ndim < a.ndim and a.shape[:b.ndim] == b.shape:
        return b.data.reshape(b.shape + (1,) * (a.ndim - b.ndim))
    raise ValueError(f"{op}: cannot broadcast shape {b.shape} over {a.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape(shape + (-1,)).sum(axis=-1)


def add(a: Tensor, b: Tensor) -> Tensor:
    bd = _broadcast_rhs(a, b, "add")
    return record_op("add", a.data + bd, (a, b),
                     lambda g, needs: (g, _reduce_to(g, b.shape) if needs[1] else None))


def sub(a: Tensor, b: Tensor) -> Tensor:
    bd = _broadcast_rhs(a, b, "sub")
    return record_op("sub", a.data - bd, (a, b),
                     lambda g, needs: (g, -_reduce_to(g, b.shape) if needs[1] else None))


def mul(a: Tensor, b: Tensor) -> Tensor:
    bd = _broadcast_rhs(a, b, "mul")
    ad = a.data

    def back(g, needs):
        ga = g * bd if needs[0] else None
        gb = _reduce_to(g * ad, b.shape) if needs[1] else None
        return (ga, gb)

    return record_op("mul", ad * bd, (a, b), back)


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x[N,D] @ w[K,D].T + b[K]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"linear: bias {b.shape} does not match K={w.shape[0]}")
    out = x.data @ w.data.T + b.data

    def back(g, needs):
        return (g @ w.data if needs[0] else None,
                g.T @ x.data if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)

    return record_op("linear", out, (x, w, b), back)


def sum_all(x: Tensor) -> Tensor:
    return record_op("sum", np.asarray(x.data.sum()), (x,),
                     lambda g, needs: (np.full(x.shape, float(g)),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return record_op("reshape", x.data.reshape(shape), (x,), lambda g, needs: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between recorded gradients and central differences.

    ``f`` maps the input tensors to a scalar Tensor. Error per entry is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``. Non-finite
    values make the check fail with ``inf``.
    """
    inputs = list(inputs)
    flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.node = None
    with Record() as rec:
        loss = f(*inputs)
    grads = backward(rec, loss)
    analytic = [grads.get(t, np.zeros_like(t.data)) for t in inputs]
    for t, flag in zip(inputs, flags):
        t.requires_grad = flag
        t.node = None

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        original = t.data
        work = original.copy()
        t.data = work
        flat = work.reshape(-1)
        ga_flat = ga.reshape(-1)
        try:
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = float(f(*inputs).data)
                flat[i] = keep - eps
                lo = float(f(*inputs).data)
                flat[i] = keep
                num = (hi - lo) / (2 * eps)
                if not (np.isfinite(num) and np.isfinite(ga_flat[i])):
                    return float("inf")
                err = abs(ga_flat[i] - num) / max(1e-8, abs(ga_flat[i]) + abs(num))
                worst = max(worst, err)
        finally:
            t.data = original
    return worst
