"""Minimal reverse-mode tensor core.

Only the operations needed by the enhancement network and its losses are
provided. Every op records a closure that maps the output gradient to the
gradients of its parents; :meth:`Tensor.backward` replays those closures in
reverse topological order.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdamState",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "avg_pool2",
    "clamp",
    "concat_channels",
    "conv2d",
    "crop",
    "div",
    "log",
    "lrelu",
    "mean",
    "mul",
    "neg",
    "patch_mean",
    "patch_std",
    "pixel_shuffle",
    "pixel_unshuffle",
    "power",
    "reshape",
    "scale",
    "separable_filter",
    "sqrt",
    "std",
    "sub",
    "total",
]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An n-dimensional float array that may carry a gradient."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every tensor reachable from this scalar.

        Leaf gradients accumulate across calls; call ``zero_grad`` on
        parameters between optimization steps.
        """
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar (no gradient w.r.t. ``c``)."""
    c = float(c)
    return _result(x.data * x.dtype.type(c), (x,), lambda g: (g * c,))


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise ``x ** exponent`` for ``x >= 0``.

    The gradient is taken as 0 wherever ``x == 0``.
    """
    if np.any(x.data < 0):
        raise ValueError("power() requires a non-negative base")
    p = float(exponent)
    out = np.power(x.data, x.dtype.type(p))

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(x.data > 0, p * np.power(x.data, x.dtype.type(p - 1.0)), 0.0)
        return (g * d.astype(x.dtype, copy=False),)

    return _result(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log() of a non-positive value (missing epsilon guard?)")
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise ValueError("sqrt() of a negative value")
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0).astype(x.dtype, copy=False),)

    return _result(out, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    # sign(0) == 0 gives the zero subgradient at the kink
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data > lo) & (x.data < hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def lrelu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"lrelu slope must lie in (0, 1), got {slope}")
    s = x.dtype.type(slope)
    pos = x.data > 0
    return _result(
        np.where(pos, x.data, x.data * s),
        (x,),
        lambda g: (np.where(pos, g, g * s),),
    )


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def total(x: Tensor) -> Tensor:
    return _result(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _result(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.dtype),),
    )


def std(x: Tensor) -> Tensor:
    """Population standard deviation over all elements (two-pass)."""
    centered = x.data.astype(np.float64) - x.data.astype(np.float64).mean()
    sigma = float(np.sqrt(np.mean(centered * centered)))
    n = x.size

    def backward(g):
        if sigma == 0.0:
            return (np.zeros_like(x.data),)
        return ((float(g) / (n * sigma) * centered).astype(x.dtype),)

    return _result(np.asarray(sigma, dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` window of the last two axes."""
    H, W = x.shape[-2:]
    if height > H or width > W:
        raise ValueError(f"cannot crop {H}x{W} to {height}x{width}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., :height, :width] = g
        return (full,)

    return _result(x.data[..., :height, :width].copy(), (x,), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    spatial = {t.shape[0:1] + t.shape[2:] for t in tensors}
    if any(t.ndim != 4 for t in tensors) or len(spatial) != 1:
        raise ValueError("concat_channels needs NCHW tensors with matching N, H, W")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.concatenate([t.data for t in tensors], axis=1), tensors, backward)


# ---------------------------------------------------------------------------
# reflection padding on the last two axes
# ---------------------------------------------------------------------------


def _reflect_pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    H, W = x.shape[-2:]
    if ph >= H or pw >= W:
        raise ValueError(f"reflection pad ({ph}, {pw}) exceeds spatial extent {H}x{W}")
    widths = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(x, widths, mode="reflect")


def _reflect_pad_adjoint_axis(g: np.ndarray, p: int, axis: int) -> np.ndarray:
    if p == 0:
        return g
    g = np.moveaxis(g, axis, -1)
    n = g.shape[-1] - 2 * p
    core = g[..., p : p + n].copy()
    core[..., 1 : p + 1] += g[..., :p][..., ::-1]
    core[..., n - 1 - p : n - 1] += g[..., n + p :][..., ::-1]
    return np.moveaxis(core, -1, axis)


def _reflect_pad_adjoint(g: np.ndarray, ph: int, pw: int) -> np.ndarray:
    g = _reflect_pad_adjoint_axis(g, ph, g.ndim - 2)
    return _reflect_pad_adjoint_axis(g, pw, g.ndim - 1)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    dilation: int = 1,
    padding: str = "reflect",
) -> Tensor:
    """2-D cross-correlation of NCHW input with an OIkk kernel.

    ``padding="reflect"`` keeps the spatial size; ``"none"`` returns the
    valid region.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIkk weight")
    N, C, H, W = x.shape
    O, Ci, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d needs a square odd kernel, got {k}x{k2}")
    if Ci != C:
        raise ValueError(f"conv2d channel mismatch: input has {C}, weight expects {Ci}")
    if bias is not None and bias.shape != (O,):
        raise ValueError(f"bias shape {bias.shape} does not match {O} output channels")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")

    d = int(dilation)
    reach = d * (k - 1)
    if padding == "reflect":
        pad = reach // 2
        xp = _reflect_pad(x.data, pad, pad)
        Ho, Wo = H, W
    elif padding == "none":
        pad = 0
        xp = x.data
        Ho, Wo = H - reach, W - reach
        if Ho < 1 or Wo < 1:
            raise ValueError(f"kernel reach {reach + 1} exceeds input {H}x{W}")
    else:
        raise ValueError(f"unknown padding mode {padding!r}")

    cols = np.empty((N, C, k, k, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * d : i * d + Ho, j * d : j * d + Wo]
    cols = cols.reshape(N, C * k * k, Ho * Wo)
    wmat = weight.data.reshape(O, C * k * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(N, O, Ho, Wo)

    def backward(g):
        gm = g.reshape(N, O, Ho * Wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gm).reshape(N, C, k, k, Ho, Wo)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i * d : i * d + Ho, j * d : j * d + Wo] += dcols[:, :, i, j]
            gx = _reflect_pad_adjoint(gxp, pad, pad) if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def avg_pool2(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {H}x{W}")
    blocks = x.data.reshape(N, C, H // 2, 2, W // 2, 2)
    out = blocks.mean(axis=(3, 5))

    def backward(g):
        spread = np.broadcast_to((g * 0.25)[:, :, :, None, :, None], blocks.shape)
        return (spread.reshape(x.shape).copy(),)

    return _result(out, (x,), backward)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    N, C, H, W = a.shape
    c = C // (r * r)
    return a.reshape(N, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(N, c, H * r, W * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    N, c, Hr, Wr = a.shape
    H, W = Hr // r, Wr // r
    return a.reshape(N, c, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(N, c * r * r, H, W)


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """Rearrange ``N x C x H x W`` into ``N x C/r^2 x rH x rW``.

    Output channel ``c`` at ``(r*y + dy, r*x + dx)`` reads input channel
    ``c*r*r + dy*r + dx`` at ``(y, x)``.
    """
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ValueError(f"pixel_shuffle: channels {x.shape[1]} not divisible by {r * r}")
    return _result(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ValueError(f"pixel_unshuffle: spatial dims not divisible by {r}")
    return _result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


# ---------------------------------------------------------------------------
# fixed-kernel separable filters (SSIM windows, patch statistics)
# ---------------------------------------------------------------------------


def _correlate_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    K = taps.size
    n = a.shape[axis] - K + 1
    a = np.moveaxis(a, axis, -1)
    out = taps[0] * a[..., 0:n]
    for t in range(1, K):
        out = out + taps[t] * a[..., t : t + n]
    return np.moveaxis(out, -1, axis)


def _correlate_axis_adjoint(g: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    K = taps.size
    widths = [(0, 0)] * g.ndim
    widths[axis] = (K - 1, K - 1)
    return _correlate_axis(np.pad(g, widths), taps[::-1], axis)


def _sep_forward(a: np.ndarray, taps: np.ndarray, pad: int) -> np.ndarray:
    a = _reflect_pad(a, pad, pad)
    return _correlate_axis(_correlate_axis(a, taps, a.ndim - 2), taps, a.ndim - 1)


def _sep_adjoint(g: np.ndarray, taps: np.ndarray, pad: int) -> np.ndarray:
    g = _correlate_axis_adjoint(g, taps, g.ndim - 1)
    g = _correlate_axis_adjoint(g, taps, g.ndim - 2)
    return _reflect_pad_adjoint(g, pad, pad)


def separable_filter(x: Tensor, taps, padding: str = "none") -> Tensor:
    """Correlate the last two axes with ``outer(taps, taps)``.

    ``padding="none"`` yields the valid region; ``"reflect"`` keeps the size.
    """
    taps = np.asarray(taps, dtype=x.dtype)
    K = taps.size
    if K % 2 == 0:
        raise ValueError("separable_filter needs an odd number of taps")
    if padding == "reflect":
        pad = K // 2
    elif padding == "none":
        pad = 0
        if min(x.shape[-2:]) < K:
            raise ValueError(f"filter of size {K} exceeds plane {x.shape[-2:]}")
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    out = _sep_forward(x.data, taps, pad)
    return _result(out, (x,), lambda g: (_sep_adjoint(g, taps, pad),))


def _box_taps(size: int, dtype) -> np.ndarray:
    return np.full(size, 1.0 / size, dtype=dtype)


def patch_mean(x: Tensor, size: int = 11) -> Tensor:
    """Mean over ``size x size`` reflection-padded windows centred on each pixel."""
    return separable_filter(x, _box_taps(size, x.dtype), padding="reflect")


def patch_std(x: Tensor, size: int = 11) -> Tensor:
    """Population std over ``size x size`` reflection-padded windows.

    Moments are accumulated in float64 to limit cancellation in
    ``E[x^2] - E[x]^2``; the gradient is 0 where the window is flat.
    """
    if size % 2 == 0:
        raise ValueError("patch size must be odd")
    pad = size // 2
    taps = _box_taps(size, np.float64)
    a = x.data.astype(np.float64)
    mu = _sep_forward(a, taps, pad)
    var = np.maximum(_sep_forward(a * a, taps, pad) - mu * mu, 0.0)
    sigma = np.sqrt(var)

    def backward(g):
        live = sigma > 0
        dvar = np.where(live, g.astype(np.float64) / (2.0 * np.where(live, sigma, 1.0)), 0.0)
        gx = 2.0 * a * _sep_adjoint(dvar, taps, pad) - 2.0 * _sep_adjoint(dvar * mu, taps, pad)
        return (gx.astype(x.dtype),)

    return _result(sigma.astype(x.dtype), (x,), backward)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {', '.join(missing)}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.dtype, copy=False)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
