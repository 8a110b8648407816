"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every op records its parents and a backward closure on the
output tensor; ``Tensor.backward()`` walks the recorded graph once, in a
fixed topological order, so gradients are bit-reproducible. All arrays are
row-major float64 (32-bit is reserved for inference-only I/O paths and never
enters a gradient computation).

Every forward op validates that its output is finite; NaN/Inf raises
NumericError at the op that produced it.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf validation. Returns the previous setting."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return previous


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 array node in a dynamically recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if _CHECK_FINITE and not np.isfinite(self.data).all():
            raise NumericError("non-finite values in tensor construction")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, backward_fn):
        out = Tensor.__new__(Tensor)
        out.data = data
        if _CHECK_FINITE and not np.isfinite(data).all():
            raise NumericError("non-finite values produced by an op")
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- autograd engine -------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable grad-leaf.

        `self` must be a scalar. Repeated calls (without resetting grads)
        keep accumulating, matching the optimizer contract.
        """
        if self.data.size != 1:
            raise ConfigError(f"backward() requires a scalar, got shape {self.data.shape}")
        order = self._toposort()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is not None:
                for parent, pg in zip(node._parents, node._backward_fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            elif node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy().reshape(node.data.shape)
                else:
                    node.grad = node.grad + g.reshape(node.data.shape)

    def _toposort(self):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, emit = stack.pop()
            if emit:
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

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- elementwise arithmetic ------------------------------------------------

    def __add__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        data = a.data + b.data
        return Tensor._from_op(
            data, (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        data = a.data - b.data
        return Tensor._from_op(
            data, (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))

    def __rsub__(self, other):
        return ensure_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        data = a.data * b.data
        return Tensor._from_op(
            data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.data.shape),
                       _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        data = a.data / b.data
        return Tensor._from_op(
            data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.data.shape),
                       _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))

    def __rtruediv__(self, other):
        return ensure_tensor(other).__truediv__(self)

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ConfigError("only scalar exponents are supported")
        a = self
        k = float(exponent)
        data = a.data ** k
        return Tensor._from_op(data, (a,), lambda g: (g * k * a.data ** (k - 1.0),))

    # -- elementwise functions ---------------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)
        return Tensor._from_op(data, (a,), lambda g: (g * data,))

    def log(self):
        a = self
        data = np.log(a.data)
        return Tensor._from_op(data, (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)
        return Tensor._from_op(data, (a,), lambda g: (g * 0.5 / data,))

    def abs(self):
        a = self
        data = np.abs(a.data)
        return Tensor._from_op(data, (a,), lambda g: (g * np.sign(a.data),))

    def sigmoid(self):
        a = self
        x = a.data
        # overflow-safe split by sign
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return Tensor._from_op(data, (a,), lambda g: (g * data * (1.0 - data),))

    def leaky_relu(self, alpha: float = 0.2):
        a = self
        slope = np.where(a.data >= 0, 1.0, alpha)
        data = a.data * slope
        return Tensor._from_op(data, (a,), lambda g: (g * slope,))

    def relu(self):
        return self.leaky_relu(alpha=0.0)

    def clip(self, lo: float, hi: float):
        a = self
        data = np.clip(a.data, lo, hi)
        mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
        return Tensor._from_op(data, (a,), lambda g: (g * mask,))

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g.reshape(()), a.data.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, a.data.shape).copy(),)

        return Tensor._from_op(np.asarray(data), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        if axis is None:
            count = a.data.size
        elif isinstance(axis, tuple):
            count = int(np.prod([a.data.shape[ax] for ax in axis]))
        else:
            count = a.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)
        return Tensor._from_op(data, (a,), lambda g: (g.reshape(a.data.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        inverse = np.argsort(axes)
        data = a.data.transpose(axes)
        return Tensor._from_op(data, (a,), lambda g: (g.transpose(inverse),))

    def __getitem__(self, index):
        a = self
        data = a.data[index]

        def backward(g):
            dx = np.zeros_like(a.data)
            if _index_has_arrays(index):
                np.add.at(dx, index, g)
            else:
                dx[index] += g
            return (dx,)

        return Tensor._from_op(np.ascontiguousarray(data), (a,), backward)

    # -- linear algebra ----------------------------------------------------------------

    def __matmul__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError("matmul requires >=2-d operands")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise DimensionError(
                f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")
        data = a.data @ b.data

        def backward(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            return (ga, gb)

        return Tensor._from_op(data, (a, b), backward)


def ensure_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _index_has_arrays(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


class Parameter(Tensor):
    """Trainable leaf tensor; grad is a zero array until backward runs."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)


# -- composite ops ------------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)

    return Tensor._from_op(data, tuple(tensors), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along `axis`; rows sum to 1."""
    x = ensure_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return Tensor._from_op(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = ensure_tensor(x)
    if x.shape[-1] < 2:
        raise DimensionError("layer_norm needs a normalized axis of length >= 2")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normalized = centered / (var + eps).sqrt()
    return normalized * gain + bias


# -- convolution -----------------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out <= 0:
        raise DimensionError(
            f"kernel {k} with stride {stride}, pad {pad} does not fit input of size {size}")
    return out


def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    c = xpad.shape[2]
    s0, s1, s2 = xpad.strides
    view = np.lib.stride_tricks.as_strided(
        xpad, (oh, ow, kh, kw, c), (s0 * stride, s1 * stride, s0, s1, s2))
    return view.reshape(oh * ow, kh * kw * c)


def _col2im(cols: np.ndarray, h: int, w: int, c: int, kh: int, kw: int,
            stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    xpad = np.zeros((h + 2 * pad, w + 2 * pad, c))
    cols = cols.reshape(oh, ow, kh, kw, c)
    for u in range(kh):
        for v in range(kw):
            xpad[u:u + stride * oh:stride, v:v + stride * ow:stride, :] += cols[:, :, u, v, :]
    if pad:
        return np.ascontiguousarray(xpad[pad:pad + h, pad:pad + w, :])
    return xpad


def conv2d(x: Tensor, weight: Tensor, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate x[H,W,Cin] with weight[kh,kw,Cin,Cout].

    Output is [(H+2p-kh)//s + 1, (W+2p-kw)//s + 1, Cout].
    """
    x, weight = ensure_tensor(x), ensure_tensor(weight)
    h, w, cin = x.shape
    kh, kw, kcin, cout = weight.shape
    if kcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernel {kcin}")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    xpad = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0))) if pad else x.data
    cols = _im2col(xpad, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    parents = [x, weight]
    if bias is not None:
        bias = ensure_tensor(bias)
        out = out + bias.data
        parents.append(bias)
    out = out.reshape(oh, ow, cout)

    def backward(g):
        gflat = g.reshape(oh * ow, cout)
        dw = (cols.T @ gflat).reshape(weight.shape)
        dcols = gflat @ wmat.T
        dx = _col2im(dcols, h, w, cin, kh, kw, stride, pad, oh, ow)
        if bias is not None:
            return (dx, dw, gflat.sum(axis=0))
        return (dx, dw)

    return Tensor._from_op(out, tuple(parents), backward)


def transposed_conv2d(x: Tensor, weight: Tensor, bias=None,
                      stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d: x[h,w,Cin] with weight[kh,kw,Cout,Cin] -> [(h-1)s+kh-2p, ..., Cout]."""
    x, weight = ensure_tensor(x), ensure_tensor(weight)
    h, w, cin = x.shape
    kh, kw, cout, kcin = weight.shape
    if kcin != cin:
        raise DimensionError(f"transposed_conv2d channel mismatch: input {cin}, kernel {kcin}")
    oh = (h - 1) * stride + kh - 2 * pad
    ow = (w - 1) * stride + kw - 2 * pad
    if oh <= 0 or ow <= 0:
        raise DimensionError("transposed_conv2d output would be empty")
    wmat = weight.data.reshape(kh * kw * cout, cin)
    cols = x.data.reshape(h * w, cin) @ wmat.T
    out = _col2im(cols, oh, ow, cout, kh, kw, stride, pad, h, w)
    parents = [x, weight]
    if bias is not None:
        bias = ensure_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gpad = np.pad(g, ((pad, pad), (pad, pad), (0, 0))) if pad else g
        gcols = _im2col(gpad, kh, kw, stride, h, w)
        dx = (gcols @ wmat).reshape(h, w, cin)
        dw = (gcols.T @ x.data.reshape(h * w, cin)).reshape(weight.shape)
        if bias is not None:
            return (dx, dw, g.sum(axis=(0, 1)))
        return (dx, dw)

    return Tensor._from_op(out, tuple(parents), backward)


# -- plane sampling ---------------------------------------------------------------------

_SNAP_EPS = 1e-9  # texel-center exactness guard


def bilinear_sample(plane: Tensor, uv) -> Tensor:
    """Sample plane[H,W,C] at uv in [-1,1]^2 (align-corners, border clamp).

    uv=(-1,-1) hits texel (0,0); uv=(1,1) hits texel (H-1,W-1). u runs along
    the width axis, v along the height axis. Out-of-range uv is clamped to
    the border; the result is differentiable w.r.t. both plane and uv (the
    uv gradient is zero in the clamped region).

    `uv` may be a Tensor or array of shape (2,) or (N,2); output is (C,) or (N,C).
    """
    plane = ensure_tensor(plane)
    uv = ensure_tensor(uv)
    single = uv.ndim == 1
    uv2 = uv.reshape(1, 2) if single else uv
    h, w, c = plane.shape
    n = uv2.shape[0]

    col = (uv2.data[:, 0] + 1.0) * 0.5 * (w - 1)
    row = (uv2.data[:, 1] + 1.0) * 0.5 * (h - 1)
    # snap near-integer coordinates so texel centers reproduce texel values exactly
    col = np.where(np.abs(col - np.round(col)) < _SNAP_EPS, np.round(col), col)
    row = np.where(np.abs(row - np.round(row)) < _SNAP_EPS, np.round(row), row)
    in_u = (col >= 0.0) & (col <= w - 1)
    in_v = (row >= 0.0) & (row <= h - 1)
    col = np.clip(col, 0.0, w - 1)
    row = np.clip(row, 0.0, h - 1)

    c0 = np.clip(np.floor(col).astype(np.intp), 0, max(w - 2, 0))
    r0 = np.clip(np.floor(row).astype(np.intp), 0, max(h - 2, 0))
    fc = col - c0 if w > 1 else np.zeros(n)
    fr = row - r0 if h > 1 else np.zeros(n)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)

    p00 = plane.data[r0, c0]
    p01 = plane.data[r0, c1]
    p10 = plane.data[r1, c0]
    p11 = plane.data[r1, c1]
    w00 = ((1 - fr) * (1 - fc))[:, None]
    w01 = ((1 - fr) * fc)[:, None]
    w10 = (fr * (1 - fc))[:, None]
    w11 = (fr * fc)[:, None]
    out = w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11

    def backward(g):
        dplane = None
        duv = None
        if plane.requires_grad:
            dplane = np.zeros_like(plane.data)
            np.add.at(dplane, (r0, c0), w00 * g)
            np.add.at(dplane, (r0, c1), w01 * g)
            np.add.at(dplane, (r1, c0), w10 * g)
            np.add.at(dplane, (r1, c1), w11 * g)
        if uv.requires_grad:
            dcol = ((1 - fr) * ((p01 - p00) * g).sum(axis=1)
                    + fr * ((p11 - p10) * g).sum(axis=1))
            drow = ((1 - fc) * ((p10 - p00) * g).sum(axis=1)
                    + fc * ((p11 - p01) * g).sum(axis=1))
            du = np.where(in_u, dcol * 0.5 * (w - 1), 0.0)
            dv = np.where(in_v, drow * 0.5 * (h - 1), 0.0)
            duv = np.stack([du, dv], axis=1).reshape(uv.data.shape)
        return (dplane, duv)

    out_t = Tensor._from_op(out, (plane, uv), backward)
    return out_t.reshape(c) if single else out_t
