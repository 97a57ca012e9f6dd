"""Dense complex tensors with a reverse-mode gradient tape.

Gradients of a real scalar loss L follow one convention everywhere: for a
complex leaf z = x + iy the stored gradient is ``dL/dx + i dL/dy`` (twice the
conjugate Wirtinger derivative).  For a holomorphic op w = f(z) this gives
``g_z = conj(f'(z)) * g_w``; for a general op

    g_z = conj(g_w) * dw/dz* + g_w * conj(dw/dz).

Real tensors carry plain real gradients; when a real tensor feeds a complex op
its gradient is the real part of the complex one.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

_DEFAULT_COMPLEX = np.dtype(np.complex64)
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_COMPLEX


def real_dtype(dtype=None):
    dtype = np.dtype(dtype or _DEFAULT_COMPLEX)
    return np.empty(0, dtype).real.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default complex dtype (``complex64``/``complex128``)."""
    global _DEFAULT_COMPLEX
    old = _DEFAULT_COMPLEX
    _DEFAULT_COMPLEX = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_COMPLEX = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="", name=None):
        if isinstance(data, Tensor):
            data = data.data
        data = np.asarray(data)
        if data.dtype.kind in "biu":
            data = data.astype(real_dtype())
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    # -- basic properties -------------------------------------------------
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

    @property
    def is_complex(self):
        return self.data.dtype.kind == "c"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    def __float__(self):
        return float(self.data.real)

    def __len__(self):
        return self.data.shape[0]

    # -- autograd ---------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate ``.grad`` on every reachable leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            if self.is_complex and abs(self.data.imag).max() > 1e-9:
                raise ValueError("loss has a nonzero imaginary part")
            if not np.isfinite(self.data).all():
                raise FloatingPointError("loss is not finite")
            grad = np.ones(self.data.shape, dtype=self.data.real.dtype)
        grads = {id(self): np.asarray(grad)}
        for node in reversed(_toposort(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _fit(pg, parent.data)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operators --------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def conj(self):
        return conj(self)

    @property
    def real(self):
        return real(self)

    @property
    def imag(self):
        return imag(self)

    def abs(self):
        return modulus(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def parameter(data, name=None):
    return Tensor(np.array(data), requires_grad=True, name=name)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind == "c":
        arr = arr.astype(_DEFAULT_COMPLEX) if arr.ndim == 0 else arr
    elif arr.dtype.kind in "biuf" and arr.ndim == 0:
        arr = arr.astype(real_dtype())
    return Tensor(arr)


def _toposort(root):
    order, seen = [], set()
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _fit(g, like):
    """Reduce a broadcast gradient to ``like.shape`` and project onto its dtype."""
    g = np.asarray(g)
    if g.shape != like.shape:
        extra = g.ndim - like.ndim
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(like.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        g = g.reshape(like.shape)
    if like.dtype.kind != "c" and g.dtype.kind == "c":
        g = g.real
    return g.astype(like.dtype, copy=False)


def _make(data, parents, backward, op):
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * np.conj(bd) if a.requires_grad else None,
                                             g * np.conj(ad) if b.requires_grad else None), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = g / np.conj(bd)
        return ga, -ga * np.conj(out)

    return _make(out, (a, b), backward, "div")


def conj(a):
    a = as_tensor(a)
    if not a.is_complex:
        return a
    return _make(np.conj(a.data), (a,), lambda g: (np.conj(g),), "conj")


def real(a):
    a = as_tensor(a)
    if not a.is_complex:
        return a
    return _make(a.data.real.copy(), (a,), lambda g: (g.astype(a.dtype),), "real")


def imag(a):
    a = as_tensor(a)
    if not a.is_complex:
        return _make(np.zeros_like(a.data), (a,), lambda g: (None,), "imag")
    return _make(a.data.imag.copy(), (a,), lambda g: (1j * g,), "imag")


def make_complex(re, im):
    re, im = as_tensor(re), as_tensor(im)
    out = (re.data + 1j * im.data).astype(_complex_for(re.data.dtype))
    return _make(out, (re, im), lambda g: (g.real, g.imag), "complex")


def _complex_for(real_dt):
    return np.result_type(real_dt, np.complex64)


def modulus(a):
    """|z|; the gradient at z = 0 is taken as zero."""
    a = as_tensor(a)
    r = np.abs(a.data)

    def backward(g):
        if not a.is_complex:
            return (g * np.sign(a.data),)
        safe = np.where(r > 0, r, 1)
        return (g * np.where(r > 0, a.data / safe, 0),)

    return _make(r, (a,), backward, "abs")


def abs2(a):
    """|z|^2 as a real tensor."""
    a = as_tensor(a)
    out = (a.data * np.conj(a.data)).real if a.is_complex else a.data * a.data
    return _make(out, (a,), lambda g: (2 * g * a.data,), "abs2")


def power(a, p):
    """Real power of a real tensor."""
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("power() is defined for real tensors only")
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / np.conj(out),), "sqrt")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * np.conj(out),), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / np.conj(a.data),), "log")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def gelu(a):
    """Exact (erf) GELU on a real tensor."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def split_gelu(z):
    """GELU applied separately to real and imaginary parts."""
    return make_complex(gelu(real(z)), gelu(imag(z)))


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), backward, "softmax")


def scale(a, c):
    """Multiply by a constant array (no gradient to the constant)."""
    a = as_tensor(a)
    c = np.asarray(c)
    return _make(a.data * c, (a,), lambda g: (g * np.conj(c),), "scale")


def stop_gradient(a):
    return Tensor(as_tensor(a).data)


# -- reductions and shape ---------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    def backward(g):
        out = np.zeros(a.shape, dtype=np.result_type(g.dtype, a.dtype))
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "getitem")


def pad(a, pad_width):
    """Zero padding; ``pad_width`` as for ``np.pad``."""
    a = as_tensor(a)
    pad_width = [tuple(p) for p in pad_width]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _make(np.pad(a.data, pad_width), (a,), lambda g: (g[sl],), "pad")


def crop(a, slices):
    """Basic slicing with a cheap backward."""
    a = as_tensor(a)
    slices = tuple(slices)

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        out[slices] = g
        return (out,)

    return _make(a.data[slices], (a,), backward, "crop")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if bd.ndim == 1:
                ga = np.multiply.outer(g, np.conj(bd))
            elif ad.ndim == 2 and g.ndim > 2:
                # shared left matrix: contract the batch axes directly
                gm = np.moveaxis(g, -2, 0).reshape(g.shape[-2], -1)
                bm = np.moveaxis(np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:]), -2, 0)
                ga = gm @ np.conj(bm.reshape(bd.shape[-2], -1)).T
            else:
                ga = g @ np.conj(np.swapaxes(bd, -1, -2))
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.multiply.outer(np.conj(ad), g)
            elif bd.ndim == 2 and g.ndim > 2:
                # shared right matrix (weights applied to a batch of tokens)
                am = np.broadcast_to(ad, g.shape[:-1] + ad.shape[-1:]).reshape(-1, ad.shape[-1])
                gb = np.conj(am).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def _stack_ri(z):
    return np.concatenate([z.real, z.imag], axis=-1)


def _unstack_ri(r):
    d = r.shape[-1] // 2
    return r[..., :d] + 1j * r[..., d:]


def attention(q, k, v, scale):
    """softmax(Re(q^H k) * scale) @ v over the last two axes (..., L, d).

    Computed on stacked (re, im) real arrays, which is what makes the score
    and value products plain real matrix multiplies.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    qs, ks, vs = _stack_ri(q.data), _stack_ri(k.data), _stack_ri(v.data)
    scores = (qs @ np.swapaxes(ks, -1, -2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    A = np.exp(scores)
    A /= A.sum(axis=-1, keepdims=True)
    out = _unstack_ri(A @ vs).astype(v.dtype)

    def backward(g):
        gs = _stack_ri(g)
        gv = _unstack_ri(np.swapaxes(A, -1, -2) @ gs)
        gA = gs @ np.swapaxes(vs, -1, -2)
        gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale
        gq = _unstack_ri(gS @ ks)
        gk = _unstack_ri(np.swapaxes(gS, -1, -2) @ qs)
        return gq, gk, gv

    return _make(out, (q, k, v), backward, "attention")


# -- convolution ------------------------------------------------------------

def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def _windows(xp, kernel, stride, dilation):
    """(B, C, Ho, Wo, kh, kw) strided view over an already padded input."""
    kh, kw = kernel
    dh, dw = dilation
    sh, sw = stride
    ext_h, ext_w = dh * (kh - 1) + 1, dw * (kw - 1) + 1
    v = sliding_window_view(xp, (ext_h, ext_w), axis=(2, 3))
    return v[:, :, ::sh, ::sw, ::dh, ::dw]


def conv_out_size(n, k, s, p, d=1):
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def _conv_fwd(xp, w, stride, dilation):
    cols = _windows(xp, w.shape[2:], stride, dilation)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, Co
    return out.transpose(0, 3, 1, 2)


def _conv_adjoint(gy, w, padded_shape, stride, dilation):
    """Scatter of ``gy`` through kernel ``w`` (plain, no conjugation): the data-side
    adjoint of ``_conv_fwd`` when ``w`` is passed conjugated."""
    B, _, Ho, Wo = gy.shape
    _, Ci, kh, kw = w.shape
    sh, sw = stride
    dh, dw = dilation
    out = np.zeros(padded_shape, dtype=np.result_type(gy.dtype, w.dtype))
    # (B, Ho, Wo, Ci, kh, kw)
    cols = np.tensordot(gy.transpose(0, 2, 3, 1), w, axes=([3], [0]))
    for i in range(kh):
        for j in range(kw):
            h0, w0 = i * dh, j * dw
            out[:, :, h0:h0 + sh * (Ho - 1) + 1:sh, w0:w0 + sw * (Wo - 1) + 1:sw] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _conv_wcorr(xp, gy, kernel, stride, dilation):
    """sum_p xp[i, s*p + d*k] * gy[o, p] -> (Co, Ci, kh, kw), no conjugation."""
    cols = _windows(xp, kernel, stride, dilation)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1):
    """Complex 2-D convolution (cross-correlation) on (B, C, H, W) inputs.

    ``padding`` is symmetric per axis, or ((top, bottom), (left, right)).
    """
    x, w = as_tensor(x), as_tensor(w)
    stride, dilation = _pair(stride), _pair(dilation)
    if isinstance(padding, (tuple, list)) and isinstance(padding[0], (tuple, list)):
        pads = tuple(tuple(p) for p in padding)
    else:
        ph, pw = _pair(padding)
        pads = ((ph, ph), (pw, pw))
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    xp = np.pad(x.data, ((0, 0), (0, 0)) + pads)
    kh, kw = w.shape[2:]
    ho = (xp.shape[2] - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    wo = (xp.shape[3] - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    if ho < 1 or wo < 1:
        raise ValueError("convolution output would be empty")
    wd = w.data
    out = _conv_fwd(xp, wd, stride, dilation)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)
    H, W = x.shape[2:]

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = _conv_adjoint(g, np.conj(wd), xp.shape, stride, dilation)
            gx = gxp[:, :, pads[0][0]:pads[0][0] + H, pads[1][0]:pads[1][0] + W]
        gw = _conv_wcorr(np.conj(xp), g, (kh, kw), stride, dilation) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out, parents, backward, "conv2d")


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0, dilation=1):
    """Transposed convolution; ``w`` has shape (C_in, C_out, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    stride, dilation = _pair(stride), _pair(dilation)
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {w.shape[0]}")
    B, _, H, W = x.shape
    kh, kw = w.shape[2:]
    full_h = (H - 1) * stride[0] + dilation[0] * (kh - 1) + 1 + oph
    full_w = (W - 1) * stride[1] + dilation[1] * (kw - 1) + 1 + opw
    wd = w.data
    full = _conv_adjoint(x.data, wd, (B, w.shape[1], full_h, full_w), stride, dilation)
    oh, ow = full_h - 2 * ph, full_w - 2 * pw
    if oh < 1 or ow < 1:
        raise ValueError("transposed convolution output would be empty")
    out = full[:, :, ph:ph + oh, pw:pw + ow]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        gfull = np.zeros(full.shape, dtype=g.dtype)
        gfull[:, :, ph:ph + oh, pw:pw + ow] = g
        gx = _conv_fwd(gfull, np.conj(wd), stride, dilation)[:, :, :H, :W] \
            if x.requires_grad else None
        # gw[o, i, k] = sum_p conj(x[o, p]) * gfull[i, s*p + d*k]
        gw = _conv_wcorr(gfull, np.conj(x.data), (kh, kw), stride, dilation) \
            if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(np.ascontiguousarray(out), parents, backward, "conv_transpose2d")


# -- spectral primitives ----------------------------------------------------

def rfft(a, n=None):
    """One-sided FFT of a real tensor along the last axis."""
    a = as_tensor(a)
    n = n or a.shape[-1]
    out = np.fft.rfft(a.data, n=n, axis=-1).astype(_complex_for(a.dtype))
    m = a.shape[-1]

    def backward(g):
        h = g.copy()
        h[..., 1:(n + 1) // 2] *= 0.5
        return (n * np.fft.irfft(h, n=n, axis=-1)[..., :m],)

    return _make(out, (a,), backward, "rfft")


def irfft(a, n):
    """Inverse of ``rfft`` (imaginary parts of DC and Nyquist are ignored)."""
    a = as_tensor(a)
    out = np.fft.irfft(a.data, n=n, axis=-1).astype(a.data.real.dtype)

    def backward(g):
        h = np.fft.rfft(g, n=n, axis=-1) / n
        h[..., 1:(n + 1) // 2] *= 2.0
        h[..., 0] = h[..., 0].real
        if n % 2 == 0:
            h[..., -1] = h[..., -1].real
        return (h,)

    return _make(out, (a,), backward, "irfft")


def frames(a, frame_length, hop):
    """Slice the last axis of a real tensor into overlapping frames (..., T, frame_length)."""
    a = as_tensor(a)
    n = a.shape[-1]
    count = (n - frame_length) // hop + 1
    view = sliding_window_view(a.data, frame_length, axis=-1)[..., ::hop, :][..., :count, :]

    def backward(g):
        return (overlap_add_array(g, hop, n),)

    return _make(np.ascontiguousarray(view), (a,), backward, "frames")


def overlap_add(a, hop, length=None):
    """Sum frames (..., T, L) back onto a signal; adjoint of ``frames``."""
    a = as_tensor(a)
    T, L = a.shape[-2:]
    length = length or (T - 1) * hop + L
    out = overlap_add_array(a.data, hop, length)

    def backward(g):
        view = sliding_window_view(g, L, axis=-1)[..., ::hop, :][..., :T, :]
        return (np.ascontiguousarray(view),)

    return _make(out, (a,), backward, "overlap_add")


def overlap_add_array(fr, hop, length):
    T, L = fr.shape[-2:]
    out = np.zeros(fr.shape[:-2] + (length,), dtype=fr.dtype)
    # frames t and t + r do not overlap when r * hop >= L
    r = -(-L // hop)
    for j in range(r):
        sub = fr[..., j::r, :]
        k = sub.shape[-2]
        if k == 0:
            continue
        start = j * hop
        stride = r * hop
        span = (k - 1) * stride + L
        if stride == L:
            out[..., start:start + k * L] += sub.reshape(fr.shape[:-2] + (k * L,))
        else:
            padded = np.zeros(fr.shape[:-2] + (k, stride), dtype=fr.dtype)
            padded[..., :L] = sub
            flat = padded.reshape(fr.shape[:-2] + (k * stride,))[..., :span]
            out[..., start:start + span] += flat
    return out


# -- gradient utilities -----------------------------------------------------

def grad(loss, params):
    """Gradients of a real scalar ``loss`` w.r.t. ``params`` (zeros if disconnected)."""
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    loss.backward()
    out = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


def numerical_grad(fn, arrays, eps=1e-4):
    """Central finite differences of scalar ``fn()`` w.r.t. each array in place.

    Complex arrays get ``dL/dx + i dL/dy``.
    """
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            dirs = (1, 1j) if arr.dtype.kind == "c" else (1,)
            for d in dirs:
                old = flat[i]
                flat[i] = old + eps * d
                hi = float(fn())
                flat[i] = old - eps * d
                lo = float(fn())
                flat[i] = old
                gflat[i] += d * (hi - lo) / (2 * eps)
        out.append(g)
    return out
