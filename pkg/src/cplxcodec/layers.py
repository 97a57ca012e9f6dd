"""Complex-valued layers built on :mod:`cplxcodec.ctensor`."""

from __future__ import annotations

import io
import math
import struct

import numpy as np

from . import ctensor as ct


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, ct.Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name in params:
                if params[name].shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {params[name].shape}")
                params[name].data = np.asarray(arr, dtype=params[name].dtype).copy()
            else:
                self._set_buffer(name, arr)
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")

    def _set_buffer(self, dotted, arr):
        *path, leaf = dotted.split(".")
        mod = self
        for part in path:
            mod = mod[int(part)] if isinstance(mod, (list, tuple)) else getattr(mod, part)
        if leaf not in getattr(mod, "_buffers", ()):
            raise KeyError(f"unknown state entry {dotted}")
        old = getattr(mod, leaf)
        setattr(mod, leaf, np.asarray(arr, dtype=old.dtype).reshape(old.shape).copy())

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def count_parameters(module, complex_as=2):
    """Real degrees of freedom; each complex scalar counts ``complex_as`` times."""
    return sum(p.size * (complex_as if p.is_complex else 1) for p in module.parameters())


def complex_init(shape, fan_in, rng, gain=1.0):
    """Complex Gaussian weights with E|w|^2 = gain / fan_in."""
    std = gain / math.sqrt(2.0 * fan_in)
    w = rng.normal(0, std, shape) + 1j * rng.normal(0, std, shape)
    return w.astype(ct.default_dtype())


# -- convolution ------------------------------------------------------------

class ComplexConv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, dilation=1, bias=True,
                 transposed=False, output_padding=0, rng=None, gain=1.0):
        rng = rng or np.random.default_rng()
        self.kernel = ct._pair(kernel)
        self.stride = ct._pair(stride)
        self.padding = ct._pair(padding)
        self.dilation = ct._pair(dilation)
        self.output_padding = ct._pair(output_padding)
        self.transposed = transposed
        if min(self.kernel) < 1 or min(self.dilation) < 1:
            raise ValueError("kernel sizes and dilations must be positive")
        kh, kw = self.kernel
        shape = (c_in, c_out, kh, kw) if transposed else (c_out, c_in, kh, kw)
        fan_in = c_in * kh * kw
        if transposed:
            fan_in = max(1, c_in * kh * kw // (self.stride[0] * self.stride[1]))
        self.weight = ct.parameter(complex_init(shape, fan_in, rng, gain))
        self.bias = ct.parameter(np.zeros(c_out, ct.default_dtype())) if bias else None

    def forward(self, x):
        if self.transposed:
            return ct.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                       self.output_padding, self.dilation)
        return ct.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)

    def output_shape(self, f, t):
        if self.transposed:
            return tuple((n - 1) * s - 2 * p + d * (k - 1) + op + 1 for n, k, s, p, d, op in
                         zip((f, t), self.kernel, self.stride, self.padding, self.dilation,
                             self.output_padding))
        return tuple(ct.conv_out_size(n, k, s, p, d) for n, k, s, p, d in
                     zip((f, t), self.kernel, self.stride, self.padding, self.dilation))


# -- activations ------------------------------------------------------------

def modrelu(z, b):
    """ReLU(|z| + b) * z / |z| with per-channel real ``b`` on axis 1; 0 at z = 0."""
    z, b = ct.as_tensor(z), ct.as_tensor(b)
    zd = z.data
    bd = b.data.reshape((1, -1) + (1,) * (zd.ndim - 2)) if b.ndim == 1 and zd.ndim > 1 else b.data
    r = np.abs(zd)
    active = (r + bd > 0) & (r > 0)
    rs = np.where(r > 0, r, 1)
    factor = np.where(active, 1 + bd / rs, 0)
    out = zd * factor

    def backward(g):
        # w = z (1 + b/r):  dw/dz = 1 + b/(2r),  dw/dz* = -b z^2 / (2 r^3)
        dz = np.where(active, 1 + bd / (2 * rs), 0)
        dzc = np.where(active, -bd * zd * zd / (2 * rs ** 3), 0)
        gz = g * dz + np.conj(g) * dzc
        gb = np.where(active, (np.conj(zd / rs) * g).real, 0)
        if b.ndim == 1 and zd.ndim > 1:
            gb = gb.sum(axis=tuple(i for i in range(zd.ndim) if i != 1))
        return gz, gb

    return ct._make(out.astype(zd.dtype), (z, b), backward, "modrelu")


class ModReLU(Module):
    def __init__(self, channels, init=0.0):
        self.b = ct.parameter(np.full(channels, init, ct.real_dtype()))

    def forward(self, x):
        return modrelu(x, self.b)


class SplitGELU(Module):
    """GELU on real and imaginary parts separately (not phase-equivariant)."""

    def forward(self, x):
        return ct.split_gelu(x)


# -- normalization ----------------------------------------------------------

def inv_sqrt_2x2(vrr, vri, vii):
    """Closed-form inverse principal square root of [[vrr, vri], [vri, vii]] (SPD).

    Works on tensors or arrays; returns (wrr, wri, wii).
    """
    s = ct.sqrt(vrr * vii - vri * vri)
    t = ct.sqrt(vrr + vii + 2.0 * s)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, -vri * inv, (vrr + s) * inv


class ComplexBatchNorm2d(Module):
    """Per-channel whitening of (re, im) with a 2x2 covariance, then a 2x2 affine map."""

    _buffers = ("running_mean", "running_cov", "num_batches")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        rdt = ct.real_dtype()
        self.gamma_rr = ct.parameter(np.ones(channels, rdt))
        self.gamma_ri = ct.parameter(np.zeros(channels, rdt))
        self.gamma_ii = ct.parameter(np.ones(channels, rdt))
        self.beta = ct.parameter(np.zeros(channels, ct.default_dtype()))
        self.running_mean = np.zeros(channels, np.complex128)
        # rows: Vrr, Vri, Vii
        self.running_cov = np.tile(np.array([[1.0], [0.0], [1.0]]), (1, channels))
        self.num_batches = np.zeros(1, np.int64)

    def forward(self, x):
        x = ct.as_tensor(x)
        axes = (0,) + tuple(range(2, x.ndim))
        shape = (1, self.channels) + (1,) * (x.ndim - 2)
        xr, xi = ct.real(x), ct.imag(x)
        if self.training:
            n = x.size // self.channels
            if n < 2:
                raise ValueError("batch statistics need at least two values per channel")
            mr, mi = ct.mean(xr, axes, True), ct.mean(xi, axes, True)
            cr, ci = xr - mr, xi - mi
            vrr = ct.mean(cr * cr, axes, True) + self.eps
            vii = ct.mean(ci * ci, axes, True) + self.eps
            vri = ct.mean(cr * ci, axes, True)
            m = self.momentum
            mean = (mr.data + 1j * mi.data).reshape(-1)
            cov = np.stack([vrr.data.reshape(-1) - self.eps, vri.data.reshape(-1),
                            vii.data.reshape(-1) - self.eps])
            if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
                raise FloatingPointError("non-finite batch statistics")
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_cov = (1 - m) * self.running_cov + m * cov
            self.num_batches += 1
        else:
            mean = self.running_mean.reshape(shape)
            cr, ci = xr - mean.real.astype(xr.dtype), xi - mean.imag.astype(xr.dtype)
            rc = self.running_cov.astype(xr.dtype)
            vrr = ct.Tensor(rc[0].reshape(shape) + self.eps)
            vri = ct.Tensor(rc[1].reshape(shape))
            vii = ct.Tensor(rc[2].reshape(shape) + self.eps)
        wrr, wri, wii = inv_sqrt_2x2(vrr, vri, vii)
        yr = wrr * cr + wri * ci
        yi = wri * cr + wii * ci
        grr = ct.reshape(self.gamma_rr, shape)
        gri = ct.reshape(self.gamma_ri, shape)
        gii = ct.reshape(self.gamma_ii, shape)
        out = ct.make_complex(grr * yr + gri * yi, gri * yr + gii * yi)
        return out + ct.reshape(self.beta, shape)


class ComplexRMSNorm(Module):
    """x / sqrt(mean_c |x|^2 + eps) * scale, statistics over the channel axis."""

    def __init__(self, channels, eps=1e-5):
        self.eps = eps
        self.scale = ct.parameter(np.ones(channels, ct.default_dtype()))

    def forward(self, x):
        return complex_rmsnorm(x, self.scale, self.eps)


def complex_rmsnorm(x, scale, eps=1e-5):
    x = ct.as_tensor(x)
    ms = ct.mean(ct.abs2(x), 1, True)
    inv = ct.power(ms + eps, -0.5)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return x * inv * ct.reshape(ct.as_tensor(scale), shape)


# -- attention --------------------------------------------------------------

class AxialAttention(Module):
    """Multi-head self-attention along one spatial axis of (B, C, F, T).

    Scores are Re(q^H k) / sqrt(d_head); projections are bias-free so the
    layer commutes with a global phase rotation.
    """

    def __init__(self, dim, heads=4, axis="time", rng=None):
        rng = rng or np.random.default_rng()
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide dimension {dim}")
        if axis not in ("time", "freq"):
            raise ValueError("axis must be 'time' or 'freq'")
        self.dim, self.heads, self.axis = dim, heads, axis
        self.w_q = ct.parameter(complex_init((dim, dim), dim, rng))
        self.w_k = ct.parameter(complex_init((dim, dim), dim, rng))
        self.w_v = ct.parameter(complex_init((dim, dim), dim, rng))
        self.w_o = ct.parameter(complex_init((dim, dim), dim, rng))

    def forward(self, x):
        x = ct.as_tensor(x)
        B, C, F, T = x.shape
        if C != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {C}")
        perm = (0, 2, 3, 1) if self.axis == "time" else (0, 3, 2, 1)
        tokens = ct.transpose(x, perm)  # (B, other, L, C)
        other, L = tokens.shape[1], tokens.shape[2]
        h, d = self.heads, C // self.heads

        def split(t):
            return ct.transpose(ct.reshape(t, (B, other, L, h, d)), (0, 1, 3, 2, 4))

        q, k, v = (split(tokens @ w) for w in (self.w_q, self.w_k, self.w_v))
        out = ct.attention(q, k, v, 1.0 / math.sqrt(d))  # (B, other, h, L, d)
        out = ct.reshape(ct.transpose(out, (0, 1, 3, 2, 4)), (B, other, L, C)) @ self.w_o
        return ct.transpose(out, np.argsort(perm))

    def weights(self, x):
        """Attention weights (B, other, heads, L, L) for inspection."""
        with ct.no_grad():
            x = ct.as_tensor(x)
            B, C = x.shape[:2]
            perm = (0, 2, 3, 1) if self.axis == "time" else (0, 3, 2, 1)
            tok = x.data.transpose(perm)
            h, d = self.heads, C // self.heads
            sh = tok.shape[:3] + (h, d)
            q = (tok @ self.w_q.data).reshape(sh).transpose(0, 1, 3, 2, 4)
            k = (tok @ self.w_k.data).reshape(sh).transpose(0, 1, 3, 2, 4)
            return ct.softmax(ct.Tensor((np.conj(q) @ k.swapaxes(-1, -2)).real / math.sqrt(d))).data


# -- pooling and feed-forward ----------------------------------------------

def _pool_matrix(n_in, n_out, dtype):
    if not 1 <= n_out <= n_in:
        raise ValueError(f"cannot pool {n_in} positions to {n_out}")
    P = np.zeros((n_out, n_in), dtype)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-((i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def complex_avg_pool(x, output_size):
    """Adaptive average pooling of (B, C, F, T) to ``output_size`` = (F', T')."""
    x = ct.as_tensor(x)
    fo, to = output_size
    rdt = x.data.real.dtype
    pf = _pool_matrix(x.shape[2], fo, rdt)
    pt = _pool_matrix(x.shape[3], to, rdt)
    y = x
    if to != x.shape[3]:
        y = _block_mean(y, 3, to) if x.shape[3] % to == 0 else y @ ct.Tensor(pt.T.copy())
    if fo != x.shape[2]:
        y = _block_mean(y, 2, fo) if x.shape[2] % fo == 0 else ct.Tensor(pf) @ y
    return y


def _block_mean(x, axis, n_out):
    """Pool an evenly divisible axis by averaging consecutive blocks."""
    shape = list(x.shape)
    shape[axis:axis + 1] = [n_out, shape[axis] // n_out]
    return ct.mean(ct.reshape(x, tuple(shape)), axis + 1)


class ComplexFeedForward(Module):
    """Residual 1x1 conv -> split GELU -> 1x1 conv."""

    def __init__(self, dim, expansion=2, rng=None):
        self.fc1 = ComplexConv2d(dim, dim * expansion, 1, rng=rng)
        self.fc2 = ComplexConv2d(dim * expansion, dim, 1, rng=rng, gain=0.5)

    def forward(self, x):
        return x + self.fc2(ct.split_gelu(self.fc1(x)))


# -- stochastic depth -------------------------------------------------------

def drop_path(x, residual, p, training, rng=None):
    """x + residual, dropping the residual per batch element with probability p."""
    if not 0 <= p < 1:
        raise ValueError("drop probability must be in [0, 1)")
    if not training or p == 0:
        return x + residual
    rng = rng or np.random.default_rng()
    B = residual.shape[0]
    keep = (rng.random(B) >= p).astype(ct.as_tensor(residual).data.real.dtype) / (1 - p)
    return x + ct.scale(residual, keep.reshape((B,) + (1,) * (residual.ndim - 1)))


# -- dilated residual stack -------------------------------------------------

class ResidualBlock(Module):
    """conv -> norm -> modReLU -> conv, plus identity skip; spatial dims preserved."""

    def __init__(self, channels, dilation, kernel=(3, 3), rng=None):
        kh, kw = kernel
        dil = ct._pair(dilation)
        pad = (dil[0] * (kh - 1) // 2, dil[1] * (kw - 1) // 2)
        self.conv1 = ComplexConv2d(channels, channels, kernel, padding=pad, dilation=dil, rng=rng)
        self.norm = ComplexBatchNorm2d(channels)
        self.act = ModReLU(channels)
        self.conv2 = ComplexConv2d(channels, channels, kernel, padding=pad, dilation=dil, rng=rng,
                                   gain=0.5)
        self.dilation = dil
        self.kernel = (kh, kw)

    def forward(self, x):
        return x + self.conv2(self.act(self.norm(self.conv1(x))))


class DilatedResidualStack(Module):
    def __init__(self, channels, dilations, kernel=(3, 3), rng=None):
        self.blocks = [ResidualBlock(channels, d, kernel, rng) for d in dilations]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def receptive_field(self):
        """Receptive-field extent (freq, time) after each block."""
        rf = [1, 1]
        out = []
        for b in self.blocks:
            for a in range(2):
                rf[a] += 2 * b.dilation[a] * (b.kernel[a] - 1)
            out.append(tuple(rf))
        return out


# -- parameter serialization ------------------------------------------------

_TENSOR_MAGIC = b"CTNS"


def save_tensors(named, fh):
    """Write ``{name: array}`` as little-endian records of (name, shape, float32 payload).

    Complex arrays are stored as interleaved (re, im) float32 pairs.
    """
    fh.write(_TENSOR_MAGIC)
    fh.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        arr = np.asarray(arr)
        key = name.encode()
        is_complex = arr.dtype.kind == "c"
        fh.write(struct.pack("<H", len(key)) + key)
        fh.write(struct.pack("<BB", arr.ndim, int(is_complex)))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if is_complex:
            payload = np.stack([arr.real, arr.imag], axis=-1).astype("<f4")
        else:
            payload = arr.astype("<f4")
        fh.write(payload.tobytes())


def load_tensors(fh):
    if fh.read(4) != _TENSOR_MAGIC:
        raise ValueError("not a tensor container")
    (count,) = struct.unpack("<I", _read(fh, 4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read(fh, 2))
        name = _read(fh, n).decode()
        ndim, is_complex = struct.unpack("<BB", _read(fh, 2))
        shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
        size = int(np.prod(shape)) * (2 if is_complex else 1)
        flat = np.frombuffer(_read(fh, 4 * size), dtype="<f4")
        if is_complex:
            pairs = flat.reshape(tuple(shape) + (2,))
            out[name] = (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex64)
        else:
            out[name] = flat.reshape(shape).astype(np.float32)
    return out


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated tensor container")
    return buf


def tensors_to_bytes(named):
    buf = io.BytesIO()
    save_tensors(named, buf)
    return buf.getvalue()


def tensors_from_bytes(data):
    return load_tensors(io.BytesIO(data))
