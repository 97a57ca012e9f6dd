"""Complex residual vector quantizer with EMA codebooks and dead-code refresh."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ctensor as ct
from .layers import Module, complex_init, load_tensors, save_tensors


@dataclass
class QuantizerConfig:
    stages: int = 12
    codebook_size: int = 2048
    dim: int = 64
    beta: float = 0.05
    decay_start: float = 0.98
    decay_end: float = 0.999
    dead_threshold: float = 0.9
    refresh_prob: float = 0.015
    refresh_noise: float = 1e-3
    seed_noise: float = 1e-3
    warmup_steps: int = 30
    laplace_eps: float = 1e-5

    def __post_init__(self):
        if self.stages < 1 or self.codebook_size < 1 or self.dim < 1:
            raise ValueError("stages, codebook_size and dim must be positive")
        if not (0 < self.decay_start < 1 and 0 < self.decay_end < 1):
            raise ValueError("EMA decay must lie in (0, 1)")
        if self.dead_threshold <= 0:
            raise ValueError("dead-code threshold must be positive")

    @property
    def bits_per_index(self):
        return max(1, math.ceil(math.log2(self.codebook_size)))


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, D) complex
    ema_counts: np.ndarray = None  # (K,)
    ema_sums: np.ndarray = None  # (K, D) complex
    usage: np.ndarray = None  # (K,)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.complex128)
        K, D = self.centroids.shape
        if K < 1:
            raise ValueError("codebook must hold at least one centroid")
        if self.ema_counts is None:
            self.ema_counts = np.ones(K)
        if self.ema_sums is None:
            self.ema_sums = self.centroids * self.ema_counts[:, None]
        if self.usage is None:
            self.usage = np.zeros(K)

    @property
    def size(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def copy(self):
        return Codebook(self.centroids.copy(), self.ema_counts.copy(), self.ema_sums.copy(),
                        self.usage.copy())


@dataclass
class QuantizationResult:
    quantized: ct.Tensor  # (B, D, T)
    indices: np.ndarray  # (S, B, T)
    commitment_loss: ct.Tensor
    residual_norms: np.ndarray  # (S,), mean ||r^(m)|| over vectors
    final_residual: np.ndarray = field(default=None, repr=False)  # (N, D)


# -- assignment -------------------------------------------------------------

def hermitian_distances(x, centroids):
    """d_k(x) = ||x||^2 + ||e_k||^2 - 2 Re(x^H e_k) for rows of ``x`` (N, D)."""
    x = np.atleast_2d(x)
    xx = (np.abs(x) ** 2).sum(axis=1, keepdims=True)
    ee = (np.abs(centroids) ** 2).sum(axis=1)
    cross = (np.conj(x) @ centroids.T).real
    return xx + ee[None, :] - 2 * cross


def assign(x, centroids, chunk=4096):
    """Nearest-centroid index and distance for every row of ``x``; ties -> smallest index."""
    x = np.atleast_2d(x)
    if not np.isfinite(x).all():
        raise ValueError("non-finite input to nearest-centroid search")
    idx = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for s in range(0, len(x), chunk):
        d = hermitian_distances(x[s:s + chunk], centroids)
        k = d.argmin(axis=1)  # argmin returns the first minimum
        idx[s:s + chunk] = k
        dist[s:s + chunk] = np.maximum(d[np.arange(len(k)), k], 0.0)
    return idx, dist


def nearest_centroid(x, book):
    if book.size == 0:
        raise ValueError("empty codebook")
    idx, dist = assign(np.asarray(x).reshape(1, -1), book.centroids)
    return int(idx[0]), float(dist[0])


# -- codebook learning -------------------------------------------------------

def decay_schedule(progress, start=0.98, end=0.999):
    """EMA decay as a linear ramp over training progress in [0, 1]."""
    if not 0 <= progress <= 1:
        raise ValueError("progress must lie in [0, 1]")
    return start + (end - start) * progress


def ema_update(book, assignments, features, decay, eps=1e-5):
    """One EMA step of counts, feature sums, centroids and usage (in place)."""
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    K = book.size
    assignments = np.asarray(assignments).reshape(-1)
    features = np.asarray(features).reshape(len(assignments), -1)
    counts = np.bincount(assignments, minlength=K).astype(np.float64)
    sums = np.zeros((K, book.dim), dtype=np.complex128)
    np.add.at(sums, assignments, features)
    book.ema_counts = decay * book.ema_counts + (1 - decay) * counts
    book.ema_sums = decay * book.ema_sums + (1 - decay) * sums
    book.usage = decay * book.usage + (1 - decay) * counts
    book.centroids = book.ema_sums / np.maximum(book.ema_counts, eps)[:, None]
    return book


def refresh_dead_codes(book, features, rng, threshold=0.9, prob=0.015, noise=1e-3):
    """Re-seed codes with usage <= threshold from random batch features.

    Returns a list of (code, feature_index) pairs that were refreshed.
    """
    features = np.asarray(features)
    if len(features) == 0:
        raise ValueError("refresh needs a non-empty batch")
    dead = np.flatnonzero(book.usage <= threshold)
    if dead.size == 0:
        return []
    chosen = dead[rng.random(dead.size) < prob]
    log = []
    for k in chosen:
        i = int(rng.integers(len(features)))
        e = features[i] + complex_gaussian(rng, (book.dim,), noise)
        book.centroids[k] = e
        book.ema_sums[k] = e
        book.ema_counts[k] = 1.0
        book.usage[k] = threshold + 1.0
        log.append((int(k), i))
    return log


def seed_codebook(book, embeddings, rng, noise=1e-3, usage=1.0, method="kmeans++"):
    """Replace every centroid by a sampled embedding plus complex Gaussian noise.

    ``method="kmeans++"`` draws each seed with probability proportional to its
    squared distance from the seeds already drawn; ``"uniform"`` draws uniformly.
    Fewer than K embeddings forces sampling with replacement.
    """
    x = np.asarray(embeddings, dtype=np.complex128)
    if len(x) == 0:
        raise ValueError("no embeddings to seed from")
    K = book.size
    if method == "uniform":
        picks = rng.choice(len(x), size=K, replace=len(x) < K)
    elif method == "kmeans++":
        picks = _dsquared_picks(x, K, rng)
    else:
        raise ValueError(f"unknown seeding method {method!r}")
    book.centroids = x[picks] + complex_gaussian(rng, (K, book.dim), noise)
    book.ema_sums = book.centroids.copy()
    book.ema_counts = np.ones(K)
    book.usage = np.full(K, float(usage))
    return book


def _dsquared_picks(x, K, rng):
    picks = [int(rng.integers(len(x)))]
    d2 = (np.abs(x - x[picks[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every embedding already chosen (or identical): fall back to uniform
            picks.append(int(rng.integers(len(x))))
            continue
        i = int(rng.choice(len(x), p=d2 / total))
        picks.append(i)
        d2 = np.minimum(d2, (np.abs(x - x[i]) ** 2).sum(axis=1))
    return np.array(picks)


def complex_gaussian(rng, shape, sigma):
    """CN(0, sigma^2 I): real and imaginary parts each with variance sigma^2 / 2."""
    if sigma == 0:
        return np.zeros(shape, np.complex128)
    s = sigma / math.sqrt(2.0)
    return rng.normal(0, s, shape) + 1j * rng.normal(0, s, shape)


def codebook_stats(counts, K=None):
    """(utilization, perplexity, perplexity / K) of an assignment histogram."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim == 1 and counts.dtype.kind == "f" and K is not None and len(counts) != K:
        counts = np.bincount(counts.astype(np.int64), minlength=K).astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty histogram")
    K = K or len(counts)
    p = counts[counts > 0] / total
    perplexity = float(np.exp(-(p * np.log(p)).sum()))
    utilization = float((counts > 0).sum() / K)
    return utilization, perplexity, perplexity / K


# -- the quantizer module ----------------------------------------------------

class ResidualVQ(Module):
    """Projection into code space, S-stage residual quantization, projection back."""

    _buffers = ("initialized", "step")

    def __init__(self, cfg: QuantizerConfig, in_dim=None, rng=None, seed=0):
        self.cfg = cfg
        self.in_dim = in_dim
        rng = rng or np.random.default_rng(seed)
        if in_dim is not None:
            self.w_in = ct.parameter(complex_init((cfg.dim, in_dim), in_dim, rng))
            self.w_out = ct.parameter(complex_init((in_dim, cfg.dim), cfg.dim, rng))
        K, D = cfg.codebook_size, cfg.dim
        self.books = [Codebook(np.zeros((K, D), np.complex128)) for _ in range(cfg.stages)]
        self.rng = np.random.default_rng(seed + 1)
        self.initialized = np.zeros(1, np.int64)
        self.step = np.zeros(1, np.int64)
        self.decay = cfg.decay_start
        self.events = []

    # projections --------------------------------------------------------
    def project_in(self, z_e):
        """(B, C, F, T) -> (B, D, T): merge frequency into channels, then W_in."""
        B, C, F, T = z_e.shape
        if C * F != self.in_dim:
            raise ValueError(f"C*F = {C * F} does not match projection input {self.in_dim}")
        return self.w_in @ ct.reshape(z_e, (B, C * F, T))

    def project_out(self, z_q, channels, freqs):
        B, _, T = z_q.shape
        return ct.reshape(self.w_out @ z_q, (B, channels, freqs, T))

    # schedule -----------------------------------------------------------
    def set_progress(self, progress):
        self.decay = decay_schedule(min(max(progress, 0.0), 1.0), self.cfg.decay_start,
                                    self.cfg.decay_end)

    @property
    def is_initialized(self):
        return bool(self.initialized[0])

    def seed(self, z):
        """Seed all stages from embeddings (B, D, T): stage m from the stage-m residuals."""
        x = _vectors(z)
        for book in self.books:
            seed_codebook(book, x, self.rng, self.cfg.seed_noise, self.cfg.dead_threshold + 1)
            idx, _ = assign(x, book.centroids)
            x = x - book.centroids[idx]
        self.initialized[0] = 1
        self.events.append(("seed", int(self.step[0])))

    # forward ------------------------------------------------------------
    def forward(self, z):
        z = ct.as_tensor(z)
        B, D, T = z.shape
        S = self.cfg.stages
        if not self.is_initialized:
            if not self.training:
                raise RuntimeError("codebooks are not initialized")
            zero = ct.Tensor(np.zeros((), z.data.real.dtype))
            norms = np.full(S, np.sqrt((np.abs(_vectors(z)) ** 2).sum(axis=1)).mean())
            return QuantizationResult(z, np.zeros((S, B, T), np.int64), zero, norms)
        x = _vectors(z).astype(np.complex128)
        residual = x.copy()
        quant = np.zeros_like(x)
        indices = np.empty((S, B * T), np.int64)
        norms = np.empty(S)
        for m, book in enumerate(self.books):
            norms[m] = np.sqrt((np.abs(residual) ** 2).sum(axis=1)).mean()
            idx, _ = assign(residual, book.centroids)
            indices[m] = idx
            chosen = book.centroids[idx]
            if self.training:
                ema_update(book, idx, residual, self.decay, self.cfg.laplace_eps)
                log = refresh_dead_codes(book, residual, self.rng, self.cfg.dead_threshold,
                                         self.cfg.refresh_prob, self.cfg.refresh_noise)
                if log:
                    self.events.append(("refresh", int(self.step[0]), m, len(log)))
            quant += chosen
            residual = residual - chosen
        q = quant.reshape(B, T, D).transpose(0, 2, 1).astype(z.dtype)
        # straight-through: forward value q, gradient identity w.r.t. z
        quantized = z + ct.Tensor(q - z.data)
        diff = z - ct.Tensor(q)
        commit = ct.tsum(ct.abs2(diff)) * (self.cfg.beta / (B * T))
        if self.training:
            self.step += 1
        return QuantizationResult(quantized, indices.reshape(S, B, T), commit, norms, residual)

    def lookup(self, indices):
        """Sum of stage centroids for an (S, B, T) index array -> (B, D, T) array."""
        indices = np.asarray(indices)
        S, B, T = indices.shape
        if S != self.cfg.stages:
            raise ValueError(f"expected {self.cfg.stages} stages, got {S}")
        if indices.min() < 0 or indices.max() >= self.cfg.codebook_size:
            raise ValueError("index out of range")
        out = np.zeros((B, T, self.cfg.dim), np.complex128)
        for m, book in enumerate(self.books):
            out += book.centroids[indices[m]]
        return out.transpose(0, 2, 1)

    # state ----------------------------------------------------------------
    def named_buffers(self, prefix=""):
        yield from super().named_buffers(prefix)
        for m, book in enumerate(self.books):
            for key in ("centroids", "ema_counts", "ema_sums", "usage"):
                yield f"{prefix}books.{m}.{key}", getattr(book, key)

    def _set_buffer(self, dotted, arr):
        parts = dotted.split(".")
        if len(parts) >= 3 and parts[-3] == "books":
            book = self.books[int(parts[-2])]
            old = getattr(book, parts[-1])
            setattr(book, parts[-1], np.asarray(arr, dtype=old.dtype).reshape(old.shape).copy())
        else:
            super()._set_buffer(dotted, arr)


def _vectors(z):
    """(B, D, T) tensor or array -> (B*T, D) rows ordered batch-major, then time."""
    data = z.data if isinstance(z, ct.Tensor) else np.asarray(z)
    B, D, T = data.shape
    return data.transpose(0, 2, 1).reshape(B * T, D)


def save_codebooks(books, fh):
    """Codebook checkpoint: per stage centroids, counts, usage (float32, little-endian)."""
    named = {}
    for m, b in enumerate(books):
        named[f"stage{m}.centroids"] = b.centroids
        named[f"stage{m}.counts"] = b.ema_counts
        named[f"stage{m}.usage"] = b.usage
    save_tensors(named, fh)


def load_codebooks(fh):
    named = load_tensors(fh)
    books = []
    m = 0
    while f"stage{m}.centroids" in named:
        c = named[f"stage{m}.centroids"].astype(np.complex128)
        counts = named[f"stage{m}.counts"].astype(np.float64)
        books.append(Codebook(c, counts, c * counts[:, None], named[f"stage{m}.usage"].astype(np.float64)))
        m += 1
    return books
