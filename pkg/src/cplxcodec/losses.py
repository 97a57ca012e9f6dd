"""Training objective: multi-resolution mel L1, spectral convergence + complex L1, commitment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ctensor as ct
from .dsp import CODEC_SAMPLE_RATE, Spectrogram, StftConfig, mel_filterbank, stft_tensor

MEL_FLOOR = 1e-5
SILENCE_NORM = 1e-8


@dataclass(frozen=True)
class Resolution:
    n_fft: int
    hop: int
    win: int
    n_mels: int = 80

    def stft_config(self):
        return StftConfig(self.n_fft, self.win, self.hop)


DEFAULT_RESOLUTIONS = (Resolution(512, 64, 512, 80), Resolution(1024, 128, 1024, 80),
                       Resolution(2048, 256, 2048, 80))


@dataclass
class MultiResConfig:
    resolutions: tuple = DEFAULT_RESOLUTIONS
    sample_rate: int = CODEC_SAMPLE_RATE

    def __post_init__(self):
        self.resolutions = tuple(r if isinstance(r, Resolution) else Resolution(*r) for r in self.resolutions)
        if not self.resolutions:
            raise ValueError("need at least one resolution")
        for r in self.resolutions:
            if not r.hop < r.win:
                raise ValueError(f"hop {r.hop} must be below window {r.win}")


@dataclass
class LossWeights:
    mel: float = 1.0
    cplx: float = 1.0
    mrs: float = 1.0
    quant: float = 0.1

    def __post_init__(self):
        if min(self.mel, self.cplx, self.mrs, self.quant) < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def multipliers(self):
        return {"mel": 80 * self.mel, "gen": 80 * self.cplx, "mrs": 50 * self.mrs, "quant": self.quant}


_MEL_CACHE = {}


def _mel_weights(res: Resolution, sr):
    key = (res, sr)
    if key not in _MEL_CACHE:
        _MEL_CACHE[key] = mel_filterbank(res.n_mels, res.stft_config(), sr).weights
    return _MEL_CACHE[key]


def _audio(x):
    if isinstance(x, ct.Tensor):
        return x
    x = x.samples if hasattr(x, "samples") else x
    return ct.Tensor(np.asarray(x, dtype=ct.real_dtype()))


def _check_lengths(pred, target):
    if pred.shape[-1] != target.shape[-1]:
        raise ValueError(f"length mismatch: {pred.shape[-1]} vs {target.shape[-1]}")


def _spec(x, res):
    return stft_tensor(x, res.stft_config())


def mel_l1(pred, target, cfg: MultiResConfig = None):
    """Mean over resolutions of mean |log(1e-5 + mel_p) - log(1e-5 + mel_t)|."""
    cfg = cfg or MultiResConfig()
    pred, target = _audio(pred), _audio(target)
    _check_lengths(pred, target)
    total = 0.0
    for res in cfg.resolutions:
        W = ct.Tensor(_mel_weights(res, cfg.sample_rate).astype(ct.real_dtype()))
        lp = ct.log(W @ ct.modulus(_spec(pred, res)) + MEL_FLOOR)
        lt = ct.log(W @ ct.modulus(_spec(target, res)) + MEL_FLOOR)
        total = ct.mean(ct.modulus(lp - lt)) + total
    return total * (1.0 / len(cfg.resolutions))


def mrs_loss(pred, target, cfg: MultiResConfig = None):
    """Sum over resolutions of spectral convergence plus mean complex L1.

    A resolution whose target has Frobenius norm below 1e-8 contributes only
    its complex L1 term.
    """
    cfg = cfg or MultiResConfig()
    pred, target = _audio(pred), _audio(target)
    _check_lengths(pred, target)
    total = 0.0
    for res in cfg.resolutions:
        sp, st = _spec(pred, res), _spec(target, res)
        term = ct.mean(ct.modulus(st - sp))
        t_norm = float(np.sqrt((np.abs(st.data) ** 2).sum()))
        if t_norm >= SILENCE_NORM:
            diff = ct.modulus(st) - ct.modulus(sp)
            term = term + frobenius(diff) * (1.0 / t_norm)
        total = term + total
    return total


def frobenius(x):
    """Frobenius norm of a real tensor; subgradient 0 at the origin."""
    x = ct.as_tensor(x)
    n = np.sqrt((np.abs(x.data) ** 2).sum())

    def backward(g):
        return (g * x.data / n if n > 0 else np.zeros_like(x.data),)

    return ct._make(np.asarray(n, dtype=x.data.real.dtype), (x,), backward, "frobenius")


def gen_loss(pred_spec, target_spec):
    """Mean complex L1 between two spectrograms of identical shape."""
    p = pred_spec.data if isinstance(pred_spec, Spectrogram) else pred_spec
    t = target_spec.data if isinstance(target_spec, Spectrogram) else target_spec
    p, t = ct.as_tensor(p), ct.as_tensor(t)
    if p.shape != t.shape:
        raise ValueError(f"spectrogram shapes differ: {p.shape} vs {t.shape}")
    return ct.mean(ct.modulus(p - t))


def total_loss(pred, target, quant=None, weights: LossWeights = None, cfg: MultiResConfig = None,
               pred_spec=None, target_spec=None):
    """Weighted objective; returns (scalar tensor, {term: unweighted value}).

    ``quant`` may be a quantization result (its commitment loss already
    carries beta) or None.  The complex reconstruction term needs the two
    analysis spectrograms; it is skipped when they are not supplied.
    """
    weights = weights or LossWeights()
    mult = weights.multipliers
    terms = {"mel": mel_l1(pred, target, cfg), "mrs": mrs_loss(pred, target, cfg)}
    if pred_spec is not None and target_spec is not None:
        terms["gen"] = gen_loss(pred_spec, target_spec)
    if quant is not None:
        terms["quant"] = ct.as_tensor(quant.commitment_loss if hasattr(quant, "commitment_loss") else quant)
    total = 0.0
    for name, value in terms.items():
        total = value * mult[name] + total
    breakdown = {name: float(v.data) for name, v in terms.items()}
    bad = [n for n, v in breakdown.items() if not np.isfinite(v)]
    if bad:
        raise FloatingPointError(f"non-finite loss terms {bad}: {breakdown}")
    breakdown["total"] = float(total.data)
    return total, breakdown


def ae_loss(pred_spec, target_spec, sc_weight=0.2):
    """Autoencoder objective: mean squared complex error plus weighted complex spectral convergence."""
    p, t = ct.as_tensor(pred_spec), ct.as_tensor(target_spec)
    if p.shape != t.shape:
        raise ValueError(f"spectrogram shapes differ: {p.shape} vs {t.shape}")
    d = ct.modulus(p - t)
    t_norm = float(np.sqrt((np.abs(t.data) ** 2).sum()))
    loss = ct.mean(d * d)
    if t_norm >= SILENCE_NORM:
        loss = loss + frobenius(d) * (sc_weight / t_norm)
    return loss
