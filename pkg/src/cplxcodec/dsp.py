"""STFT analysis/synthesis, segment stitching, normalization, mel filters, WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from . import ctensor as ct

CODEC_SAMPLE_RATE = 24000
PEAK_TARGET = 0.95


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    win_length: int = 512
    hop_length: int = 64
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.n_fft:
            raise ValueError("need 0 < hop_length <= win_length <= n_fft")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_freqs(self):
        return self.n_fft // 2 + 1

    def frame_count(self, length):
        """Frames produced for ``length`` samples under centered reflect padding."""
        pad = 2 * (self.n_fft // 2)
        return (length + pad - self.n_fft) // self.hop_length + 1

    def window_array(self, dtype=np.float64):
        # periodic Hann, zero-padded to n_fft and centered
        n = np.arange(self.win_length)
        w = 0.5 - 0.5 * np.cos(2 * np.pi * n / self.win_length)
        lpad = (self.n_fft - self.win_length) // 2
        out = np.zeros(self.n_fft)
        out[lpad:lpad + self.win_length] = w
        return out.astype(dtype)


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = CODEC_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.shape[-1]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided complex STFT, shape (C, F, T), plus the analysis settings."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    length: int | None = None

    def __post_init__(self):
        if self.data.shape[-2] != self.config.n_freqs:
            raise ValueError(f"expected {self.config.n_freqs} bins, got {self.data.shape[-2]}")


@dataclass
class MelFilterbank:
    weights: np.ndarray
    fmin: float
    fmax: float


# -- differentiable core ----------------------------------------------------

def stft_tensor(x, cfg: StftConfig):
    """STFT of a real tensor (..., N) -> complex tensor (..., F, T)."""
    x = ct.as_tensor(x)
    n = x.shape[-1]
    half = cfg.n_fft // 2
    if n <= half:
        raise ValueError(f"signal of {n} samples too short for reflect padding of {half}")
    padded = reflect_pad(x, half)
    fr = ct.frames(padded, cfg.n_fft, cfg.hop_length)
    win = cfg.window_array(ct.real_dtype(np.result_type(x.dtype, np.complex64)))
    spec = ct.rfft(ct.scale(fr, win))
    return ct.transpose(spec, tuple(range(spec.ndim - 2)) + (spec.ndim - 1, spec.ndim - 2))


def reflect_pad(x, half):
    """Reflect-pad the last axis by ``half`` samples on each side."""
    x = ct.as_tensor(x)
    n = x.shape[-1]
    data = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(half, half)], mode="reflect")

    def backward(g):
        gx = g[..., half:half + n].copy()
        gx[..., 1:half + 1] += g[..., :half][..., ::-1]
        gx[..., n - 1 - half:n - 1] += g[..., half + n:][..., ::-1]
        return (gx,)

    return ct._make(data, (x,), backward, "reflect_pad")


def istft_tensor(spec, cfg: StftConfig, length):
    """Inverse of ``stft_tensor`` via squared-window overlap-add; output (..., length)."""
    spec = ct.as_tensor(spec)
    nd = spec.ndim
    T = spec.shape[-1]
    fr = ct.irfft(ct.transpose(spec, tuple(range(nd - 2)) + (nd - 1, nd - 2)), cfg.n_fft)
    win = cfg.window_array(fr.dtype)
    y = ct.overlap_add(ct.scale(fr, win), cfg.hop_length)
    norm = _window_sum(cfg, T)
    half = cfg.n_fft // 2
    seg = norm[half:half + length]
    if length > len(norm) - half:
        raise ValueError("requested length exceeds the frames available")
    if np.any(seg < 1e-8):
        raise ValueError("window power sum vanishes inside the signal")
    y = ct.crop(y, (Ellipsis, slice(half, half + length)))
    return ct.scale(y, (1.0 / seg).astype(y.dtype))


def _window_sum(cfg, T):
    w2 = cfg.window_array() ** 2
    return ct.overlap_add_array(np.broadcast_to(w2, (T, cfg.n_fft)), cfg.hop_length,
                                (T - 1) * cfg.hop_length + cfg.n_fft)


# -- array-level API --------------------------------------------------------

def _samples(audio):
    return audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio)


def stft(audio, cfg: StftConfig = StftConfig()) -> Spectrogram:
    x = np.asarray(_samples(audio), dtype=np.float64)
    if x.shape[-1] < cfg.win_length:
        raise ValueError(f"audio has {x.shape[-1]} samples, need at least {cfg.win_length}")
    if not np.isfinite(x).all():
        raise ValueError("audio contains non-finite samples")
    if x.ndim == 1:
        x = x[None]
    with ct.no_grad():
        data = stft_tensor(x, cfg).data
    return Spectrogram(data, cfg, x.shape[-1])


def istft(spec: Spectrogram, length=None, sample_rate=CODEC_SAMPLE_RATE) -> AudioBuffer:
    cfg = spec.config
    T = spec.data.shape[-1]
    if length is None:
        length = spec.length if spec.length is not None else (T - 1) * cfg.hop_length
    with ct.no_grad():
        y = istft_tensor(spec.data, cfg, length).data
    return AudioBuffer(y[0] if y.shape[0] == 1 else y, sample_rate)


def overlap_add_segments(segments, hop) -> AudioBuffer:
    """Stitch equal-length segments placed ``hop`` apart using complementary Hann fades."""
    if not segments:
        raise ValueError("no segments to stitch")
    arrays = [np.asarray(_samples(s), dtype=np.float64) for s in segments]
    sr = segments[0].sample_rate if isinstance(segments[0], AudioBuffer) else CODEC_SAMPLE_RATE
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("segments must have equal length")
    if not 0 < hop <= n:
        raise ValueError("hop must lie in (0, segment length]")
    if len(arrays) > 1 and 2 * hop < n:
        raise ValueError("hop below half the segment length makes fades overlap")
    if len(arrays) == 1:
        return AudioBuffer(arrays[0].copy(), sr)
    overlap = n - hop
    fade_in = np.ones(n)
    if overlap > 0:
        ramp = np.sin(0.5 * np.pi * (np.arange(overlap) + 0.5) / overlap) ** 2
        fade_in[:overlap] = ramp
    fade_out = fade_in[::-1]
    out = np.zeros((len(arrays) - 1) * hop + n)
    for i, a in enumerate(arrays):
        w = np.ones(n)
        if i > 0:
            w *= fade_in
        if i < len(arrays) - 1:
            w *= fade_out
        out[i * hop:i * hop + n] += w * a
    return AudioBuffer(out, sr)


def normalize_waveform(audio):
    """Peak-normalize to 0.95; returns (normalized, gain) with output = gain * input."""
    x = np.asarray(_samples(audio), dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty audio")
    peak = np.abs(x).max()
    gain = 1.0 if peak == 0 else PEAK_TARGET / peak
    y = x * gain
    if isinstance(audio, AudioBuffer):
        return AudioBuffer(y, audio.sample_rate), gain
    return y, gain


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, cfg: StftConfig, sr, fmin=0.0, fmax=None) -> MelFilterbank:
    """Triangular mel filters (peak 1, no area normalization), shape (n_mels, F)."""
    fmax = sr / 2 if fmax is None else fmax
    n_freqs = cfg.n_freqs
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_freqs:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_freqs} frequency bins")
    if not 0 <= fmin < fmax <= sr / 2:
        raise ValueError("need 0 <= fmin < fmax <= sr/2")
    freqs = np.linspace(0, sr / 2, n_freqs)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (center - lo)
    down = (hi - freqs) / (hi - center)
    weights = np.maximum(0.0, np.minimum(up, down))
    # narrow low filters can fall between bins; give them their nearest bin
    for m in np.flatnonzero(weights.max(axis=1) == 0):
        weights[m, np.argmin(np.abs(freqs - center[m, 0]))] = 1.0
    return MelFilterbank(weights, fmin, fmax)


# -- WAV I/O ----------------------------------------------------------------

class WavFormatError(ValueError):
    pass


def read_wav(path, expected_rate=CODEC_SAMPLE_RATE) -> AudioBuffer:
    """Read 16-bit PCM mono; other rates, widths or channel counts are rejected."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            raw = f.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(x, rate)


def write_wav(path, audio: AudioBuffer):
    x = np.clip(np.asarray(audio.samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(audio.sample_rate))
        f.writeframes(pcm.tobytes())
