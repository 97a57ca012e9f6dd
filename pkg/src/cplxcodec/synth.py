"""Synthetic speech-like test signals (no corpus ships with the package)."""

from __future__ import annotations

import numpy as np
from scipy import signal

from .dsp import CODEC_SAMPLE_RATE, AudioBuffer, PEAK_TARGET

VOWELS = ((730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480), (660, 1720, 2410))


def _formant_filter(x, formants, sr, bandwidth=90.0):
    y = np.zeros_like(x)
    for i, f in enumerate(formants):
        b, a = signal.iirpeak(f, f / bandwidth, fs=sr)
        y += signal.lfilter(b, a, x) / (i + 1)
    return y


NOISE_FLOOR = 2e-3  # roughly -54 dB below full scale, like a quiet room recording


def speech_like(duration=1.0, sample_rate=CODEC_SAMPLE_RATE, seed=0, noise_floor=NOISE_FLOOR):
    """Voiced syllables with gliding pitch and vowel formants, separated by short noise bursts.

    A faint white background keeps the spectrogram free of exact digital silence.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        syl = int(sample_rate * rng.uniform(0.12, 0.3))
        gap = int(sample_rate * rng.uniform(0.02, 0.08))
        m = min(syl, n - pos)
        t = np.arange(m) / sample_rate
        f0 = rng.uniform(90, 220) * (1 + rng.uniform(-0.2, 0.2) * t / max(t[-1], 1e-3)) if m else 0
        phase = 2 * np.pi * np.cumsum(np.broadcast_to(f0, (m,))) / sample_rate
        harmonics = sum(np.sin(k * phase) / k for k in range(1, 25) if k * np.max(f0) < sample_rate / 2)
        voiced = _formant_filter(np.asarray(harmonics, dtype=float), VOWELS[rng.integers(len(VOWELS))], sample_rate)
        env = np.sin(np.pi * np.arange(m) / max(m, 1)) ** 0.5
        out[pos:pos + m] += voiced * env * rng.uniform(0.5, 1.0)
        pos += m
        g = min(gap, n - pos)
        if g > 0:
            burst = rng.normal(0, 0.05, g) * np.hanning(g)
            out[pos:pos + g] += signal.lfilter([1, -0.9], [1], burst)
        pos += g
    peak = np.abs(out).max()
    if peak > 0:
        out *= PEAK_TARGET / peak
    if noise_floor > 0:
        out += noise_floor * rng.normal(size=n)
        out *= PEAK_TARGET / np.abs(out).max()
    return AudioBuffer(out, sample_rate)


def write_dataset(directory, n_clips=4, duration=15.0, seed=0):
    """Write ``n_clips`` synthetic WAV files; returns their paths."""
    from pathlib import Path

    from .dsp import write_wav

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clips):
        p = d / f"synth_{i:03d}.wav"
        write_wav(p, speech_like(duration, seed=seed + i))
        paths.append(p)
    return paths
