"""Fidelity metrics: SI-SDR, log spectral distance, group-delay distortion."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import CODEC_SAMPLE_RATE, StftConfig, stft

SI_SDR_CAP = 100.0
MAG_FLOOR = 1e-8
GDD_MASK_DB = -40.0


@dataclass
class MetricReport:
    si_sdr: float
    lsd: float
    gdd: float
    duration: float

    def as_dict(self):
        return asdict(self)


def _pair(estimate, reference):
    e = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    r = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    return e, r


def si_sdr(estimate, reference):
    """Scale-invariant SDR in dB on zero-mean signals, capped at +100 dB."""
    e, r = _pair(estimate, reference)
    e = e - e.mean()
    r = r - r.mean()
    rr = np.dot(r, r)
    if rr <= 0:
        raise ValueError("reference is silent")
    target = (np.dot(e, r) / rr) * r
    noise = target - e
    num, den = np.dot(target, target), np.dot(noise, noise)
    if den <= num * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    return float(min(SI_SDR_CAP, 10 * np.log10(num / den)))


def _spectra(e, r, cfg):
    return stft(e, cfg).data[0], stft(r, cfg).data[0]


def lsd(estimate, reference, cfg: StftConfig = StftConfig()):
    """Frame-averaged RMS difference of log power spectra, in dB."""
    e, r = _pair(estimate, reference)
    se, sr = _spectra(e, r, cfg)
    le = 20 * np.log10(np.maximum(np.abs(se), MAG_FLOOR))
    lr = 20 * np.log10(np.maximum(np.abs(sr), MAG_FLOOR))
    return float(np.sqrt(((le - lr) ** 2).mean(axis=0)).mean())


def group_delay(spec, n_fft):
    """Per-frame group delay in samples between adjacent bins, shape (F-1, T)."""
    step = spec[1:] * np.conj(spec[:-1])
    return -np.angle(step) * n_fft / (2 * np.pi)


def _energy_mask(spec, floor_db=GDD_MASK_DB):
    mag = np.abs(spec)
    peak = mag.max(axis=0, keepdims=True)
    return (mag > peak * 10 ** (floor_db / 20)) & (mag > 0)


def gdd(estimate, reference, cfg: StftConfig = StftConfig()):
    """Group-delay distortion: masked mean |delta group delay| per frame, summed over frames.

    Group delay is the negative phase increment between neighbouring bins,
    in samples. The difference between the two signals is wrapped to one
    period, so a pure delay of d samples shows up as d on every bin pair.
    """
    e, r = _pair(estimate, reference)
    se, sr = _spectra(e, r, cfg)
    return gdd_from_spectra(se, sr, cfg.n_fft)


def gdd_from_spectra(se, sr, n_fft):
    """GDD on (F, T) complex spectra of the estimate and reference."""
    # phase increment of the estimate relative to the reference, wrapped
    inc_e = np.angle(se[1:] * np.conj(se[:-1]))
    inc_r = np.angle(sr[1:] * np.conj(sr[:-1]))
    wrapped = np.mod(inc_e - inc_r + np.pi, 2 * np.pi) - np.pi
    diff = np.abs(wrapped) * n_fft / (2 * np.pi)
    both = _energy_mask(se) & _energy_mask(sr)
    pair_mask = both[1:] & both[:-1]
    counts = pair_mask.sum(axis=0)
    per_frame = np.where(counts > 0, (diff * pair_mask).sum(axis=0) / np.maximum(counts, 1), 0.0)
    return float(per_frame.sum())


def evaluate(estimate, reference, cfg: StftConfig = StftConfig(), sample_rate=CODEC_SAMPLE_RATE):
    e, r = _pair(estimate, reference)
    return MetricReport(si_sdr(e, r), lsd(e, r, cfg), gdd(e, r, cfg), len(r) / sample_rate)


def write_csv(rows, path, extra_columns=()):
    """Write per-file rows (dicts with 'file' and metric keys); returns the column means."""
    base = ["file", "si_sdr", "lsd", "gdd", "duration"]
    columns = base + [c for c in extra_columns if c not in base]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return aggregate(rows, columns[1:])


def aggregate(rows, columns=("si_sdr", "lsd", "gdd", "duration")):
    out = {}
    for c in columns:
        vals = [float(r[c]) for r in rows if r.get(c) not in (None, "")]
        out[c] = float(np.mean(vals)) if vals else float("nan")
    return out
