"""Optimization loop: segment sampling, AdamW over re/im coordinates, schedule, checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctensor as ct
from .dsp import CODEC_SAMPLE_RATE, Spectrogram, StftConfig, istft, normalize_waveform, read_wav, stft
from .losses import LossWeights, MultiResConfig, ae_loss, total_loss
from .model import Codec, build_ablation_ae, make_config, save_checkpoint

log = logging.getLogger(__name__)

SEGMENT_SECONDS = 0.680
MAX_PAD_FRACTION = 0.05


# -- segment sampling ---------------------------------------------------------

def sample_segment(audio, seg_len, rng):
    """Random crop of ``seg_len`` samples.

    Clips at least ``seg_len`` long are cropped without padding; shorter clips
    (down to 95% of ``seg_len``) are zero-padded at the end.
    """
    x = np.asarray(getattr(audio, "samples", audio), dtype=np.float64)
    n = len(x)
    if n < math.ceil((1 - MAX_PAD_FRACTION) * seg_len):
        raise ValueError(f"clip of {n} samples is shorter than 95% of the {seg_len}-sample segment")
    if n >= seg_len:
        start = int(rng.integers(0, n - seg_len + 1))
        return x[start:start + seg_len].copy()
    out = np.zeros(seg_len)
    out[:n] = x
    return out


# -- optimizer ----------------------------------------------------------------

def _real_view(a):
    return a.view(a.real.dtype) if a.dtype.kind == "c" else a


class AdamW:
    """Decoupled weight decay Adam on the real coordinates of (complex) parameters."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.99), eps=1e-8, weight_decay=7e-4):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros(_real_view(p.data).shape, np.float64) for p in self.params]
        self.v = [np.zeros_like(m) for m in self.m]
        self.t = 0

    def step(self, grads=None, lr=None):
        lr = self.lr if lr is None else lr
        grads = [p.grad for p in self.params] if grads is None else grads
        for p, g in zip(self.params, grads):
            if g is not None and not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter of shape {p.shape}")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            x = _real_view(p.data)
            if self.weight_decay:
                x *= (1 - lr * self.weight_decay)
            if g is None:
                continue
            gr = _real_view(np.ascontiguousarray(g, dtype=p.dtype)).astype(np.float64)
            m *= b1
            m += (1 - b1) * gr
            v *= b2
            v += (1 - b2) * gr * gr
            x -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(x.dtype)

    def state_dict(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def optimizer_step(params, grads, state: AdamW, lr):
    state.step(grads, lr)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place to global norm <= max_norm; returns (norm, clipped)."""
    norm = math.sqrt(sum(float((np.abs(g) ** 2).sum()) for g in grads if g is not None))
    if max_norm is not None and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for g in grads:
            if g is not None:
                g *= s
        return norm, True
    return norm, False


# -- schedule -----------------------------------------------------------------

@dataclass
class ScheduleConfig:
    peak: float = 3e-4
    warmup: int = 100
    total: int = 10000
    gamma: float = 1.0
    final_ratio: float = 0.01


def lr_schedule(step, cfg: ScheduleConfig):
    """Linear warm-up to peak, then warped cosine decay to peak/100."""
    if step < cfg.warmup:
        return cfg.peak * step / cfg.warmup
    span = max(cfg.total - cfg.warmup, 1)
    tau = min(max((step - cfg.warmup) / span, 0.0), 1.0)
    r = cfg.final_ratio
    return cfg.peak * (r + (1 - r) * 0.5 * (1 + math.cos(math.pi * tau ** cfg.gamma)))


# -- convergence --------------------------------------------------------------

class ConvergenceDetector:
    """Signals a stop after ``patience`` consecutive epochs without a new best mean loss."""

    def __init__(self, patience=3, min_delta=0.0):
        self.patience, self.min_delta = patience, min_delta
        self.best = math.inf
        self.stale = 0

    def update(self, epoch_loss):
        if epoch_loss < self.best - self.min_delta:
            self.best = epoch_loss
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    preset: str = "toy"
    bitrate: str = "6k"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 2
    segment_seconds: float = SEGMENT_SECONDS
    lr: float = 3e-4
    warmup: int = 100
    gamma: float = 1.0
    betas: tuple = (0.9, 0.99)
    weight_decay: float = 7e-4
    clip_norm: float = 10.0
    seed_step: int = 30
    weights: LossWeights = field(default_factory=LossWeights)
    resolutions: tuple = None
    log_every: int = 1
    checkpoint_every: int = 500
    patience: int = 3
    stop_on_convergence: bool = True
    model_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if d.get("resolutions") is not None:
            d["resolutions"] = tuple(tuple(r) for r in d["resolutions"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


class Trainer:
    def __init__(self, cfg: TrainConfig, clips, model: Codec = None):
        if not clips:
            raise ValueError("empty dataset")
        self.cfg = cfg
        self.clips = [np.asarray(getattr(c, "samples", c), dtype=np.float64) for c in clips]
        self.model = model or Codec(make_config(cfg.preset, cfg.bitrate, seed=cfg.seed, **cfg.model_overrides))
        self.model.train()
        self.rng = np.random.default_rng(cfg.seed)
        self.seg_len = int(round(cfg.segment_seconds * CODEC_SAMPLE_RATE))
        self.schedule = ScheduleConfig(cfg.lr, cfg.warmup, cfg.steps, cfg.gamma)
        self.opt = AdamW(self.model.parameters(), cfg.lr, cfg.betas, weight_decay=cfg.weight_decay)
        self.mr = MultiResConfig(cfg.resolutions) if cfg.resolutions else MultiResConfig()
        self.step_count = 0
        self.history = []
        self.events = []
        total = sum(len(c) for c in self.clips)
        self.epoch_steps = max(1, math.ceil(total / (self.seg_len * cfg.batch_size)))
        self.detector = ConvergenceDetector(cfg.patience)
        self._epoch_losses = []

    def batch(self):
        segs = []
        for _ in range(self.cfg.batch_size):
            clip = self.clips[int(self.rng.integers(len(self.clips)))]
            seg, _ = normalize_waveform(sample_segment(clip, self.seg_len, self.rng))
            segs.append(seg)
        return np.stack(segs)

    def _maybe_seed(self, x):
        q = self.model.quantizer
        if self.step_count == self.cfg.seed_step and not q.is_initialized:
            with ct.no_grad():
                z_e, _ = self.model.encode(x)
                q.seed(q.project_in(z_e))
            self.events.append({"step": self.step_count, "event": "codebook_seed"})

    def train_step(self):
        """One update; returns the log record."""
        x = self.batch()
        self._maybe_seed(x)
        q = self.model.quantizer
        q.set_progress(self.step_count / max(self.cfg.steps - 1, 1))
        out = self.model(x)
        loss, terms = total_loss(out["audio"], x, out["quant"], self.cfg.weights, self.mr,
                                 out["spec"], out["target_spec"])
        params = self.opt.params
        self.model.zero_grad()
        loss.backward()
        grads = [p.grad for p in params]
        norm, clipped = clip_grad_norm(grads, self.cfg.clip_norm)
        lr = lr_schedule(self.step_count, self.schedule)
        self.opt.step(grads, lr)
        rec = {"step": self.step_count, "lr": lr, "grad_norm": norm, "clipped": clipped, **terms}
        if clipped:
            log.debug("step %d: gradient norm %.3g clipped to %g", self.step_count, norm, self.cfg.clip_norm)
        self.step_count += 1
        self.history.append(terms["total"])
        self._epoch_losses.append(terms["total"])
        return rec

    def end_of_epoch(self):
        if len(self._epoch_losses) < self.epoch_steps:
            return False
        mean = float(np.mean(self._epoch_losses))
        self._epoch_losses = []
        return self.detector.update(mean)

    def run(self, out_dir=None, max_seconds=None):
        """Train until ``cfg.steps`` or convergence; writes logs and checkpoints when ``out_dir`` is set."""
        out = Path(out_dir) if out_dir else None
        fh = None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / "train_config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2))
            fh = open(out / "train_log.jsonl", "a")
        t0 = time.time()
        try:
            while self.step_count < self.cfg.steps:
                n_events = len(self.events)
                try:
                    rec = self.train_step()
                except FloatingPointError as exc:
                    log.error("aborting at step %d: %s", self.step_count, exc)
                    if fh:
                        fh.write(json.dumps({"step": self.step_count, "event": "abort", "reason": str(exc)}) + "\n")
                    raise
                if fh:
                    for ev in self.events[n_events:]:
                        fh.write(json.dumps(ev) + "\n")
                    if self.step_count % self.cfg.log_every == 0 or self.step_count == self.cfg.steps:
                        fh.write(json.dumps(rec) + "\n")
                        fh.flush()
                if out and self.step_count % self.cfg.checkpoint_every == 0:
                    self.checkpoint(out / "checkpoint.ckpt")
                if self.end_of_epoch() and self.cfg.stop_on_convergence:
                    self.events.append({"step": self.step_count, "event": "converged"})
                    if fh:
                        fh.write(json.dumps(self.events[-1]) + "\n")
                    break
                if max_seconds is not None and time.time() - t0 > max_seconds:
                    break
        finally:
            if fh:
                fh.close()
        if out:
            self.checkpoint(out / "checkpoint.ckpt")
        return self.model

    def checkpoint(self, path):
        """Write atomically, so the previous good checkpoint survives a crash mid-write."""
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        save_checkpoint(self.model, tmp, {"step": self.step_count, "train": self.cfg.to_dict()})
        os.replace(tmp, path)


def load_dataset(directory, min_seconds=0.95 * SEGMENT_SECONDS):
    paths = sorted(Path(directory).glob("*.wav"))
    clips = []
    for p in paths:
        audio = read_wav(p)
        if len(audio) >= min_seconds * CODEC_SAMPLE_RATE:
            clips.append(audio.samples)
        else:
            log.warning("skipping %s: shorter than a training segment", p)
    if not clips:
        raise ValueError(f"no usable WAV files in {directory}")
    return clips


def train(config: TrainConfig, dataset_dir, out_dir, max_seconds=None):
    trainer = Trainer(config, load_dataset(dataset_dir))
    trainer.run(out_dir, max_seconds)
    return trainer


# -- ablation autoencoders ----------------------------------------------------

AE_STFT = StftConfig(256, 256, 64)


def ae_input(segments, cfg: StftConfig = AE_STFT):
    """Batch of waveforms to a (B, 1, F, T) spectrogram with the Nyquist row and trailing frames cut to a multiple of 8."""
    spec = np.stack([stft(s, cfg).data[0] for s in segments])[:, None]
    f, t = spec.shape[2] // 8 * 8, spec.shape[3] // 8 * 8
    return spec[:, :, :f, :t].astype(ct.default_dtype())


def ae_reconstruct(ae, audio, cfg: StftConfig = AE_STFT):
    """Run one clip through an autoencoder in eval mode; the cropped bins and frames come back as zeros."""
    full = stft(audio, cfg).data[0]
    x = ae_input([audio], cfg)
    with ct.no_grad():
        y = ae(ct.Tensor(x)).data[0, 0]
    out = np.zeros_like(full)
    out[:y.shape[0], :y.shape[1]] = y
    return istft(Spectrogram(out[None], cfg), len(audio)).samples


@dataclass
class AERun:
    model: object
    history: list
    seconds: float


def train_ablation_ae(kind, clips, steps=1000, batch_size=4, lr=1e-3, seed=0, segment_seconds=SEGMENT_SECONDS,
                      hidden=None, max_seconds=None):
    """AdamW on the autoencoder objective over random segments; identical data order for every kind at a seed."""
    ae = build_ablation_ae(kind, hidden, seed)
    ae.train()
    opt = AdamW(ae.parameters(), lr)
    rng = np.random.default_rng(seed)
    seg_len = int(round(segment_seconds * CODEC_SAMPLE_RATE))
    clips = [np.asarray(getattr(c, "samples", c), dtype=np.float64) for c in clips]
    history, t0 = [], time.time()
    for _ in range(steps):
        segs = [normalize_waveform(sample_segment(clips[int(rng.integers(len(clips)))], seg_len, rng))[0]
                for _ in range(batch_size)]
        x = ct.Tensor(ae_input(segs))
        loss = ae_loss(ae(x), x)
        ae.zero_grad()
        loss.backward()
        opt.step([p.grad for p in opt.params])
        history.append(float(loss.data))
        if not np.isfinite(history[-1]):
            raise FloatingPointError(f"{kind} autoencoder diverged at step {len(history)}")
        if max_seconds is not None and time.time() - t0 > max_seconds:
            break
    ae.eval()
    return AERun(ae, history, time.time() - t0)
