"""Codec assembly: complex encoder, residual quantizer, mirrored decoder."""

from __future__ import annotations

import dataclasses
import io
import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import ctensor as ct
from . import layers as L
from .dsp import CODEC_SAMPLE_RATE, StftConfig, istft_tensor, stft_tensor
from .rvq import QuantizerConfig, ResidualVQ, load_codebooks, save_codebooks


@dataclass(frozen=True)
class StageSpec:
    c_out: int
    kernel: tuple
    stride: tuple
    padding: tuple


PAPER_STAGES = (
    StageSpec(48, (6, 6), (2, 2), (2, 2)),
    StageSpec(64, (6, 1), (2, 1), (2, 0)),
    StageSpec(96, (4, 4), (2, 2), (1, 1)),
    StageSpec(128, (4, 4), (2, 2), (1, 1)),
)
TOY_CHANNELS = (12, 16, 24, 32)
DILATIONS = ((1, 1), (3, 3), (3, 5), (3, 7), (1, 1))
BITRATE_STRIDE = {"6k": 8, "12k": 4}


@dataclass
class ModelConfig:
    preset: str = "paper"
    bitrate: str = "6k"
    stages: tuple = PAPER_STAGES
    stem_channels: int = 32
    stem_kernel: tuple = (3, 7)
    dilations: tuple = DILATIONS
    drop_path: float = 0.05
    heads: int = 4
    ff_expansion: int = 2
    freq_multiple: int = 16
    stft: StftConfig = field(default_factory=StftConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    no_time_attention: bool = False
    half_width: bool = False
    seed: int = 0

    @property
    def time_stride(self):
        return math.prod(s.stride[1] for s in self.stages)

    @property
    def freq_stride(self):
        return math.prod(s.stride[0] for s in self.stages)

    @property
    def padded_freqs(self):
        m = self.freq_multiple
        return -(-self.stft.n_freqs // m) * m

    @property
    def latent_freqs(self):
        return self.padded_freqs // self.freq_stride

    @property
    def latent_channels(self):
        return self.stages[-1].c_out

    @property
    def token_rate(self):
        return CODEC_SAMPLE_RATE / (self.stft.hop_length * self.time_stride)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stages"] = tuple(StageSpec(s["c_out"], tuple(s["kernel"]), tuple(s["stride"]),
                                      tuple(s["padding"])) for s in d["stages"])
        d["stem_kernel"] = tuple(d["stem_kernel"])
        d["dilations"] = tuple(tuple(x) for x in d["dilations"])
        d["stft"] = StftConfig(**d["stft"])
        d["quantizer"] = QuantizerConfig(**d["quantizer"])
        return cls(**d)


def _stride4_stages(stages):
    """12 kbps variant: the last stage keeps full time resolution (kernel 3, pad 1)."""
    last = stages[-1]
    return tuple(stages[:-1]) + (StageSpec(last.c_out, (last.kernel[0], 3), (last.stride[0], 1),
                                           (last.padding[0], 1)),)


def make_config(preset="toy", bitrate="6k", **overrides):
    """Paper-scale or desk-scale configuration for a bitrate preset ('6k' or '12k')."""
    if bitrate not in BITRATE_STRIDE:
        raise ValueError(f"unknown bitrate {bitrate!r}")
    if preset == "paper":
        stages = PAPER_STAGES
        kw = dict(stem_channels=32, stft=StftConfig(512, 512, 64),
                  quantizer=QuantizerConfig(stages=12, codebook_size=2048, dim=64))
    elif preset == "toy":
        stages = tuple(dataclasses.replace(s, c_out=c) for s, c in zip(PAPER_STAGES, TOY_CHANNELS))
        kw = dict(stem_channels=8, stft=StftConfig(256, 256, 64),
                  quantizer=QuantizerConfig(stages=4, codebook_size=64, dim=64))
    else:
        raise ValueError(f"unknown preset {preset!r}")
    if bitrate == "12k":
        stages = _stride4_stages(stages)
    kw.update(overrides)
    cfg = ModelConfig(preset=preset, bitrate=bitrate, stages=stages, **kw)
    if cfg.half_width:
        cfg.stages = tuple(dataclasses.replace(s, c_out=max(cfg.heads, s.c_out // 2)) for s in cfg.stages)
        cfg.stem_channels = max(1, cfg.stem_channels // 2)
    if cfg.time_stride != BITRATE_STRIDE[bitrate]:
        raise ValueError(f"stage strides give time stride {cfg.time_stride}, "
                         f"bitrate {bitrate} needs {BITRATE_STRIDE[bitrate]}")
    return cfg


# -- building blocks --------------------------------------------------------

class EncoderStage(L.Module):
    """Pooled 1x1 skip + strided main path (down, norm, act, conv, time attention, conv, 1x1)."""

    def __init__(self, c_in, spec: StageSpec, heads, time_attention, drop_p, rng):
        c = spec.c_out
        self.drop_p = drop_p
        self.skip = L.ComplexConv2d(c_in, c, 1, rng=rng)
        self.down = L.ComplexConv2d(c_in, c, spec.kernel, spec.stride, spec.padding, rng=rng)
        self.norm = L.ComplexBatchNorm2d(c)
        self.act = L.ModReLU(c)
        self.conv1 = L.ComplexConv2d(c, c, 3, padding=1, rng=rng)
        if time_attention:
            self.attn_norm = L.ComplexRMSNorm(c)
            self.attn = L.AxialAttention(c, heads, "time", rng)
        else:
            self.attn = None
        self.conv2 = L.ComplexConv2d(c, c, 3, padding=1, rng=rng)
        self.proj = L.ComplexConv2d(c, c, 1, rng=rng, gain=0.5)

    def forward(self, x, rng=None):
        h = self.conv1(self.act(self.norm(self.down(x))))
        if self.attn is not None:
            h = h + self.attn(self.attn_norm(h))
        main = self.proj(self.conv2(h))
        skip = self.skip(L.complex_avg_pool(x, main.shape[2:]))
        return L.drop_path(skip, main, self.drop_p, self.training, rng)


class DecoderStage(L.Module):
    """Mirror of an encoder stage without the pooled skip: time attention at the
    coarse input resolution (where the encoder stage ran it), then transposed-conv
    upsampling, norm, act and two convs."""

    def __init__(self, c_in, c_out, spec: StageSpec, output_padding, heads, time_attention, rng):
        if time_attention:
            self.attn_norm = L.ComplexRMSNorm(c_in)
            self.attn = L.AxialAttention(c_in, heads, "time", rng)
        else:
            self.attn = None
        self.up = L.ComplexConv2d(c_in, c_out, spec.kernel, spec.stride, spec.padding,
                                  transposed=True, output_padding=output_padding, rng=rng)
        self.norm = L.ComplexBatchNorm2d(c_out)
        self.act = L.ModReLU(c_out)
        self.conv1 = L.ComplexConv2d(c_out, c_out, 3, padding=1, rng=rng)
        self.conv2 = L.ComplexConv2d(c_out, c_out, 3, padding=1, rng=rng)
        self.proj = L.ComplexConv2d(c_out, c_out, 1, rng=rng)

    def forward(self, x):
        if self.attn is not None:
            x = x + self.attn(self.attn_norm(x))
        h = self.conv1(self.act(self.norm(self.up(x))))
        return self.proj(self.conv2(h))


class Bottleneck(L.Module):
    """Frequency-axis attention and a complex feed-forward block, both residual."""

    def __init__(self, dim, heads, expansion, rng):
        self.norm = L.ComplexRMSNorm(dim)
        self.attn = L.AxialAttention(dim, heads, "freq", rng)
        self.ff = L.ComplexFeedForward(dim, expansion, rng)

    def forward(self, x):
        return self.ff(x + self.attn(self.norm(x)))


def _output_padding(n_in, spec, axis):
    k, s, p = spec.kernel[axis], spec.stride[axis], spec.padding[axis]
    n_out = ct.conv_out_size(n_in, k, s, p)
    op = n_in - ((n_out - 1) * s - 2 * p + k)
    if not 0 <= op < s:
        raise ValueError(f"stage with kernel {k}, stride {s} cannot be mirrored for size {n_in}")
    return n_out, op


# -- the codec ----------------------------------------------------------------

class Codec(L.Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 7)
        self.spec_scale = 1.0 / math.sqrt((cfg.stft.window_array() ** 2).sum())
        self.res_stack = L.DilatedResidualStack(1, cfg.dilations, rng=rng)
        kh, kw = cfg.stem_kernel
        self.stem = L.ComplexConv2d(1, cfg.stem_channels, cfg.stem_kernel, padding=(kh // 2, kw // 2), rng=rng)
        time_attn = not cfg.no_time_attention
        chans = [cfg.stem_channels] + [s.c_out for s in cfg.stages]
        self.enc = [EncoderStage(chans[i], s, cfg.heads, time_attn, cfg.drop_path, rng)
                    for i, s in enumerate(cfg.stages)]
        C, Fl = cfg.latent_channels, cfg.latent_freqs
        self.enc_post = Bottleneck(C, cfg.heads, cfg.ff_expansion, rng)
        self.quantizer = ResidualVQ(cfg.quantizer, in_dim=C * Fl, rng=rng, seed=cfg.seed + 11)
        self.dec_pre = Bottleneck(C, cfg.heads, cfg.ff_expansion, rng)
        # output paddings from the padded frequency size and a stride-aligned time size
        f, t = cfg.padded_freqs, 4 * cfg.time_stride
        ops = []
        for s in cfg.stages:
            f_next, opf = _output_padding(f, s, 0)
            t_next, opt = _output_padding(t, s, 1)
            ops.append((opf, opt))
            f, t = f_next, t_next
        self.dec = [DecoderStage(chans[i + 1], chans[i], s, ops[i], cfg.heads, time_attn, rng)
                    for i, s in reversed(list(enumerate(cfg.stages)))]
        self.head = L.ComplexConv2d(cfg.stem_channels, 1, cfg.stem_kernel, padding=(kh // 2, kw // 2),
                                    rng=rng, gain=0.05)  # start near the target's scale, not 10x above it
        self.bypass_quantizer = False

    # -- shapes ---------------------------------------------------------------
    def latent_frames(self, n_frames):
        return -(-n_frames // self.cfg.time_stride)

    def demodulation(self, n_freqs, n_frames):
        """Unit-modulus factors exp(-2 pi i k t hop / n_fft), shape (F, T).

        Frames are analysed relative to their own start, so a steady tone at
        bin k turns by 2 pi k hop / n_fft per frame. Multiplying by these
        factors refers every frame to a common time origin, which makes
        steady components constant along time.
        """
        k = np.arange(n_freqs)[:, None]
        t = np.arange(n_frames)[None, :]
        turns = (k * t * self.cfg.stft.hop_length) % self.cfg.stft.n_fft / self.cfg.stft.n_fft
        return np.exp(-2j * np.pi * turns).astype(ct.default_dtype())

    def _prepare(self, spec):
        """(B, 1, F, T) -> demodulated, zero-padded (B, 1, F_pad, T_pad) tensor, scaled."""
        F, T = spec.shape[2:]
        Tp = self.latent_frames(T) * self.cfg.time_stride
        x = ct.scale(spec, self.demodulation(F, T) * self.spec_scale)
        return ct.pad(x, ((0, 0), (0, 0), (0, self.cfg.padded_freqs - F), (0, Tp - T)))

    # -- pipeline -------------------------------------------------------------
    def analyze(self, audio):
        """(B, N) real -> complex spectrogram tensor (B, 1, F, T)."""
        audio = ct.as_tensor(audio)
        spec = stft_tensor(audio, self.cfg.stft)
        return ct.reshape(spec, (spec.shape[0], 1) + spec.shape[1:])

    def encode_spec(self, spec):
        x = self._prepare(spec)
        x = self.res_stack(x)
        x = self.stem(x)
        for stage in self.enc:
            x = stage(x, self.rng)
        return self.enc_post(x)

    def encode(self, audio):
        """(B, N) waveform -> (latent z_e of shape (B, C, F', T'), target spectrogram)."""
        audio = np.atleast_2d(np.asarray(audio.samples if hasattr(audio, "samples") else audio))
        if audio.shape[-1] < self.cfg.stft.win_length:
            raise ValueError("input too short for one analysis frame")
        spec = self.analyze(audio.astype(ct.real_dtype()))
        return self.encode_spec(spec), spec

    def decode_latent(self, z_q, n_frames):
        """Latent (B, C, F', T') -> spectrogram tensor (B, 1, F, n_frames)."""
        C, Fl = self.cfg.latent_channels, self.cfg.latent_freqs
        if z_q.shape[1:3] != (C, Fl):
            raise ValueError(f"latent shape {z_q.shape} does not match ({C}, {Fl}, T)")
        x = self.dec_pre(z_q)
        for stage in self.dec:
            x = stage(x)
        x = self.head(x)
        x = ct.crop(x, (slice(None), slice(None), slice(0, self.cfg.stft.n_freqs), slice(0, n_frames)))
        F = self.cfg.stft.n_freqs
        return ct.scale(x, np.conj(self.demodulation(F, n_frames)) / self.spec_scale)

    def synthesize(self, spec, length):
        B = spec.shape[0]
        return istft_tensor(ct.reshape(spec, (B,) + spec.shape[2:]), self.cfg.stft, length)

    def forward(self, audio):
        """Full training pass on a (B, N) batch; returns a dict of tensors/results."""
        audio = np.atleast_2d(np.asarray(audio, dtype=ct.real_dtype()))
        z_e, target_spec = self.encode(audio)
        n_frames = target_spec.shape[-1]
        if self.bypass_quantizer:
            z_q, qres = z_e, None
        else:
            B, C, Fl, Tl = z_e.shape
            qres = self.quantizer(self.quantizer.project_in(z_e))
            z_q = self.quantizer.project_out(qres.quantized, C, Fl)
        pred_spec = self.decode_latent(z_q, n_frames)
        pred_audio = self.synthesize(pred_spec, audio.shape[-1])
        return {"audio": pred_audio, "spec": pred_spec, "target_spec": target_spec,
                "quant": qres, "latent": z_e}

    # -- token interface ------------------------------------------------------
    WINDOW_FRAMES = 256  # one 0.68 s training segment at hop 64

    @property
    def window_latents(self):
        return self.WINDOW_FRAMES // self.cfg.time_stride

    def _window_starts(self, n_latent):
        W, half = self.window_latents, self.window_latents // 2
        k = 1 if n_latent <= W else 1 + -(-(n_latent - W) // half)
        return [i * half for i in range(k)]

    def encode_tokens(self, audio):
        """Waveform (N,) -> (S, T') indices via half-overlapping windows; each
        latent frame takes its tokens from the window where it sits most centrally."""
        x = np.asarray(getattr(audio, "samples", audio), dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("expected a mono waveform")
        if len(x) < self.cfg.stft.win_length:
            raise ValueError("input too short for one analysis frame")
        s, W = self.cfg.time_stride, self.window_latents
        with ct.no_grad():
            spec = self.analyze(x[None].astype(ct.real_dtype())).data
            n_lat = self.latent_frames(spec.shape[-1])
            starts = self._window_starts(n_lat)
            need = (starts[-1] + W) * s
            spec = np.pad(spec, ((0, 0), (0, 0), (0, 0), (0, need - spec.shape[-1])))
            wins = np.concatenate([spec[..., a * s:(a + W) * s] for a in starts])
            idx = []
            for b in range(0, len(wins), 4):
                z = self.encode_spec(ct.Tensor(wins[b:b + 4]))
                idx.append(self.quantizer(self.quantizer.project_in(z)).indices)
            idx = np.concatenate(idx, axis=1)  # (S, K, W)
        half = W // 2
        j = np.arange(n_lat)
        k = np.clip((j - W // 4) // half, 0, len(starts) - 1)
        return idx[:, k, j - k * half]

    def decode_tokens(self, indices, length):
        """(S, T') indices -> waveform of ``length`` samples, windows crossfaded."""
        from .dsp import overlap_add_segments

        indices = np.asarray(indices)
        S, n_lat = indices.shape
        s, W, hop = self.cfg.time_stride, self.window_latents, self.cfg.stft.hop_length
        starts = self._window_starts(n_lat)
        padded = np.pad(indices, ((0, 0), (0, starts[-1] + W - n_lat)), mode="edge")
        C, Fl = self.cfg.latent_channels, self.cfg.latent_freqs
        seg_len = W * s * hop
        segs = []
        with ct.no_grad():
            for b in range(0, len(starts), 4):
                chunk = starts[b:b + 4]
                idx = np.stack([padded[:, a:a + W] for a in chunk], axis=1)
                zq = self.quantizer.lookup(idx).astype(ct.default_dtype())
                z = self.quantizer.project_out(ct.Tensor(zq), C, Fl)
                spec = self.decode_latent(z, W * s)
                segs.extend(self.synthesize(spec, seg_len).data.astype(np.float64))
        y = overlap_add_segments(segs, seg_len // 2 if len(segs) > 1 else seg_len).samples
        if len(y) < length:
            y = np.pad(y, (0, length - len(y)))
        return y[:length]

    def reconstruct(self, audio):
        """Inference-mode waveform round trip through the quantizer (or bypass).

        Inputs longer than one training window go through the same windowed
        path as the token interface, so attention cost stays bounded.
        """
        from .dsp import overlap_add_segments

        x = np.asarray(audio.samples if hasattr(audio, "samples") else audio, dtype=np.float64)
        seg_len = self.WINDOW_FRAMES * self.cfg.stft.hop_length
        if len(x) <= seg_len:
            with ct.no_grad():
                return self.forward(x[None])["audio"].data[0]
        if not self.bypass_quantizer:
            return self.decode_tokens(self.encode_tokens(x), len(x))
        half = seg_len // 2
        n_seg = 1 + -(-(len(x) - seg_len) // half)
        padded = np.pad(x, (0, (n_seg - 1) * half + seg_len - len(x)))
        wins = np.stack([padded[i * half:i * half + seg_len] for i in range(n_seg)])
        segs = []
        with ct.no_grad():
            for b in range(0, n_seg, 4):
                segs.extend(self.forward(wins[b:b + 4])["audio"].data.astype(np.float64))
        return overlap_add_segments(segs, half).samples[:len(x)]


def build_model(cfg: ModelConfig) -> Codec:
    return Codec(cfg)


def parameter_count(cfg: ModelConfig, complex_as=2):
    """Total parameters; a complex scalar counts as ``complex_as`` real degrees of freedom."""
    return L.count_parameters(Codec(cfg), complex_as)


# -- checkpoints --------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Codec, path, extra=None):
    """Zip container: config.json, params.bin (parameters + statistics), codebooks.bin."""
    state = {k: v for k, v in model.state_dict().items() if ".books." not in k}
    buf = io.BytesIO()
    save_codebooks(model.quantizer.books, buf)
    meta = {"config": model.cfg.to_dict(), "extra": extra or {}}
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(meta, indent=2))
        zf.writestr("params.bin", L.tensors_to_bytes(state))
        zf.writestr("codebooks.bin", buf.getvalue())


def load_checkpoint(path) -> Codec:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("config.json"))
            state = L.tensors_from_bytes(zf.read("params.bin"))
            books = load_codebooks(io.BytesIO(zf.read("codebooks.bin")))
        model = Codec(ModelConfig.from_dict(meta["config"]))
        model.load_state_dict(state)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if len(books) != len(model.quantizer.books):
        raise CheckpointError("codebook stage count does not match the config")
    model.quantizer.books = books
    return model


# -- ablation autoencoders ----------------------------------------------------

AE_WIDTHS = {"split": 36, "cplx": 22, "extra_cplx": 16}


class RealBatchNorm2d(L.Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum, self.eps = momentum, eps
        self.gamma = ct.parameter(np.ones(channels, ct.real_dtype()))
        self.beta = ct.parameter(np.zeros(channels, ct.real_dtype()))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        shape = (1, -1, 1, 1)
        if self.training:
            mu = ct.mean(x, (0, 2, 3), True)
            c = x - mu
            var = ct.mean(c * c, (0, 2, 3), True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
        else:
            c = x - self.running_mean.reshape(shape).astype(x.dtype)
            var = ct.Tensor(self.running_var.reshape(shape).astype(x.dtype))
        y = c * ct.power(var + self.eps, -0.5)
        return y * ct.reshape(self.gamma, shape) + ct.reshape(self.beta, shape)


class _RealConv(L.Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, transposed=False, output_padding=0, rng=None):
        kh, kw = ct._pair(kernel)
        shape = (c_in, c_out, kh, kw) if transposed else (c_out, c_in, kh, kw)
        fan_in = c_in * kh * kw
        self.weight = ct.parameter(rng.normal(0, math.sqrt(1.0 / fan_in), shape).astype(ct.real_dtype()))
        self.bias = ct.parameter(np.zeros(c_out, ct.real_dtype()))
        self.stride, self.padding, self.output_padding, self.transposed = stride, padding, output_padding, transposed

    def forward(self, x):
        if self.transposed:
            return ct.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)
        return ct.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class AblationAE(L.Module):
    """Mirrored autoencoder on a (B, 1, F, T) complex spectrogram.

    Three conv-activation-normalization blocks per side; ``kind="split"`` runs
    real layers on stacked (re, im) channels, the complex kinds use complex
    convolutions, 2x2-whitening batch norm and modReLU.
    """

    KERNEL, STRIDE, PAD = (4, 4), (2, 2), (1, 1)

    def __init__(self, kind="cplx", hidden=None, seed=0):
        if kind not in AE_WIDTHS:
            raise ValueError(f"unknown autoencoder kind {kind!r}")
        self.kind = kind
        self.hidden = hidden or AE_WIDTHS[kind]
        rng = np.random.default_rng(seed)
        h = self.hidden
        k, s, p = self.KERNEL, self.STRIDE, self.PAD
        if kind == "split":
            self.enc_convs = [_RealConv(c, h, k, s, p, rng=rng) for c in (2, h, h)]
            self.enc_norms = [RealBatchNorm2d(h) for _ in range(3)]
            self.dec_convs = [_RealConv(h, c, k, s, p, transposed=True, rng=rng) for c in (h, h, 2)]
            self.dec_norms = [RealBatchNorm2d(h) for _ in range(2)]
        else:
            self.enc_convs = [L.ComplexConv2d(c, h, k, s, p, rng=rng) for c in (1, h, h)]
            self.enc_norms = [L.ComplexBatchNorm2d(h) for _ in range(3)]
            self.enc_acts = [L.ModReLU(h) for _ in range(3)]
            self.dec_convs = [L.ComplexConv2d(h, c, k, s, p, transposed=True, rng=rng) for c in (h, h, 1)]
            self.dec_norms = [L.ComplexBatchNorm2d(h) for _ in range(2)]
            self.dec_acts = [L.ModReLU(h) for _ in range(2)]

    def _act(self, i, x, side):
        if self.kind == "split":
            return ct.relu(x)
        return (self.enc_acts if side == "enc" else self.dec_acts)[i](x)

    def forward(self, spec):
        """Complex spectrogram tensor (B, 1, F, T), F and T divisible by 8."""
        x = spec
        if self.kind == "split":
            x = ct.concat([ct.real(spec), ct.imag(spec)], axis=1)
        for i, (conv, norm) in enumerate(zip(self.enc_convs, self.enc_norms)):
            x = norm(self._act(i, conv(x), "enc"))
        for i, conv in enumerate(self.dec_convs):
            x = conv(x)
            if i < 2:
                x = self.dec_norms[i](self._act(i, x, "dec"))
        if self.kind == "split":
            x = ct.make_complex(x[:, 0:1], x[:, 1:2])
        return x


def build_ablation_ae(kind, hidden=None, seed=0):
    return AblationAE(kind, hidden, seed)
