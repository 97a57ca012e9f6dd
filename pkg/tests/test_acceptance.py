"""Acceptance suite: one PASS/FAIL line per criterion, printed even under output capture.

Criteria 9 and 10 train models and are marked slow; deselect them with ``-m "not slow"``.
"""

import time

import numpy as np
import pytest

from cplxcodec import bitstream as bs
from cplxcodec import ctensor as ct
from cplxcodec import layers as L
from cplxcodec import losses, metrics, rvq
from cplxcodec import model as M
from cplxcodec import trainer as T
from cplxcodec.dsp import StftConfig, istft, stft
from cplxcodec.losses import MultiResConfig, Resolution
from cplxcodec.rvq import QuantizerConfig, ResidualVQ
from cplxcodec.synth import speech_like
from test_layers import LAYERS, PHIS, _Pool, crandn, fd_check_module

PAPER_PARAMS = 2_347_621


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
        assert ok, f"criterion {n}: {detail}"

    return emit


def checked(fn):
    """Run a checker that asserts; return (ok, message)."""
    try:
        fn()
        return True, "ok"
    except AssertionError as exc:
        return False, str(exc).splitlines()[0][:160]


# 1 ---------------------------------------------------------------------------

def test_01_bitrate_arithmetic(report):
    got = {}
    for rate in ("6k", "12k"):
        cfg = M.make_config("paper", rate)
        q = cfg.quantizer
        header = bs.StreamHeader(24000, cfg.stft.n_fft, cfg.stft.hop_length, cfg.time_stride, q.stages,
                                 q.codebook_size, 1, 1)
        got[rate] = (cfg.token_rate, header.token_rate, bs.bitrate(header))
    ok = got["6k"] == (46.875, 46.875, 6187.5) and got["12k"] == (93.75, 93.75, 12375.0)
    report(1, "bitrate arithmetic", ok, f"6k {got['6k'][0]} tok/s {got['6k'][2]} bps; "
                                       f"12k {got['12k'][0]} tok/s {got['12k'][2]} bps")


# 2 ---------------------------------------------------------------------------

def test_02_frame_arithmetic(report):
    n = round(0.680 * 24000)
    frames = StftConfig().frame_count(n)
    m = M.Codec(M.make_config("paper"))
    m.eval()
    with ct.no_grad():
        z_e, _ = m.encode(np.random.default_rng(0).normal(size=n) * 0.1)
    ok = n == 16320 and frames == 256 and z_e.shape[-1] == 32 and m.latent_frames(256) == 32
    report(2, "frame arithmetic", ok, f"{n} samples -> {frames} frames -> {z_e.shape[-1]} latent frames")


# 3 ---------------------------------------------------------------------------

def test_03_stft_round_trip(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=24000)
        y = istft(stft(x), len(x)).samples
        worst = max(worst, np.linalg.norm(y - x) / np.linalg.norm(x))
    report(3, "STFT round trip", worst < 1e-6, f"worst relative L2 {worst:.2e} over 20 signals")


# 4 ---------------------------------------------------------------------------

def test_04_phase_equivariance(report):
    rng = np.random.default_rng(4)
    makers = {
        "conv": lambda: L.ComplexConv2d(3, 4, 3, padding=1, bias=False, rng=rng),
        "modrelu": lambda: _biased(L.ModReLU(3), rng),
        "rmsnorm": lambda: L.ComplexRMSNorm(3),
        "attention": lambda: L.AxialAttention(3, 1, "time", rng),
    }
    worst = {}
    with ct.precision(np.complex128):
        for name, make in makers.items():
            m = make()
            z = crandn(rng, 2, 3, 5, 6)
            for phi in PHIS:
                rot = np.exp(1j * phi)
                a, b = m(ct.Tensor(rot * z)).data, rot * m(ct.Tensor(z)).data
                worst[name] = max(worst.get(name, 0.0), np.linalg.norm(a - b) / np.linalg.norm(b))
    ok = max(worst.values()) < 1e-5
    report(4, "phase equivariance", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def _biased(m, rng):
    m.b.data[:] = rng.uniform(-0.5, 0.5, m.b.shape)
    return m


# 5 ---------------------------------------------------------------------------

def _fd_loss(term, shape, seed, complex_input=False, n_points=10):
    """Central differences (step 1e-4) against the tape at random coordinates of the prediction."""
    rng = np.random.default_rng(seed)
    with ct.precision(np.complex128):
        x0 = crandn(rng, *shape) if complex_input else rng.normal(size=shape)
        x = ct.parameter(0.3 * x0)
        (g,) = ct.grad(term(x), [x])
        flat, gflat = x.data.reshape(-1), g.reshape(-1)
        for i in rng.choice(flat.size, n_points, replace=False):
            for d in ((1, 1j) if complex_input else (1,)):
                old = flat[i]
                flat[i] = old + 1e-4 * d
                hi = float(term(x).data)
                flat[i] = old - 1e-4 * d
                lo = float(term(x).data)
                flat[i] = old
                ana = gflat[i].real if d == 1 else gflat[i].imag
                assert ana == pytest.approx((hi - lo) / 2e-4, rel=1e-3, abs=1e-6), f"coordinate {i}"


def _loss_terms():
    rng = np.random.default_rng(50)
    mr = MultiResConfig((Resolution(128, 32, 128, 16), Resolution(256, 64, 256, 24)))
    target = 0.3 * rng.normal(size=1024)
    spec_t = 0.3 * crandn(rng, 1, 17, 9)
    with ct.precision(np.complex128):
        q = ResidualVQ(QuantizerConfig(stages=2, codebook_size=8, dim=4), seed=1)
        q.seed(crandn(rng, 1, 4, 12))
        q.eval()
    return {
        "mel_l1": (lambda p: losses.mel_l1(p, target, mr), (1024,), False),
        "mrs": (lambda p: losses.mrs_loss(p, target, mr), (1024,), False),
        "gen": (lambda p: losses.gen_loss(p, ct.Tensor(spec_t)), spec_t.shape, True),
        "commitment": (lambda p: q(p).commitment_loss, (1, 4, 12), True),
        "autoencoder": (lambda p: losses.ae_loss(p, ct.Tensor(spec_t)), spec_t.shape, True),
    }


def test_05_gradient_correctness(report):
    results = {}
    for name, (make, shape) in sorted(LAYERS.items()):
        results[name] = checked(lambda: fd_check_module(make, shape))
    results["avg_pool"] = checked(lambda: fd_check_module(lambda r: _Pool((4, 3)), (1, 2, 6, 8)))
    for i, (name, (term, shape, cplx)) in enumerate(_loss_terms().items()):
        results[f"loss:{name}"] = checked(lambda: _fd_loss(term, shape, 60 + i, cplx))
    bad = [f"{k} ({msg})" for k, (ok, msg) in results.items() if not ok]
    report(5, "finite-difference gradients", not bad,
           f"{len(results) - len(bad)}/{len(results)} layers and loss terms agree" + (f"; failing {bad}" if bad else ""))


# 6 ---------------------------------------------------------------------------

def _rvq_algebra():
    rng = np.random.default_rng(6)
    x, e = crandn(rng, 200, 8), crandn(rng, 32, 8)
    direct = (np.abs(x[:, None, :] - e[None]) ** 2).sum(-1)
    herm = rvq.hermitian_distances(x, e)
    assert np.abs(herm - direct).max() <= 1e-5 * max(1.0, np.abs(direct).max()), "Hermitian distance"
    with ct.precision(np.complex128):
        q = ResidualVQ(QuantizerConfig(stages=4, codebook_size=16, dim=4), seed=2)
        z = crandn(rng, 2, 4, 9)
        q.seed(z)
        q.eval()
        res = q(ct.Tensor(z))
        flat = z.transpose(0, 2, 1).reshape(-1, 4)
        chosen = sum(q.books[m].centroids[res.indices[m].reshape(-1)] for m in range(4))
        assert np.abs(chosen + res.final_residual - flat).max() < 1e-12, "telescoping"
        zp = ct.parameter(z + 0.01 * crandn(rng, 2, 4, 9))
        w = crandn(rng, 2, 4, 9)

        def probe():
            return ct.tsum(ct.real(q(zp).quantized * ct.Tensor(np.conj(w))))

        (g,) = ct.grad(probe(), [zp])
        assert np.allclose(g, w), "straight-through gradient is not the identity"
        # finite differences of the identity surrogate the estimator stands in for
        num = ct.numerical_grad(lambda: np.real(np.sum(zp.data * np.conj(w))), [zp.data], eps=1e-4)[0]
        assert np.allclose(g, num, rtol=1e-3, atol=1e-6), "straight-through vs finite differences"
        (gc,) = ct.grad(q(zp).commitment_loss, [zp])
        numc = ct.numerical_grad(lambda: q(zp).commitment_loss.data, [zp.data], eps=1e-4)[0]
        assert np.allclose(gc, numc, rtol=1e-3, atol=1e-6), "commitment gradient"


def test_06_rvq_algebra(report):
    ok, msg = checked(_rvq_algebra)
    report(6, "RVQ algebra", ok, "Hermitian distance, telescoping, straight-through" if ok else msg)


# 7 ---------------------------------------------------------------------------

def test_07_codebook_dynamics(report):
    rng = np.random.default_rng(7)
    K, D = 64, 8
    means = 3 * rvq.complex_gaussian(rng, (K, D), 1.0)
    q = ResidualVQ(QuantizerConfig(stages=1, codebook_size=K, dim=D), seed=7)

    def batch():
        x = means[rng.integers(K, size=1024)] + rvq.complex_gaussian(rng, (1024, D), 0.05)
        return ct.Tensor(x.T[None].astype(np.complex64))

    q.seed(batch())
    for step in range(500):
        q.set_progress(step / 499)
        out = q(batch())
    used = np.unique(out.indices).size
    idx, _ = rvq.assign(means, q.books[0].centroids)
    err = np.abs(q.books[0].centroids[idx] - means).max()
    ok = used == K and len(set(idx)) == K and err < 1e-2
    report(7, "codebook dynamics", ok, f"utilization {used}/{K}, worst mean error {err:.1e}")


# 8 ---------------------------------------------------------------------------

def test_08_refresh_frequency(report):
    rng = np.random.default_rng(8)
    feats = crandn(rng, 4, 2)
    hits = 0
    for _ in range(10_000):
        book = rvq.Codebook(np.zeros((1, 2), complex))
        hits += len(rvq.refresh_dead_codes(book, feats, rng))
    freq = hits / 10_000
    report(8, "dead-code refresh frequency", 0.012 <= freq <= 0.018, f"{freq:.4f} over 10^4 trials")


# 9 ---------------------------------------------------------------------------

OVERFIT_STEPS, OVERFIT_SECONDS = 5000, 1800


def smoothed_monotone(history, blocks=10):
    """Means over equal consecutive blocks must strictly decrease."""
    h = np.asarray(history)
    means = [b.mean() for b in np.array_split(h, blocks)]
    return all(b < a for a, b in zip(means, means[1:])), means


@pytest.mark.slow
def test_09_toy_overfit(report):
    clip = speech_like(10.0, seed=1).samples
    cfg = T.TrainConfig(steps=OVERFIT_STEPS, batch_size=1, lr=1e-3, warmup=50, stop_on_convergence=False)
    tr = T.Trainer(cfg, [clip])
    tr.run(max_seconds=OVERFIT_SECONDS)
    tr.model.eval()
    with ct.no_grad():
        y = tr.model.reconstruct(clip)
    score = metrics.si_sdr(y, clip)
    mono, means = smoothed_monotone(tr.history)
    report(9, "toy overfit through the quantizer", score > 5 and mono,
           f"SI-SDR {score:.2f} dB after {tr.step_count} steps; block-mean loss "
           f"{means[0]:.1f} -> {means[-1]:.1f}, monotone={mono}")


# 10 --------------------------------------------------------------------------

AE_STEPS = 1200


@pytest.mark.slow
def test_10_complex_vs_split_autoencoder(report):
    clips = [speech_like(15.0, seed=100 + i).samples for i in range(40)]  # 10 minutes
    held_out = [speech_like(5.0, seed=900 + i).samples for i in range(3)]
    t0 = time.time()
    scores = {}
    for kind in ("split", "cplx"):
        run = T.train_ablation_ae(kind, clips, steps=AE_STEPS, seed=0)
        scores[kind] = float(np.mean([metrics.lsd(T.ae_reconstruct(run.model, x), x) for x in held_out]))
    minutes = (time.time() - t0) / 60
    report(10, "complex AE beats split AE on LSD", scores["cplx"] < scores["split"],
           f"LSD cplx {scores['cplx']:.2f} dB vs split {scores['split']:.2f} dB, "
           f"{AE_STEPS} steps each, {minutes:.0f} min")


# 11 --------------------------------------------------------------------------

def test_11_parameter_counts(report):
    full = M.parameter_count(M.make_config("paper"), complex_as=1)
    ablated = M.parameter_count(M.make_config("paper", no_time_attention=True), complex_as=1)
    dev = (full - PAPER_PARAMS) / PAPER_PARAMS
    report(11, "parameter counts", ablated < full and abs(dev) <= 0.15,
           f"full {full:,} ({dev:+.1%} vs {PAPER_PARAMS:,}), without time attention {ablated:,}")


# 12 --------------------------------------------------------------------------

def test_12_bitstream(report):
    rng = np.random.default_rng(12)
    bad = 0
    for _ in range(1000):
        S, Tn = int(rng.integers(1, 13)), int(rng.integers(0, 60))
        K = int(rng.choice([2, 3, 64, 1000, 1024, 2048, 4096]))
        idx = rng.integers(0, K, size=(S, Tn))
        header = bs.StreamHeader(24000, 512, 64, 8, S, K, Tn, Tn * 512)
        data = bs.pack(idx, header)
        back = bs.unpack(data)
        nbytes = -(-S * Tn * int(np.ceil(np.log2(K))) // 8)
        if not (np.array_equal(back.indices, idx) and back.header == header
                and len(data) == bs.HEADER_SIZE + nbytes == bs.HEADER_SIZE + header.payload_bytes):
            bad += 1
    report(12, "bitstream round trip and payload size", bad == 0, f"{1000 - bad}/1000 exact")
