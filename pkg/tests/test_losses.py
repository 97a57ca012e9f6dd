import numpy as np
import pytest

from cplxcodec import ctensor as ct
from cplxcodec import losses
from cplxcodec.dsp import stft
from cplxcodec.losses import LossWeights, MultiResConfig, Resolution
from cplxcodec.synth import speech_like

ONE_RES = MultiResConfig((Resolution(512, 64, 512, 80),))


@pytest.fixture(scope="module")
def clip():
    return speech_like(0.5, seed=7).samples


def test_mel_identity_symmetry(clip):
    rng = np.random.default_rng(0)
    other = clip + 0.05 * rng.normal(size=clip.shape)
    assert float(losses.mel_l1(clip, clip).data) == 0.0
    a = float(losses.mel_l1(clip, other).data)
    b = float(losses.mel_l1(other, clip).data)
    assert a > 0
    assert a == pytest.approx(b, rel=1e-6)


def test_mel_noise_vs_silence_monotone():
    rng = np.random.default_rng(1)
    n = rng.normal(size=12000)
    silence = np.zeros_like(n)
    vals = [float(losses.mel_l1(a * n, silence).data) for a in (1e-3, 1e-2, 1e-1)]
    assert 0 < vals[0] < vals[1] < vals[2]


def test_mrs_identity(clip):
    assert float(losses.mrs_loss(clip, clip).data) == 0.0


def test_mrs_sign_flip_only_complex_term(clip):
    res = ONE_RES.resolutions[0]
    st = stft(clip, res.stft_config()).data
    got = float(losses.mrs_loss(-clip, clip, ONE_RES).data)
    assert got == pytest.approx(2 * np.abs(st).mean(), rel=1e-5)


def test_mrs_half_scale_convergence_term(clip):
    for res in losses.DEFAULT_RESOLUTIONS:
        cfg = MultiResConfig((res,))
        st = stft(clip, res.stft_config()).data
        got = float(losses.mrs_loss(0.5 * clip, clip, cfg).data)
        l1 = 0.5 * np.abs(st).mean()
        assert got - l1 == pytest.approx(0.5, rel=1e-5)


def test_mrs_silent_target_skips_convergence():
    rng = np.random.default_rng(2)
    pred = 1e-3 * rng.normal(size=8000)
    got = float(losses.mrs_loss(pred, np.zeros_like(pred), ONE_RES).data)
    sp = stft(pred, ONE_RES.resolutions[0].stft_config()).data
    assert np.isfinite(got)
    assert got == pytest.approx(np.abs(sp).mean(), rel=1e-5)


def test_length_mismatch(clip):
    with pytest.raises(ValueError):
        losses.mel_l1(clip, clip[:-1])
    with pytest.raises(ValueError):
        losses.mrs_loss(clip, clip[:-1])


def test_gen_loss_cases():
    rng = np.random.default_rng(3)
    t = rng.normal(size=(1, 1, 9, 7)) + 1j * rng.normal(size=(1, 1, 9, 7))
    assert float(losses.gen_loss(t, t).data) == 0.0
    c = 0.3 - 0.4j
    assert float(losses.gen_loss(t + c, t).data) == pytest.approx(0.5, rel=1e-6)
    p = rng.normal(size=t.shape) + 1j * rng.normal(size=t.shape)
    oracle = np.mean(np.sqrt((p.real - t.real) ** 2 + (p.imag - t.imag) ** 2))
    assert float(losses.gen_loss(p, t).data) == pytest.approx(oracle, rel=1e-6)
    with pytest.raises(ValueError):
        losses.gen_loss(p[..., :-1], t)


def test_total_zero_and_linearity(clip):
    loss, terms = losses.total_loss(clip, clip, ct.Tensor(np.float32(0.0)))
    assert terms["total"] == 0.0
    rng = np.random.default_rng(4)
    pred = clip + 0.02 * rng.normal(size=clip.shape)
    _, t1 = losses.total_loss(pred, clip, None, LossWeights())
    _, t2 = losses.total_loss(pred, clip, None, LossWeights(mel=2.0))
    assert t2["mel"] == t1["mel"]
    assert t2["total"] - t1["total"] == pytest.approx(80 * t1["mel"], rel=1e-4)


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(mel=-1)
    with pytest.raises(ValueError):
        MultiResConfig(())
    with pytest.raises(ValueError):
        MultiResConfig(((512, 512, 512, 80),))


def test_non_finite_term_aborts(clip):
    bad = clip.copy()
    bad[10] = np.nan
    with pytest.raises(FloatingPointError):
        losses.total_loss(bad, clip)


def test_shift_by_one_hop_invariance():
    rng = np.random.default_rng(5)
    core_p, core_t = rng.normal(size=6000), rng.normal(size=6000)
    hop = 256  # a common multiple of every default hop

    def place(x, offset):
        out = np.zeros(6000 + 2 * 2048 + hop)
        out[2048 + offset:2048 + offset + len(x)] = x
        return out

    with ct.precision(np.complex128):
        a = losses.total_loss(place(core_p, 0), place(core_t, 0))[1]["total"]
        b = losses.total_loss(place(core_p, hop), place(core_t, hop))[1]["total"]
    assert b == pytest.approx(a, rel=1e-6)


def test_total_gradient_is_weighted_sum_of_terms():
    rng = np.random.default_rng(6)
    cfg = MultiResConfig((Resolution(256, 64, 256, 16),))
    with ct.precision(np.complex128):
        target = rng.normal(size=1024)
        w = ct.parameter(0.1 * rng.normal(size=1024))
        weights = LossWeights(mel=0.7, mrs=1.3)

        def pieces():
            pred = w * 1.0
            return losses.mel_l1(pred, target, cfg), losses.mrs_loss(pred, target, cfg)

        total, _ = losses.total_loss(w * 1.0, target, None, weights, cfg)
        (g_total,) = ct.grad(total, [w])
        mel, mrs = pieces()
        (g_mel,) = ct.grad(mel, [w])
        (g_mrs,) = ct.grad(mrs, [w])
        combo = 80 * 0.7 * g_mel + 50 * 1.3 * g_mrs
        assert np.allclose(g_total, combo, rtol=1e-10, atol=1e-12)
        # and the total gradient agrees with central differences on a few coordinates
        idx = rng.choice(1024, 5, replace=False)
        for i in idx:
            old = w.data[i]
            w.data[i] = old + 1e-6
            hi = losses.total_loss(w * 1.0, target, None, weights, cfg)[1]["total"]
            w.data[i] = old - 1e-6
            lo = losses.total_loss(w * 1.0, target, None, weights, cfg)[1]["total"]
            w.data[i] = old
            assert (hi - lo) / 2e-6 == pytest.approx(g_total[i], rel=1e-3, abs=1e-6)
