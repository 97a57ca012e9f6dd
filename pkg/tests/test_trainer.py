import json

import numpy as np
import pytest

from cplxcodec import ctensor as ct
from cplxcodec import trainer as T
from cplxcodec.synth import speech_like

SEG = 16320


def test_sample_segment_exact_clip_is_returned_whole():
    x = np.arange(SEG, dtype=float)
    out = T.sample_segment(x, SEG, np.random.default_rng(0))
    assert np.array_equal(out, x)


def test_sample_segment_long_clip_contiguous():
    x = np.arange(10 * SEG, dtype=float)
    rng = np.random.default_rng(1)
    for _ in range(20):
        out = T.sample_segment(x, SEG, rng)
        assert len(out) == SEG
        assert np.all(np.diff(out) == 1)


def test_sample_segment_padding_bound_monte_carlo():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(int(np.ceil(0.95 * SEG)), 2 * SEG))
        x = np.ones(n)
        out = T.sample_segment(x, SEG, rng)
        worst = max(worst, float((out == 0).mean()))
    assert worst <= 0.05


def test_sample_segment_too_short():
    with pytest.raises(ValueError):
        T.sample_segment(np.ones(int(0.9 * SEG)), SEG, np.random.default_rng(0))


def _param(shape, complex_=True, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=shape) + (1j * rng.normal(size=shape) if complex_ else 0)
    return ct.parameter(data.astype(np.complex128 if complex_ else np.float64))


def test_adamw_zero_grad_no_decay_unchanged():
    p = _param((3, 4))
    before = p.data.copy()
    opt = T.AdamW([p], lr=1e-2, weight_decay=0.0)
    opt.step([np.zeros_like(p.data)])
    assert np.array_equal(p.data, before)


def test_adamw_first_step_is_lr_sign():
    p = _param((5,), complex_=False)
    before = p.data.copy()
    g = np.array([3.0, -0.2, 1e-3, -7.0, 0.5])
    opt = T.AdamW([p], lr=1e-3, weight_decay=0.0)
    opt.step([g])
    assert np.allclose(p.data - before, -1e-3 * np.sign(g), atol=1e-6 * 1e-3 + 1e-9)


def test_adamw_complex_coordinates_are_independent():
    p = _param((2,))
    before = p.data.copy()
    opt = T.AdamW([p], lr=1e-3, weight_decay=0.0)
    opt.step([np.array([2.0 - 0.5j, -1.0 + 4.0j])])
    step = p.data - before
    assert np.allclose(step, -1e-3 * np.array([1 - 1j, -1 + 1j]), atol=1e-9)


def test_adamw_weight_decay_only():
    p = _param((4,))
    before = p.data.copy()
    opt = T.AdamW([p], lr=1e-2, weight_decay=0.1)
    for k in range(1, 4):
        opt.step([np.zeros_like(p.data)])
        assert np.allclose(p.data, before * (1 - 1e-3) ** k, rtol=1e-12)


def test_adamw_zero_lr_is_identity():
    p = _param((6,))
    before = p.data.copy()
    T.AdamW([p]).step([np.ones_like(p.data)], lr=0.0)
    assert np.array_equal(p.data, before)


def test_adamw_rejects_non_finite():
    p = _param((2,))
    with pytest.raises(FloatingPointError):
        T.AdamW([p]).step([np.array([np.nan, 0])])


def test_clip_grad_norm():
    g = [np.array([3.0, 4.0]), np.array([0.0 + 12.0j])]
    norm, clipped = T.clip_grad_norm(g, 10.0)
    assert norm == pytest.approx(13.0)
    assert clipped
    assert np.sqrt(sum((np.abs(x) ** 2).sum() for x in g)) == pytest.approx(10.0)
    assert T.clip_grad_norm([np.ones(2)], 10.0)[1] is False


def test_lr_schedule_endpoints():
    cfg = T.ScheduleConfig(peak=3e-4, warmup=100, total=1000)
    assert T.lr_schedule(0, cfg) == 0.0
    assert T.lr_schedule(50, cfg) < T.lr_schedule(100, cfg)
    assert T.lr_schedule(100, cfg) == pytest.approx(3e-4)
    assert T.lr_schedule(1000, cfg) == pytest.approx(3e-6)
    lrs = [T.lr_schedule(s, cfg) for s in range(100, 1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_lr_schedule_warping():
    base = T.ScheduleConfig(warmup=10, total=110)
    warped = T.ScheduleConfig(warmup=10, total=110, gamma=2.0)
    assert T.lr_schedule(60, warped) > T.lr_schedule(60, base)
    assert T.lr_schedule(110, warped) == pytest.approx(T.lr_schedule(110, base))


def test_convergence_detector():
    d = T.ConvergenceDetector(patience=3)
    assert not d.update(5.0)
    assert not d.update(4.0)
    assert not d.update(4.5)
    assert not d.update(4.1)
    assert d.update(4.0)


def _tiny_trainer(seed=0, steps=3, **kw):
    clip = speech_like(1.0, seed=1).samples
    cfg = T.TrainConfig(steps=steps, batch_size=1, seed=seed, seed_step=1, warmup=2,
                        segment_seconds=0.17, stop_on_convergence=False, **kw)
    return T.Trainer(cfg, [clip])


def test_trainer_seeds_once_and_logs(tmp_path):
    tr = _tiny_trainer(steps=4, checkpoint_every=2)
    tr.run(tmp_path)
    events = [e for e in tr.events if e["event"] == "codebook_seed"]
    assert events == [{"step": 1, "event": "codebook_seed"}]
    lines = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    steps = [r["step"] for r in lines if "total" in r]
    assert steps == [0, 1, 2, 3]
    assert all({"mel", "mrs", "gen", "total", "lr", "grad_norm", "clipped"} <= set(r) for r in lines if "total" in r)
    assert (tmp_path / "checkpoint.ckpt").exists()


def test_trainer_deterministic():
    a = _tiny_trainer(seed=3)
    b = _tiny_trainer(seed=3)
    a.run()
    b.run()
    assert a.history == b.history


def test_trainer_empty_dataset():
    with pytest.raises(ValueError):
        T.Trainer(T.TrainConfig(), [])


def test_train_config_round_trip():
    cfg = T.TrainConfig(steps=7, resolutions=((256, 64, 256, 16),))
    back = T.TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ValueError):
        T.TrainConfig.from_dict({"nonsense": 1})
