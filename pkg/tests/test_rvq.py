import numpy as np
import pytest

from cplxcodec import ctensor as ct
from cplxcodec import rvq
from cplxcodec.rvq import Codebook, QuantizerConfig, ResidualVQ


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_hermitian_distance_equals_direct():
    rng = np.random.default_rng(0)
    x, e = crandn(rng, 50, 8), crandn(rng, 16, 8)
    direct = (np.abs(x[:, None, :] - e[None]) ** 2).sum(-1)
    assert np.allclose(rvq.hermitian_distances(x, e), direct, rtol=1e-5, atol=1e-10)


def test_assign_ties_pick_smallest_index():
    e = np.array([[1.0 + 0j], [1.0 + 0j], [-1.0 + 0j]])
    idx, dist = rvq.assign(np.array([[1.0 + 0j], [0j]]), e)
    assert list(idx) == [0, 0]
    assert dist[0] == 0.0
    with pytest.raises(ValueError):
        rvq.assign(np.array([[np.nan + 0j]]), e)


def test_nearest_centroid_empty_book():
    with pytest.raises(ValueError):
        Codebook(np.zeros((0, 2), complex))


def test_ema_update_oracle():
    rng = np.random.default_rng(1)
    book = Codebook(crandn(rng, 3, 2))
    c0, s0 = book.ema_counts.copy(), book.ema_sums.copy()
    feats = crandn(rng, 5, 2)
    a = np.array([0, 0, 2, 2, 2])
    rvq.ema_update(book, a, feats, 0.9)
    counts = np.array([2, 0, 3.0])
    sums = np.stack([feats[:2].sum(0), np.zeros(2), feats[2:].sum(0)])
    assert np.allclose(book.ema_counts, 0.9 * c0 + 0.1 * counts)
    assert np.allclose(book.ema_sums, 0.9 * s0 + 0.1 * sums)
    assert np.allclose(book.centroids, book.ema_sums / book.ema_counts[:, None])


def test_decay_schedule():
    assert rvq.decay_schedule(0.0) == 0.98
    assert rvq.decay_schedule(1.0) == pytest.approx(0.999)
    with pytest.raises(ValueError):
        rvq.decay_schedule(1.5)


def test_refresh_only_touches_dead_codes():
    rng = np.random.default_rng(2)
    book = Codebook(crandn(rng, 4, 3))
    book.usage[:] = [5.0, 0.1, 5.0, 0.2]
    live = book.centroids[[0, 2]].copy()
    feats = crandn(rng, 10, 3)
    log = rvq.refresh_dead_codes(book, feats, rng, prob=1.0)
    assert sorted(k for k, _ in log) == [1, 3]
    assert np.array_equal(book.centroids[[0, 2]], live)
    for k, i in log:
        assert np.abs(book.centroids[k] - feats[i]).max() < 1e-2
        assert book.usage[k] > 0.9


def test_refresh_frequency():
    rng = np.random.default_rng(3)
    feats = crandn(rng, 4, 2)
    hits = 0
    for _ in range(10_000):
        book = Codebook(np.zeros((1, 2), complex))
        hits += len(rvq.refresh_dead_codes(book, feats, rng))
    assert 0.012 <= hits / 10_000 <= 0.018


def test_seed_codebook_spreads_over_clusters():
    rng = np.random.default_rng(4)
    means = 3 * crandn(rng, 8, 4)
    x = means[rng.integers(8, size=800)] + 0.01 * crandn(rng, 800, 4)
    book = rvq.seed_codebook(Codebook(np.zeros((8, 4), complex)), x, rng)
    idx, _ = rvq.assign(means, book.centroids)
    assert len(set(idx)) == 8
    small = rvq.seed_codebook(Codebook(np.zeros((8, 4), complex)), x[:3], rng, method="uniform")
    assert small.size == 8
    with pytest.raises(ValueError):
        rvq.seed_codebook(book, x[:0], rng)


def test_complex_gaussian_variance():
    z = rvq.complex_gaussian(np.random.default_rng(5), (200_000,), 0.1)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(0.01, rel=0.02)
    assert np.var(z.real) == pytest.approx(0.005, rel=0.02)


def test_codebook_stats():
    util, perp, norm = rvq.codebook_stats(np.array([10, 10, 0, 0]))
    assert util == 0.5 and perp == pytest.approx(2.0) and norm == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rvq.codebook_stats(np.zeros(3))


def _quantizer(seed=0, stages=3, K=16, D=4):
    cfg = QuantizerConfig(stages=stages, codebook_size=K, dim=D)
    return ResidualVQ(cfg, seed=seed)


def test_residual_telescoping_and_lookup():
    rng = np.random.default_rng(6)
    with ct.precision(np.complex128):
        q = _quantizer()
        z = crandn(rng, 2, 4, 9)
        q.seed(z)
        q.eval()
        res = q(ct.Tensor(z))
        recon = q.lookup(res.indices)
        x = z.transpose(0, 2, 1).reshape(-1, 4)
        # x = sum of chosen centroids + final residual, up to rounding
        chosen = sum(q.books[m].centroids[res.indices[m].reshape(-1)] for m in range(3))
        assert np.abs(chosen + res.final_residual - x).max() < 1e-12
        assert np.allclose(recon, res.quantized.data)
        assert res.residual_norms[0] >= res.residual_norms[-1]


def test_straight_through_gradient_is_identity():
    rng = np.random.default_rng(7)
    with ct.precision(np.complex128):
        q = _quantizer()
        z0 = crandn(rng, 1, 4, 6)
        q.seed(z0)
        q.eval()
        z = ct.parameter(z0 + 0.01 * crandn(rng, 1, 4, 6))
        w = crandn(rng, 1, 4, 6)
        out = q(z)
        (g,) = ct.grad(ct.tsum(ct.real(out.quantized * ct.Tensor(np.conj(w)))), [z])
        assert np.allclose(g, w)
        # the commitment term is beta * mean ||z - q||^2; its gradient is 2 beta (z - q) / N
        (gc,) = ct.grad(out.commitment_loss, [z])
        qd = out.quantized.data
        assert np.allclose(gc, 2 * 0.05 * (z.data - qd) / 6)

        def commit():
            return q(z).commitment_loss.data

        num = ct.numerical_grad(commit, [z.data], eps=1e-6)[0]
        assert np.allclose(gc, num, rtol=1e-4, atol=1e-9)


def test_uninitialized_quantizer():
    q = _quantizer()
    z = ct.Tensor(np.ones((1, 4, 3), np.complex64))
    out = q(z)  # training: pass-through until seeded
    assert np.array_equal(out.quantized.data, z.data)
    q.eval()
    with pytest.raises(RuntimeError):
        q(z)


def test_lookup_rejects_bad_indices():
    q = _quantizer()
    with pytest.raises(ValueError):
        q.lookup(np.zeros((2, 1, 3), np.int64))
    with pytest.raises(ValueError):
        q.lookup(np.full((3, 1, 3), 16))


def test_projection_shapes():
    cfg = QuantizerConfig(stages=2, codebook_size=8, dim=6)
    q = ResidualVQ(cfg, in_dim=3 * 5, seed=1)
    z_e = ct.Tensor(np.ones((2, 3, 5, 7), np.complex64))
    z = q.project_in(z_e)
    assert z.shape == (2, 6, 7)
    assert q.project_out(z, 3, 5).shape == (2, 3, 5, 7)
    with pytest.raises(ValueError):
        q.project_in(ct.Tensor(np.ones((2, 2, 5, 7), np.complex64)))


def test_codebook_checkpoint_round_trip():
    import io

    rng = np.random.default_rng(8)
    books = [Codebook(crandn(rng, 4, 2)) for _ in range(2)]
    fh = io.BytesIO()
    rvq.save_codebooks(books, fh)
    fh.seek(0)
    back = rvq.load_codebooks(fh)
    assert len(back) == 2
    for a, b in zip(books, back):
        assert np.allclose(a.centroids, b.centroids, atol=1e-6)
