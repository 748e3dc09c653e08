import math

import numpy as np
import pytest
from scipy.stats import norm

from dve import autograd as ag
from dve.autograd import Tape, backward
from dve.encoders import Encoder, EncoderSpec, LatentEmbeddings, init_weights, param_leaves
from dve.losses import assemble_objective, bpwr_loss, bpwr_terms, kl_gaussian, score
from dve.sampling import TripletBatch, sample_batches

from conftest import central_difference, random_signed_graph


def make_batch(pos, neg):
    return TripletBatch(np.array(pos, dtype=np.int64).reshape(-1, 3), np.array(neg, dtype=np.int64).reshape(-1, 3),
                        0, 0, np.arange(len(pos) + len(neg)))


def loss_value(zs, zt, batch):
    t = Tape()
    return float(bpwr_loss(t.constant(zs), t.constant(zt), batch).value[0, 0])


def brute_bpwr(zs, zt, batch):
    f = lambda i, j: sum(zs[i][c] * zt[j][c] for c in range(zs.shape[1]))
    ls = lambda x: -math.log1p(math.exp(-x)) if x > 0 else x - math.log1p(math.exp(x))
    a = [-ls(f(i, j) - f(i, k)) for i, j, k in batch.pos.tolist()]
    b = [-ls(f(i, k) - f(i, r)) for i, k, r in batch.neg.tolist()]
    return sum(a) / len(a) + sum(b) / len(b)


def monte_carlo_kl(mu, ls, n, rng):
    sigma = np.exp(ls)
    z = mu + sigma * rng.standard_normal((n, len(mu)))
    lq = norm.logpdf(z, mu, sigma).sum(axis=1)
    lp = norm.logpdf(z).sum(axis=1)
    return float(np.mean(lq - lp))


def test_score_cases(rng):
    e0 = np.eye(3)
    assert score(e0, e0, 0, 0) == 1.0
    assert score(e0, e0, 0, 1) == 0.0
    a, b = rng.normal(size=(4, 64)), rng.normal(size=(4, 64))
    assert score(a, b, 1, 2) == pytest.approx(sum(x * y for x, y in zip(a[1], b[2])), abs=1e-12)
    with pytest.raises(IndexError):
        score(a, b, 0, 4)


def test_equal_scores_give_two_ln_two():
    z = np.zeros((5, 3))
    b = make_batch([(0, 1, 2), (3, 4, 0)], [(1, 2, 3)])
    assert abs(loss_value(z, z, b) - 2 * math.log(2)) <= 1e-12


def test_saturated_ranking_loss_vanishes():
    zs = np.array([[1.0], [0], [0], [0]])
    zt = np.array([[0.0], [50.0], [0.0], [-50.0]])
    b = make_batch([(0, 1, 2)], [(0, 2, 3)])
    assert loss_value(zs, zt, b) < 1e-20


def test_bpwr_matches_scalar_loop(rng):
    zs, zt = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    b = make_batch(rng.integers(0, 8, size=(10, 3)), rng.integers(0, 8, size=(6, 3)))
    assert abs(loss_value(zs, zt, b) - brute_bpwr(zs, zt, b)) <= 1e-10


def test_empty_kind_contributes_zero(rng):
    zs, zt = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    t = Tape()
    _, neg = bpwr_terms(t.constant(zs), t.constant(zt), make_batch([(0, 1, 2)], []))
    assert neg.value[0, 0] == 0.0
    with pytest.raises(ValueError):
        bpwr_loss(t.constant(zs), t.constant(zt), make_batch([], []))


def test_kl_closed_cases():
    t = Tape()
    assert kl_gaussian(t.constant(np.zeros((3, 4))), t.constant(np.zeros((3, 4)))).value[0, 0] == 0.0
    assert kl_gaussian(t.constant(np.ones((1, 1))), t.constant(np.zeros((1, 1)))).value[0, 0] == 0.5


def test_kl_monte_carlo_two_dims(rng):
    mu, ls = rng.normal(size=2), rng.normal(scale=0.5, size=2)
    t = Tape()
    kl = kl_gaussian(t.constant(mu[None]), t.constant(ls[None])).value[0, 0]
    assert abs(kl - monte_carlo_kl(mu, ls, 10**6, rng)) < 1e-2


def test_kl_averages_over_nodes(rng):
    mu, ls = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    t = Tape()
    whole = kl_gaussian(t.constant(mu), t.constant(ls)).value[0, 0]
    rows = [kl_gaussian(t.constant(mu[i:i + 1]), t.constant(ls[i:i + 1])).value[0, 0] for i in range(5)]
    assert whole == pytest.approx(np.mean(rows), abs=1e-12)


def test_kl_gradient(rng):
    mu, ls = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    t = Tape()
    kl = kl_gaussian(t.leaf(mu, name="mu"), t.leaf(ls, name="ls"))
    g = backward(t, kl)
    np.testing.assert_allclose(g["mu"], mu / 3, atol=1e-12)
    np.testing.assert_allclose(g["ls"], (np.exp(2 * ls) - 1) / 3, atol=1e-12)


def test_dve_zero_posterior_equal_scores_total():
    t = Tape()
    z = t.constant(np.zeros((4, 2)))
    zero = t.constant(np.zeros((4, 1)))
    lat = LatentEmbeddings(z, z, {"s": [(zero, zero)] * 2, "t": [(zero, zero)] * 2})
    br, total = assemble_objective("dve", lat, make_batch([(0, 1, 2)], [(0, 2, 3)]))
    assert abs(total.value[0, 0] - 2 * math.log(2)) <= 1e-12
    assert br.kl_source == 0.0 and br.kl_target == 0.0


def test_de_total_is_dve_total_minus_kl(rng):
    g = random_signed_graph(12, 30, rng)
    spec = EncoderSpec("dve", 12, 12, d1=6, d=3)
    w = init_weights(spec, 0)
    batch = next(sample_batches(g, 1000, 2))
    t = Tape()
    lat = Encoder(spec, g).forward(t, param_leaves(t, w), np.random.default_rng(0))
    dve, _ = assemble_objective("dve", lat, batch)
    de, _ = assemble_objective("de", lat, batch)
    assert de.kl_source == 0.0 and de.kl_target == 0.0
    assert de.total == pytest.approx(dve.total - dve.kl_source - dve.kl_target, abs=1e-12)


def test_kl_weight_scales_regularizer(rng):
    g = random_signed_graph(12, 30, rng)
    spec = EncoderSpec("dve", 12, 12, d1=6, d=3)
    w = init_weights(spec, 0)
    batch = next(sample_batches(g, 1000, 2))
    t = Tape()
    lat = Encoder(spec, g).forward(t, param_leaves(t, w), np.random.default_rng(0))
    full, _ = assemble_objective("dve", lat, batch)
    half, _ = assemble_objective("dve", lat, batch, kl_weight=0.5)
    assert half.kl_source == pytest.approx(0.5 * full.kl_source, rel=1e-12)
    assert half.bpwr_pos_term == full.bpwr_pos_term


def test_full_objective_gradient(rng):
    g = random_signed_graph(12, 20, np.random.default_rng(2))
    spec = EncoderSpec("dve", 12, 12, d1=8, d=4, fusion="concat_mlp")
    w = init_weights(spec, 3)
    enc = Encoder(spec, g)
    batch = next(sample_batches(g, 1000, 2))

    def objective():
        t = Tape()
        lat = enc.forward(t, param_leaves(t, w), np.random.default_rng(5))
        return t, assemble_objective("dve", lat, batch)[1]

    t, total = objective()
    grads = backward(t, total)
    for name in w:
        num = central_difference(lambda: float(objective()[1].value[0, 0]), w[name])
        err = np.max(np.abs(grads[name] - num) / np.maximum(np.abs(num), 1e-6))
        assert err < 1e-4, (name, err)
