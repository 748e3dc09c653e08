import csv
import math

import numpy as np
import pytest

from dve.checkpoint import load_checkpoint
from dve.graph import generate_planted_sign_graph, split_edges
from dve.trainer import LOG_COLUMNS, DivergenceError, TrainConfig, train

from conftest import random_signed_graph


@pytest.fixture(scope="module")
def planted_train():
    return split_edges(generate_planted_sign_graph(seed=0), 0.8, seed=0).train


def small_config(**kw):
    base = dict(variant="dve", epochs=3, batch_size=40, d1=8, d=4, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_defaults():
    c = TrainConfig()
    assert (c.epochs, c.batch_size, c.learning_rate, c.dropout_rate, c.d1, c.d, c.n_gcn_layers) == \
        (200, 1000, 0.01, 0.2, 128, 64, 2)
    assert (c.rmsprop_decay, c.rmsprop_epsilon, c.fusion) == (0.9, 1e-8, "concat")


@pytest.mark.parametrize("kw", [{"n_gcn_layers": 0}, {"epochs": 0}, {"dropout_rate": 1.0}, {"learning_rate": 0},
                                {"variant": "sage"}, {"kl_weight": -1}])
def test_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw).validate()


def test_config_round_trip():
    c = small_config(fusion="concat_mlp")
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_bpwr_loss_drops_below_threshold(planted_train):
    res = train(planted_train, TrainConfig(variant="bpwr", epochs=50, seed=0))
    first = res.log_rows[0][LOG_COLUMNS.index("total")]
    assert 1.2 <= first <= 1.5
    assert abs(first - 2 * math.log(2)) < 0.01
    assert res.epoch_losses[-1] < 0.3


def test_determinism(tmp_path):
    g = random_signed_graph(20, 60, np.random.default_rng(0))
    a = train(g, small_config(checkpoint_every=1), tmp_path / "a")
    b = train(g, small_config(checkpoint_every=1), tmp_path / "b")
    assert a.log_rows == b.log_rows
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()


def test_outputs_and_log(tmp_path):
    g = random_signed_graph(20, 60, np.random.default_rng(0))
    res = train(g, small_config(epochs=4, checkpoint_every=2), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["checkpoint.bin", "checkpoint_epoch0002.bin", "train_log.csv"]
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert list(rows[0]) == list(LOG_COLUMNS)
    assert len(rows) == 4 * 2
    assert all(float(r["kl_source"]) > 0 for r in rows)
    spec, w, header = load_checkpoint(tmp_path / "checkpoint.bin")
    assert header["extra"]["epoch"] == 4
    for name in w:
        assert np.array_equal(w[name], res.weights[name])


def test_de_log_has_zero_kl():
    g = random_signed_graph(20, 60, np.random.default_rng(0))
    res = train(g, small_config(variant="de"))
    kl = [r[LOG_COLUMNS.index("kl_source")] for r in res.log_rows] + \
         [r[LOG_COLUMNS.index("kl_target")] for r in res.log_rows]
    assert all(v == 0.0 for v in kl)


@pytest.mark.parametrize("variant", ["dve", "de", "slve", "bpwr", "mf"])
def test_every_variant_trains(variant):
    g = random_signed_graph(20, 60, np.random.default_rng(0))
    res = train(g, small_config(variant=variant, epochs=2))
    zs, zt = res.embeddings()
    assert zs.shape == (20, 8) and np.all(np.isfinite(zs)) and np.all(np.isfinite(zt))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_last_good(tmp_path):
    g = random_signed_graph(20, 60, np.random.default_rng(0))
    with pytest.raises(DivergenceError) as info:
        train(g, small_config(variant="bpwr", learning_rate=1e200, epochs=20), tmp_path)
    assert info.value.last_good is not None
    assert (tmp_path / "checkpoint_last_good.bin").exists()
    _, w, _ = load_checkpoint(info.value.last_good)
    assert all(np.all(np.isfinite(v)) for v in w.values())
