import csv
import logging
import math

import numpy as np
import pytest

from conftest import tiny_config, tiny_model
from ffnmt import corpus_io as C
from ffnmt import model as M
from ffnmt import numerics as nx
from ffnmt import trainer as T
from ffnmt.errors import ConfigError, InputError


def test_defaults_follow_reference_hyperparameters():
    tc = T.TrainConfig()
    assert (tc.l_r, tc.l_f, tc.r, tc.p_d) == (5e-4, 4e-5, 2.0, 0.1)
    assert tc.rate("dec.1.W_r") == 5e-4 and tc.rate("dec.1.W_f") == 4e-5
    for bad in (dict(l_r=-1.0), dict(r=-0.1), dict(p_d=1.0), dict(batch_size=0), dict(max_updates=-1)):
        with pytest.raises(ConfigError):
            T.TrainConfig(**bad)


def test_init_zeroes_recurrent_parameters():
    cfg = tiny_config()
    params = T.init_params(cfg, nx.SeededRng(0))
    for name, value in params.items():
        if M.is_recurrent(name):
            assert not value.any(), name
        else:
            assert value.std() > 0, name
    big = T.init_params(tiny_config(cell_width=64, emb_dim=64), nx.SeededRng(0))
    assert big["dec.1.W_f"].std() == pytest.approx(0.07, rel=0.05)


def test_init_streams_do_not_shift_between_configs():
    a = T.init_params(tiny_config(n_d=2), nx.SeededRng(3))
    b = T.init_params(tiny_config(n_d=2, tgt_vocab_size=11), nx.SeededRng(3))
    assert np.array_equal(a["src_emb"], b["src_emb"])


def test_adam_first_step_by_hand():
    tc = T.TrainConfig(l_r=0.1, l_f=0.01, r=2.0)
    params = {"dec.1.W_r": np.array([1.0]), "dec.1.W_f": np.array([1.0]), "src_emb": np.array([1.0])}
    grads = {k: np.array([0.5]) for k in params}
    opt = T.OptimState.zeros(params)
    T.adam_step(params, grads, opt, tc)
    # bias-corrected first step moves by lr * g / (|g| + eps) = lr * sign(g)
    step = 1.0 / (1.0 + 1e-8)
    assert params["dec.1.W_r"][0] == pytest.approx(1.0 - 0.1 * step)
    assert params["dec.1.W_f"][0] == pytest.approx(1.0 - 0.01 * step)
    assert params["src_emb"][0] == pytest.approx(1.0 - 0.01 * step)


def test_adam_shrinkage_spares_embeddings():
    tc = T.TrainConfig(l_r=0.1, l_f=0.1, r=2.0)
    params = {"out.W": np.array([1.0]), "tgt_emb": np.array([1.0])}
    grads = {k: np.array([0.0]) for k in params}
    T.adam_step(params, grads, T.OptimState.zeros(params), tc)
    assert params["out.W"][0] < 1.0
    assert params["tgt_emb"][0] == 1.0


def test_adam_second_step_matches_formula():
    tc = T.TrainConfig(l_r=0.05, l_f=0.05, r=0.0)
    p = {"out.W": np.array([0.0])}
    opt = T.OptimState.zeros(p)
    T.adam_step(p, {"out.W": np.array([1.0])}, opt, tc)
    T.adam_step(p, {"out.W": np.array([-2.0])}, opt, tc)
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    step2 = 0.05 * (m / (1 - 0.9 ** 2)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p["out.W"][0] == pytest.approx(-0.05 / (1 + 1e-8) - step2)


def test_zero_rate_freezes_group():
    tc = T.TrainConfig(l_r=0.0, l_f=0.1, r=0.0)
    params = {"dec.1.W_r": np.array([1.0]), "dec.1.W_f": np.array([1.0])}
    T.adam_step(params, {k: np.array([1.0]) for k in params}, T.OptimState.zeros(params), tc)
    assert params["dec.1.W_r"][0] == 1.0 and params["dec.1.W_f"][0] < 1.0


def test_pad_batch_layout():
    b = T.pad_batch([([5, 6, 7], [8, 2]), ([9], [2])])
    assert b.src.tolist() == [[5, 6, 7], [9, 0, 0]]
    assert b.tgt_mask.tolist() == [[1, 1], [1, 0]]
    assert b.src_lengths.tolist() == [3, 1]
    with pytest.raises(InputError):
        T.pad_batch([])


def test_make_batches_covers_corpus_deterministically(caplog):
    pairs = [([3] * n, [4] * (n % 5 + 1)) for n in range(1, 40)]
    a = T.make_batches(pairs, 4, nx.SeededRng(1))
    b = T.make_batches(pairs, 4, nx.SeededRng(1))
    assert [x.indices for x in a] == [x.indices for x in b]
    assert sorted(i for x in a for i in x.indices) == list(range(len(pairs)))
    with caplog.at_level(logging.WARNING):
        kept = T.make_batches(pairs, 4, max_len=10)
    assert sum(x.size for x in kept) == 10
    assert "skipped 29" in caplog.text


def test_loss_normalized_per_sequence():
    params, cfg = tiny_model()
    batch = T.pad_batch([([3, 4], [5, 2]), ([6], [7, 8, 2])])
    full, _, _ = T.loss_and_grads(params, cfg, batch, train=False, normalize=False)
    mean, _, _ = T.loss_and_grads(params, cfg, batch, train=False)
    assert mean == pytest.approx(full / 2)


def _copy_data(n=200, seed=0):
    corpus = C.synth_task("copy", 6, 1, 4, n, seed=seed)
    sv, tv = C.build_vocab(corpus.sources, 50), C.build_vocab(corpus.targets, 50)
    return corpus.encode(sv, tv), sv, tv


def test_training_reduces_loss_and_writes_artifacts(tmp_path):
    data, sv, tv = _copy_data()
    cfg = tiny_config(src_vocab_size=len(sv), tgt_vocab_size=len(tv), emb_dim=8, cell_width=8)
    tc = T.TrainConfig(l_r=3e-3, l_f=3e-3, r=0.0, p_d=0.0, batch_size=16, max_updates=60, eval_every=30,
                       checkpoint_every=30, dev_beam=1)
    res = T.train(cfg, tc, data, data[:20], out_dir=tmp_path)
    losses = [row["loss"] for row in res.history if row.get("event") == ""]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert res.steps == 60 and not res.events
    for name in ("metrics.csv", "step-30.ckpt", "step-60.ckpt", "best.ckpt", "last.ckpt"):
        assert (tmp_path / name).exists(), name
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert list(rows[0]) == list(T.LOG_FIELDS)
    assert sum(r["event"] == "eval" for r in rows) == 2


def test_non_finite_loss_is_recorded_and_aborts():
    data, sv, tv = _copy_data(40)
    cfg = tiny_config(src_vocab_size=len(sv), tgt_vocab_size=len(tv))
    params = T.init_params(cfg, nx.SeededRng(0))
    params["out.W"][0, 0] = np.nan
    res = T.train(cfg, T.TrainConfig(batch_size=8, max_updates=5), data, params=params)
    assert res.aborted and len(res.events) == 1 and res.events[0]["kind"] == "non-finite"
    assert res.history[-1]["event"] == "non-finite"


def test_non_finite_updates_are_skipped_when_tolerated():
    data, sv, tv = _copy_data(40)
    cfg = tiny_config(src_vocab_size=len(sv), tgt_vocab_size=len(tv))
    params = T.init_params(cfg, nx.SeededRng(0))
    params["out.W"][0, 0] = np.inf
    before = {k: v.copy() for k, v in params.items()}
    res = T.train(cfg, T.TrainConfig(batch_size=8, max_updates=3, abort_after=0), data, params=params)
    assert not res.aborted and len(res.events) == 3
    assert all(np.array_equal(before[k], params[k], equal_nan=True) for k in params)


def test_target_accuracy_stops_early():
    data, sv, tv = _copy_data()
    cfg = tiny_config(src_vocab_size=len(sv), tgt_vocab_size=len(tv))
    tc = T.TrainConfig(l_r=3e-3, l_f=3e-3, r=0.0, p_d=0.0, batch_size=16, max_updates=50, eval_every=10,
                       target_accuracy=0.01, dev_beam=0)
    res = T.train(cfg, tc, data, data[:10])
    assert res.reached_target_at == 10 and res.steps == 10


def test_training_is_deterministic(tmp_path):
    data, sv, tv = _copy_data(60)
    cfg = tiny_config(src_vocab_size=len(sv), tgt_vocab_size=len(tv), p_d=0.2)
    tc = T.TrainConfig(batch_size=8, max_updates=12, eval_every=6, dev_beam=1, seed=5)
    T.train(cfg, tc, data, data[:5], out_dir=tmp_path / "a")
    T.train(cfg, tc, data, data[:5], out_dir=tmp_path / "b")
    for name in ("metrics.csv", "last.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_corpus_rejected():
    with pytest.raises(InputError):
        T.train(tiny_config(), T.TrainConfig(), [])
