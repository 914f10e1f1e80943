import json
import math
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_model
from ffnmt import corpus_io as C
from ffnmt import evaluator as E
from ffnmt import model as M
from ffnmt.errors import ConfigError, InputError

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "bleu_reference.json").read_text(encoding="utf-8"))


def test_identical_corpus_scores_100():
    assert E.bleu(["a b c d", "e f g h i"], ["a b c d", "e f g h i"]).bleu == pytest.approx(100.0)


def test_clipping_hand_oracle():
    rep = E.bleu(["the the the the"], ["the cat sat down"])
    assert rep.precisions[0] == pytest.approx(0.25)
    assert rep.precisions[1:] == [0.0, 0.0, 0.0]
    assert rep.bleu == 0.0


def test_brevity_penalty_hand_oracle():
    rep = E.bleu(["a b c d"], ["a b c d e f g h"])
    assert rep.brevity_penalty == pytest.approx(math.exp(1 - 8 / 4))
    assert rep.bleu == pytest.approx(100 * math.exp(-1.0))
    assert E.bleu(["a b c d e f"], ["a b c d"]).brevity_penalty == 1.0


def test_empty_candidate_scores_zero():
    rep = E.bleu([""], ["a b"])
    assert rep.bleu == 0.0 and rep.brevity_penalty == 0.0 and rep.hyp_len == 0


def test_stats_are_additive():
    a = E.bleu_stats("a b c d", "a b x d")
    b = E.bleu_stats(["x", "y"], ["x", "y"])
    assert E.bleu_from_stats(a + b).bleu == E.bleu(["a b c d", "x y"], ["a b x d", "x y"]).bleu


def test_line_count_mismatch():
    with pytest.raises(InputError):
        E.bleu(["a"], ["a", "b"])


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_reference_fixtures(name):
    rec = FIXTURES[name]
    rep = E.bleu(rec["candidates"], rec["references"])
    assert abs(rep.bleu - rec["bleu"]) <= 0.01
    assert (rep.hyp_len, rep.ref_len) == (rec["sys_len"], rec["ref_len"])


def test_report_string_looks_like_multi_bleu():
    text = str(E.bleu(["a b c d"], ["a b c d"]))
    assert text.startswith("BLEU = 100.00, 100.0/100.0/100.0/100.0 (BP=1.000")


def test_length_buckets():
    srcs = ["a", "a b", "a b c d e", "a b c d e f g"]
    cands = ["x", "x y", "p q r s t", "1 2 3 4 5 6 7"]
    out = E.length_bucket_bleu(cands, cands, srcs, 3)
    assert list(out) == [(0, 3), (3, 6), (6, 9)]
    assert out[(0, 3)][1] == 2 and out[(3, 6)][1] == 1 and out[(6, 9)][1] == 1
    assert out[(3, 6)][0].bleu == pytest.approx(100.0)
    gap = E.length_bucket_bleu(["a", "b"], ["a", "b"], ["a", "1 2 3 4 5 6 7"], 2)
    assert gap[(2, 4)] == (None, 0)
    with pytest.raises(ConfigError):
        E.length_bucket_bleu(cands, cands, srcs, 0)


def test_unk_subset():
    vocab = C.Vocabulary(["a", "b", "c"])
    rep, ratio = E.unk_subset_score(["a b", "a z"], ["a b", "a zz"], vocab)
    assert ratio == 0.5 and rep.sentences == 1 and rep.bleu == 0.0
    none, r0 = E.unk_subset_score(["x"], ["zz"], vocab)
    assert none is None and r0 == 0.0


def test_token_error_rate_counts_end_mark():
    params, cfg = tiny_model(M.DEEP_ED)
    params["out.W"][:] = 0.0
    corpus = [([3, 4], [5, 2]), ([6], [2])]
    # uniform logits: argmax is id 0, never gold
    assert E.token_error_rate(params, cfg, corpus) == 1.0
    with pytest.raises(InputError):
        E.token_error_rate(params, cfg, [])


def test_token_error_rate_matches_sequence_flags():
    params, cfg = tiny_model(M.DEEP_ATT, seed=3, std=1.0)
    corpus = [([3, 4, 5], [6, 7, 2]), ([8], [9, 2]), ([3, 3], [2])]
    flags = [f for s, t in corpus for f in M.sequence_nll(s, t, params, cfg)[1]]
    assert E.token_error_rate(params, cfg, corpus, batch_size=2) == pytest.approx(1 - np.mean(flags))


def test_gradient_probe_shape_and_csv(tmp_path):
    report = E.gradient_probe(depth=3, cell_width=4, length=5, trials=2, seed=1)
    assert len(report.ratios) == 2
    assert len(report.rows) == 2 * 2 * 3 * len(E.PROBE_GROUPS)
    assert len(report.bottom_norms("ff")) == 2
    report.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "variant,trial,layer,group,norm" and len(lines) == 1 + len(report.rows)
    again = E.gradient_probe(depth=3, cell_width=4, length=5, trials=2, seed=1)
    assert again.ratios == report.ratios


def test_gradient_probe_rejects_single_layer():
    with pytest.raises(ConfigError, match="depth"):
        E.gradient_probe(depth=1)
