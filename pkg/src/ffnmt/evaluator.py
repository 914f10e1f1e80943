"""Corpus BLEU (multi-bleu semantics), token error rate, report slicing, gradient probe."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model as M
from . import numerics as nx
from . import recurrent_stack as rs
from .errors import ConfigError, InputError

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    sentences: int = 0

    def __str__(self) -> str:
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        ratio = self.hyp_len / self.ref_len if self.ref_len else 0.0
        return (f"BLEU = {self.bleu:.2f}, {p} (BP={self.brevity_penalty:.3f}, ratio={ratio:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")


def _as_tokens(line) -> list[str]:
    return line.split() if isinstance(line, str) else list(line)


def _ngrams(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidate, reference) -> np.ndarray:
    """Sufficient statistics for one sentence: [hyp_len, ref_len, correct_1..4, total_1..4]."""
    hyp, ref = _as_tokens(candidate), _as_tokens(reference)
    stats = np.zeros(2 + 2 * MAX_ORDER, dtype=np.int64)
    stats[0], stats[1] = len(hyp), len(ref)
    for n in range(1, MAX_ORDER + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats[1 + n] = sum(min(c, r[g]) for g, c in h.items())
        stats[1 + MAX_ORDER + n] = sum(h.values())
    return stats


def bleu_from_stats(stats: np.ndarray, sentences: int = 0) -> BleuReport:
    hyp_len, ref_len = int(stats[0]), int(stats[1])
    correct = stats[2:2 + MAX_ORDER]
    totals = stats[2 + MAX_ORDER:]
    precisions = [float(c) / t if t else 0.0 for c, t in zip(correct, totals)]
    if ref_len == 0 or hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, hyp_len, ref_len, sentences)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) == 0.0:
        return BleuReport(0.0, precisions, bp, hyp_len, ref_len, sentences)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(100.0 * score, precisions, bp, hyp_len, ref_len, sentences)


def bleu(candidates: Sequence, references: Sequence) -> BleuReport:
    """Corpus BLEU-4 with clipped counts and brevity penalty, single reference, no smoothing.

    Lines are whitespace-tokenized strings or token lists; case is preserved.
    """
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidate lines but {len(references)} reference lines")
    stats = np.zeros(2 + 2 * MAX_ORDER, dtype=np.int64)
    for c, r in zip(candidates, references):
        stats += bleu_stats(c, r)
    return bleu_from_stats(stats, len(candidates))


def length_bucket_bleu(candidates, references, sources, bucket_width: int) -> dict:
    """BLEU per source-length bucket ``[lo, lo + width)``.

    Returns ``{(lo, hi): (report or None, count)}`` covering every bucket from
    the shortest to the longest source; empty buckets map to ``(None, 0)``.
    """
    if bucket_width < 1:
        raise ConfigError("bucket width must be >= 1")
    if not len(candidates) == len(references) == len(sources):
        raise InputError("candidates, references and sources must have equal line counts")
    if not sources:
        return {}
    lengths = [len(_as_tokens(s)) for s in sources]
    first = (min(lengths) // bucket_width) * bucket_width
    last = (max(lengths) // bucket_width) * bucket_width
    out = {}
    for lo in range(first, last + 1, bucket_width):
        idx = [i for i, n in enumerate(lengths) if lo <= n < lo + bucket_width]
        key = (lo, lo + bucket_width)
        if idx:
            out[key] = (bleu([candidates[i] for i in idx], [references[i] for i in idx]), len(idx))
        else:
            out[key] = (None, 0)
    return out


def unk_subset_score(candidates, references, vocabulary) -> tuple[BleuReport | None, float]:
    """BLEU on pairs whose reference has no out-of-vocabulary token, plus the kept fraction.

    ``vocabulary`` is anything supporting ``in`` (a Vocabulary or a set of
    tokens). An empty subset yields ``(None, 0.0)``.
    """
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidate lines but {len(references)} reference lines")
    keep = [i for i, r in enumerate(references) if all(t in vocabulary for t in _as_tokens(r))]
    ratio = len(keep) / len(references) if references else 0.0
    if not keep:
        return None, ratio
    return bleu([candidates[i] for i in keep], [references[i] for i in keep]), ratio


# ---------------------------------------------------------------------------
# Teacher-forced metrics
# ---------------------------------------------------------------------------


def corpus_loss_and_ter(params: dict, config: M.ModelConfig, batches) -> tuple[float, float]:
    """Summed NLL and token error rate over pre-built batches, evaluation mode."""
    loss = 0.0
    errors = total = 0
    for b in batches:
        value, correct = M.batch_nll(params, config, b.src, b.src_mask, b.tgt, b.tgt_mask)
        loss += float(value)
        n = int(b.tgt_mask.sum())
        total += n
        errors += n - int(correct.sum())
    return loss, errors / total


def token_error_rate(params: dict, config: M.ModelConfig, corpus: list, batch_size: int = 64) -> float:
    """Fraction of target positions (end mark included) whose teacher-forced argmax is wrong."""
    from .trainer import make_batches

    if not corpus:
        raise InputError("token error rate of an empty corpus")
    return corpus_loss_and_ter(params, config, make_batches(corpus, batch_size))[1]


# ---------------------------------------------------------------------------
# Gradient-propagation probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeReport:
    """Per-trial, per-layer gradient norms for matched stacks with and without F-F."""

    depth: int
    cell_width: int
    length: int
    trials: int
    seed: int
    rows: list = field(default_factory=list)  # (variant, trial, layer, group, norm)
    ratios: list = field(default_factory=list)

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))

    def bottom_norms(self, variant: str) -> list[float]:
        return [r[4] for r in self.rows if r[0] == variant and r[2] == 1 and r[3] == "W_f"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "trial", "layer", "group", "norm"])
            for row in self.rows:
                w.writerow([row[0], row[1], row[2], row[3], repr(row[4])])


PROBE_GROUPS = ("W_f", "W_r", "theta_rho", "theta_phi", "theta_pi")


def _probe_trial(depth: int, d: int, length: int, rng: nx.SeededRng, ff: bool, std: float):
    cfg = rs.StackConfig(depth, d, ff_enabled=ff)
    x = rng.spawn(0).normal((length, 1, d))
    weights = rng.spawn(1).normal((length, 1, d))
    layers = []
    for k in range(1, depth + 1):
        lrng = rng.spawn(10 + k)
        # the h-part of W_f is shared between the two variants; F-F adds the Half(f) columns
        w_h = lrng.spawn(0).normal((4 * d, d), std)
        if k == 1:
            w_f = w_h
        elif ff:
            w_f = np.concatenate([lrng.spawn(1).normal((4 * d, 2 * d), std), w_h], axis=1)
        else:
            w_f = w_h
        rec = [lrng.spawn(2 + i).normal(shape, std) for i, shape in enumerate(((4 * d, d), (d,), (d,), (d,)))]
        layers.append((w_f, rec))
    tape = nx.Tape()
    bound = []
    for k, (w_f, rec) in enumerate(layers, start=1):
        lstm = rs.LstmParams(*(tape.leaf(a, f"{k}.{g}") for a, g in zip(rec, PROBE_GROUPS[1:])))
        bound.append(rs.LayerParams(tape.leaf(w_f, f"{k}.W_f"), lstm, cfg.direction(k), k))
    top = rs.stack_forward(x, cfg, bound)[-1]
    loss = nx.total(nx.mul(top.h, weights))
    grads = tape.backward(loss)
    return {(k, g): float(np.linalg.norm(grads[f"{k}.{g}"])) for k in range(1, depth + 1) for g in PROBE_GROUPS}


def gradient_probe(depth: int = 9, cell_width: int = 8, length: int = 20, trials: int = 20, seed: int = 0,
                   init_std: float = 0.07) -> ProbeReport:
    """Compare gradient norms reaching each layer of matched F-F / no-F-F stacks.

    Both stacks share inputs, loss weights and every parameter they have in
    common; recurrent parameters are drawn from Normal(0, init_std^2) instead of
    zero so the recurrent path is active. Loss is a fixed random linear
    functional of the top layer's h sequence.
    """
    if depth < 2:
        raise ConfigError("gradient probe needs depth >= 2 (a single layer has no F-F path)")
    if trials < 1 or length < 1 or cell_width < 1:
        raise ConfigError("trials, length and cell_width must be >= 1")
    report = ProbeReport(depth, cell_width, length, trials, seed)
    root = nx.SeededRng(seed)
    for trial in range(trials):
        norms = {}
        for variant, ff in (("ff", True), ("noff", False)):
            norms[variant] = _probe_trial(depth, cell_width, length, root.spawn(trial), ff, init_std)
            for (k, g), n in norms[variant].items():
                report.rows.append((variant, trial, k, g, n))
        report.ratios.append(norms["ff"][(1, "W_f")] / norms["noff"][(1, "W_f")])
    return report
