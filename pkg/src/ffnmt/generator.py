"""Beam-search decoding, ensemble decoding and positional unknown-word replacement."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import numerics as nx
from .corpus_io import END, UNK
from .errors import ConfigError, DomainError, InputError, UnsupportedVariantError

DEFAULT_BEAM = 3


@dataclass
class BeamConfig:
    n_b: int = DEFAULT_BEAM
    max_len: int = 0  # 0 -> 3 * source length + 10

    def __post_init__(self):
        if self.n_b < 1:
            raise ConfigError("beam width n_b must be >= 1")
        if self.max_len < 0:
            raise ConfigError("max_len must be >= 0")

    def cap(self, source_length: int) -> int:
        return self.max_len or 3 * source_length + 10


@dataclass
class Hypothesis:
    """A (partial) target sequence ranked by its total log-likelihood."""

    tokens: list
    score: float
    states: list = field(default_factory=list, repr=False)
    alignment: list = field(default_factory=list)
    finished: bool = False


@dataclass
class _Member:
    params: dict
    config: M.ModelConfig
    context: object


def _prepare(source_ids, params, config) -> _Member:
    enc = M.encode(source_ids, params, config)
    return _Member(params, config, M.decoder_context(params, config, enc))


def _step(member: _Member, y_prev, state: M.DecoderState):
    c_t, alphas = M.context_for_step(member.params, member.context, state)
    logits, new_state, _ = M.decode_step(y_prev, c_t, state, member.params, member.config)
    return logits, new_state, alphas


def _search(members: list[_Member], source_length: int, beam: BeamConfig) -> list[Hypothesis]:
    vocab = members[0].config.tgt_vocab_size
    cap = beam.cap(source_length)
    states = [M.DecoderState.zeros(m.config, 1) for m in members]
    live_tokens: list[list[int]] = [[]]
    live_scores = np.zeros(1)
    live_align: list[list[int]] = [[]]
    finished: list[Hypothesis] = []
    for t in range(cap):
        y_prev = None if t == 0 else np.array([toks[-1] for toks in live_tokens])
        outs = [_step(m, y_prev, st) for m, st in zip(members, states)]
        if len(members) == 1:
            logp = nx.log_softmax(outs[0][0])
        else:
            probs = sum(nx.softmax(o[0]) for o in outs)
            probs = probs / probs.sum(axis=-1, keepdims=True)
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
        alphas = outs[0][2]
        cand = (live_scores[:, None] + logp).ravel()
        k = min(beam.n_b, cand.size)
        # stable ordering: best score first, ties by (row, token)
        top = np.argsort(-cand, kind="stable")[:k]
        keep_rows, keep_tokens, keep_scores, keep_align = [], [], [], []
        for idx in top:
            row, tok = divmod(int(idx), vocab)
            align = live_align[row] + ([int(np.argmax(alphas[:, row]))] if alphas is not None else [])
            tokens = live_tokens[row] + [tok]
            if tok == END:
                finished.append(Hypothesis(tokens, float(cand[idx]), alignment=align, finished=True))
            else:
                keep_rows.append(row)
                keep_tokens.append(tokens)
                keep_scores.append(float(cand[idx]))
                keep_align.append(align)
        if not keep_rows:
            break
        rows = np.array(keep_rows)
        states = [o[1].select(rows) for o in outs]
        live_tokens, live_scores, live_align = keep_tokens, np.array(keep_scores), keep_align
        best_finished = max((h.score for h in finished), default=-np.inf)
        # per-step log-probs are <= 0, so live scores can only fall from here
        if best_finished >= live_scores.max():
            break
    if finished:
        return sorted(finished, key=lambda h: -h.score)
    best = int(np.argmax(live_scores))
    return [Hypothesis(live_tokens[best], float(live_scores[best]), alignment=live_align[best], finished=False)]


def beam_search(source_ids, params: dict, config: M.ModelConfig, beam: BeamConfig | None = None) -> list[Hypothesis]:
    """Left-to-right beam search ranked by total (unnormalized) log-likelihood.

    Returns finished hypotheses, best first. If nothing finishes within the cap,
    returns the single best unfinished hypothesis with ``finished=False``.
    """
    source_ids = list(source_ids)
    if not source_ids:
        raise DomainError("empty source")
    beam = beam or BeamConfig()
    return _search([_prepare(source_ids, params, config)], len(source_ids), beam)


def ensemble_beam_search(source_ids, params_list: list, configs: list, beam: BeamConfig | None = None) -> list[Hypothesis]:
    """Beam search over the normalized sum of member models' next-word distributions."""
    source_ids = list(source_ids)
    if not source_ids:
        raise DomainError("empty source")
    if not params_list or len(params_list) != len(configs):
        raise ConfigError("need one config per ensemble member")
    vocab = {c.tgt_vocab_size for c in configs}
    if len(vocab) != 1:
        raise ConfigError(f"ensemble members disagree on target vocabulary size: {sorted(vocab)}")
    beam = beam or BeamConfig()
    members = [_prepare(source_ids, p, c) for p, c in zip(params_list, configs)]
    return _search(members, len(source_ids), beam)


def greedy_decode(source_ids, params: dict, config: M.ModelConfig, max_len: int = 0) -> list[int]:
    """Step-wise argmax decoding; kept separate from beam search as its oracle."""
    source_ids = list(source_ids)
    member = _prepare(source_ids, params, config)
    state = M.DecoderState.zeros(config, 1)
    out: list[int] = []
    y_prev = None
    for _ in range(max_len or 3 * len(source_ids) + 10):
        logits, state, _ = _step(member, y_prev, state)
        # argmax over log-probabilities, the same numbers beam search ranks
        tok = int(np.argmax(nx.log_softmax(logits)[0]))
        out.append(tok)
        if tok == END:
            break
        y_prev = np.array([tok])
    return out


def strip_end(tokens: list) -> list:
    return tokens[:-1] if tokens and tokens[-1] == END else list(tokens)


def translate_ids(source_ids, params: dict, config: M.ModelConfig, beam: int = DEFAULT_BEAM) -> list[int]:
    """Best hypothesis token ids without the end mark."""
    return strip_end(beam_search(source_ids, params, config, BeamConfig(beam))[0].tokens)


# ---------------------------------------------------------------------------
# PosUnk
# ---------------------------------------------------------------------------


def load_word_map(path) -> dict[str, str]:
    """Read a ``source<TAB>target`` UTF-8 table; later lines override earlier ones."""
    table = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read word map {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"{path}:{n}: expected 'source<TAB>target'")
        table[parts[0]] = parts[1]
    return table


def posunk_replace(hypothesis: Hypothesis, source_tokens: list[str], tgt_vocab, mapping: dict[str, str],
                   variant: str = M.DEEP_ATT) -> list[str]:
    """Replace each emitted unk with the mapped translation of its most-attended source word.

    Unmapped source words are copied verbatim. The end mark is dropped.
    """
    if variant != M.DEEP_ATT:
        raise UnsupportedVariantError("PosUnk needs per-step attention; Deep-ED has none")
    tokens = strip_end(hypothesis.tokens)
    if len(hypothesis.alignment) < len(tokens):
        raise UnsupportedVariantError("hypothesis carries no attention trace")
    out = []
    for tok, pos in zip(tokens, hypothesis.alignment):
        if tok == UNK:
            word = source_tokens[pos]
            out.append(mapping.get(word, word))
        else:
            out.append(tgt_vocab.tokens[tok])
    return out
