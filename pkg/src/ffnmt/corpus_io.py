"""Vocabularies, parallel corpora and synthetic translation tasks.

File formats (version 1):

* corpus: UTF-8 text, one pre-tokenized sentence per line; source and target
  files are line-aligned.
* vocabulary: UTF-8 text, one token per line in rank order. The reserved
  specials are implicit and never written.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, InputError

PAD, UNK, END = 0, 1, 2
PAD_TOKEN, UNK_TOKEN, END_TOKEN = "<pad>", "<unk>", "</s>"
SPECIALS = (PAD_TOKEN, UNK_TOKEN, END_TOKEN)
FORMAT_VERSION = 1


def tokenize(line: str) -> list[str]:
    return line.split()


class Vocabulary:
    """Frequency-ranked token <-> id map with reserved ids pad=0, unk=1, end=2.

    The start mark has no id: it is the zero embedding.
    """

    def __init__(self, tokens: Sequence[str]):
        ranked = [t for t in tokens if t not in SPECIALS]
        if len(set(ranked)) != len(ranked):
            raise InputError("duplicate tokens in vocabulary")
        self.tokens = list(SPECIALS) + ranked
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index and token not in SPECIALS

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens) -> list[int]:
        if isinstance(tokens, str):
            tokens = tokenize(tokens)
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise DomainError(f"id {i} outside vocabulary of size {len(self.tokens)}")
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens[len(SPECIALS):]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls([line for line in text.split("\n") if line])


def build_vocab(lines: Iterable, k: int) -> Vocabulary:
    """Top-``k`` tokens by corpus frequency (ties broken lexicographically) plus specials.

    ``lines`` may hold strings or token lists.
    """
    if k < 1:
        raise ConfigError(f"vocabulary budget must be >= 1, got {k}")
    counts = Counter()
    for line in lines:
        counts.update(t for t in (tokenize(line) if isinstance(line, str) else line) if t not in SPECIALS)
    if not counts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[:k]])


def encode_line(vocab: Vocabulary, tokens) -> list[int]:
    return vocab.encode(tokens)


def decode_line(vocab: Vocabulary, ids: Iterable[int]) -> list[str]:
    return vocab.decode(ids)


@dataclass
class ParallelCorpus:
    """Line-aligned (source tokens, target tokens) pairs."""

    pairs: list = field(default_factory=list)

    def __post_init__(self):
        for i, (src, tgt) in enumerate(self.pairs):
            if not src or not tgt:
                raise InputError(f"pair {i} has an empty side")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]

    @classmethod
    def load(cls, src_path, tgt_path) -> "ParallelCorpus":
        src_lines = read_lines(src_path)
        tgt_lines = read_lines(tgt_path)
        if len(src_lines) != len(tgt_lines):
            raise InputError(f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}")
        return cls([(tokenize(s), tokenize(t)) for s, t in zip(src_lines, tgt_lines)])

    def save(self, src_path, tgt_path) -> None:
        write_lines(src_path, [" ".join(s) for s in self.sources])
        write_lines(tgt_path, [" ".join(t) for t in self.targets])

    def encode(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list[tuple[list[int], list[int]]]:
        """Id pairs; targets get the end mark appended."""
        return [(src_vocab.encode(s), tgt_vocab.encode(t) + [END]) for s, t in self.pairs]


def read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def write_lines(path, lines: Iterable[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------

TASKS = ("copy", "reverse", "lexicon_swap")


def lexicon(vocab_size: int, seed: int) -> dict[str, str]:
    """The fixed source->target word bijection used by ``lexicon_swap``."""
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(vocab_size)
    return {str(i): f"w{int(j)}" for i, j in enumerate(perm)}


def swap_pairs(tokens: list) -> list:
    """Deterministic local reordering: swap positions (4j, 4j+1) wherever both exist."""
    out = list(tokens)
    for i in range(0, len(out) - 1, 4):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def synth_task(kind: str, vocab_size: int, min_len: int, max_len: int, count: int, seed: int,
               lexicon_seed: int | None = None) -> ParallelCorpus:
    """Generate a toy parallel corpus.

    Source tokens are the strings ``"0" .. str(vocab_size - 1)``.
    ``lexicon_seed`` fixes the lexicon_swap bijection independently of the
    sentence draws (defaults to ``seed``) so train and dev sets can share it.
    """
    if kind not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {kind!r}")
    if vocab_size < 2:
        raise ConfigError("synthetic vocabulary needs at least 2 tokens")
    if not 1 <= min_len <= max_len:
        raise ConfigError(f"invalid length range [{min_len}, {max_len}]")
    if count < 1:
        raise ConfigError("count must be >= 1")
    gen = np.random.Generator(np.random.PCG64(seed))
    table = lexicon(vocab_size, seed if lexicon_seed is None else lexicon_seed)
    pairs = []
    for _ in range(count):
        n = int(gen.integers(min_len, max_len + 1))
        src = [str(int(t)) for t in gen.integers(0, vocab_size, size=n)]
        if kind == "copy":
            tgt = list(src)
        elif kind == "reverse":
            tgt = src[::-1]
        else:
            tgt = swap_pairs([table[t] for t in src])
        pairs.append((src, tgt))
    return ParallelCorpus(pairs)
