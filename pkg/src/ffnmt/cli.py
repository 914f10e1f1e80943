"""Command-line entry point: ``ffnmt <subcommand> ...``.

Configuration files are INI-style (``key = value`` lines under ``[model]``,
``[train]``, ``[beam]``, ``[data]`` and ``[paths]``). Every key has a default;
unknown sections or keys are errors. ``--set section.key=value`` overrides a
file value. ``FFNMT_CONFIG`` names a default config file for ``train``.

Exit codes: 0 ok, 2 input error, 3 config error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus_io as C
from . import evaluator as E
from . import generator as G
from . import model as M
from .checkpoint import load_checkpoint
from .errors import ConfigError, InputError, NumericError
from .trainer import TrainConfig, train

log = logging.getLogger("ffnmt")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_ENV = "FFNMT_CONFIG"

# vocabulary sizes are derived from the data, dropout belongs to [train]
_MODEL_KEYS = tuple(f.name for f in dataclasses.fields(M.ModelConfig)
                    if f.name not in ("src_vocab_size", "tgt_vocab_size", "p_d"))


@dataclass
class DataConfig:
    src_vocab_budget: int = 30000
    tgt_vocab_budget: int = 30000


@dataclass
class PathConfig:
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    out_dir: str = "run"


@dataclass
class RunConfig:
    """Merged view of every configurable value, one section per dataclass."""

    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    beam: G.BeamConfig = field(default_factory=G.BeamConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    def model_config(self, src_vocab_size: int, tgt_vocab_size: int) -> M.ModelConfig:
        return M.ModelConfig(src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size,
                             p_d=self.train.p_d, **self.model)


def _defaults(section: str) -> dict:
    if section == "model":
        base = M.ModelConfig()
        return {k: getattr(base, k) for k in _MODEL_KEYS}
    cls = {"train": TrainConfig, "beam": G.BeamConfig, "data": DataConfig, "paths": PathConfig}[section]
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


SECTIONS = ("model", "train", "beam", "data", "paths")


def _coerce(section: str, key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if default is None:
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Build a RunConfig from INI text plus ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {s: {} for s in SECTIONS}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        values[section].update(parser.items(section))
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        values[section][name] = value
    built = {}
    for section in SECTIONS:
        defaults = _defaults(section)
        merged = dict(defaults)
        for key, raw in values[section].items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {section}.{key}")
            merged[key] = _coerce(section, key, raw, defaults[key])
        built[section] = merged
    run = RunConfig(model=built["model"], train=TrainConfig(**built["train"]),
                    beam=G.BeamConfig(**built["beam"]), data=DataConfig(**built["data"]),
                    paths=PathConfig(**built["paths"]))
    run.model_config(len(C.SPECIALS) + 1, len(C.SPECIALS) + 1)  # validate model keys early
    return run


def load_run_config(path, overrides=()) -> RunConfig:
    text = ""
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def render_defaults() -> str:
    """The full default configuration as INI text (every documented key)."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, value in _defaults(section).items():
            lines.append(f"{key} = {'none' if value is None else value}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    run = load_run_config(args.config or os.environ.get(CONFIG_ENV, ""), args.set)
    if args.seed is not None:
        run.train = dataclasses.replace(run.train, seed=args.seed)
    p = run.paths
    if not p.train_src or not p.train_tgt:
        raise InputError("paths.train_src and paths.train_tgt are required")
    corpus = C.ParallelCorpus.load(p.train_src, p.train_tgt)
    dev = C.ParallelCorpus.load(p.dev_src, p.dev_tgt) if p.dev_src and p.dev_tgt else None
    sv = C.build_vocab(corpus.sources, run.data.src_vocab_budget)
    tv = C.build_vocab(corpus.targets, run.data.tgt_vocab_budget)
    config = run.model_config(len(sv), len(tv))
    out = Path(p.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc}") from None
    sv.save(out / "src.vocab")
    tv.save(out / "tgt.vocab")
    meta = {"src_vocab": sv.tokens[len(C.SPECIALS):], "tgt_vocab": tv.tokens[len(C.SPECIALS):]}
    result = train(config, run.train, corpus.encode(sv, tv), dev.encode(sv, tv) if dev else None,
                   out_dir=out, meta=meta)
    print(f"steps={result.steps} events={len(result.events)} out={out}")
    if result.aborted:
        raise NumericError(f"training aborted after {len(result.events)} non-finite event(s)")
    return EXIT_OK


def _load_model(path):
    params, config, meta = load_checkpoint(path)
    try:
        sv, tv = C.Vocabulary(meta["src_vocab"]), C.Vocabulary(meta["tgt_vocab"])
    except KeyError:
        raise InputError(f"{path} carries no vocabularies") from None
    return params, config, sv, tv


def _translate_lines(models, lines, n_b, max_len, word_map) -> list[str]:
    sv, tv = models[0][2], models[0][3]
    out = []
    for line in lines:
        tokens = C.tokenize(line)
        if not tokens:
            out.append("")
            continue
        ids = sv.encode(tokens)
        beam = G.BeamConfig(n_b, max_len)
        if len(models) == 1:
            hyps = G.beam_search(ids, models[0][0], models[0][1], beam)
        else:
            hyps = G.ensemble_beam_search(ids, [m[0] for m in models], [m[1] for m in models], beam)
        best = hyps[0]
        if word_map is not None:
            words = G.posunk_replace(best, tokens, tv, word_map, models[0][1].variant)
        else:
            words = tv.decode(G.strip_end(best.tokens))
        out.append(" ".join(words))
    return out


def _translate_chunk(job):
    paths, lines, n_b, max_len, word_map = job
    return _translate_lines([_load_model(p) for p in paths], lines, n_b, max_len, word_map)


def cmd_translate(args) -> int:
    models = [_load_model(p) for p in args.checkpoints]
    first = models[0]
    for path, m in zip(args.checkpoints[1:], models[1:]):
        if m[3] != first[3] or m[2] != first[2]:
            raise ConfigError(f"{path}: vocabulary differs from {args.checkpoints[0]}")
    word_map = None
    if args.posunk:
        if any(m[1].variant != M.DEEP_ATT for m in models):
            raise ConfigError("--posunk needs an attention (deep_att) model")
        word_map = G.load_word_map(args.posunk)
    lines = C.read_lines(args.input)
    jobs = max(1, args.jobs)
    chunks = [lines[i::jobs] for i in range(jobs)]
    if jobs == 1:
        results = [_translate_lines(models, lines, args.beam, args.max_len, word_map)]
    else:
        work = [(args.checkpoints, chunk, args.beam, args.max_len, word_map) for chunk in chunks]
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_translate_chunk, work))
    out = [""] * len(lines)
    for j, res in enumerate(results):
        out[j::jobs] = res
    if args.output:
        C.write_lines(args.output, out)
    else:
        sys.stdout.write("".join(line + "\n" for line in out))
    return EXIT_OK


def cmd_score(args) -> int:
    hyps, refs = C.read_lines(args.hyp), C.read_lines(args.ref)
    report = E.bleu(hyps, refs)
    print(report)
    if args.src and args.bucket_width:
        buckets = E.length_bucket_bleu(hyps, refs, C.read_lines(args.src), args.bucket_width)
        for (lo, hi), (rep, count) in buckets.items():
            score = f"{rep.bleu:.2f}" if rep is not None else "-"
            print(f"bucket [{lo},{hi}) n={count} BLEU={score}")
    if args.vocab:
        vocab = C.Vocabulary.load(args.vocab)
        rep, ratio = E.unk_subset_score(hyps, refs, vocab)
        score = f"{rep.bleu:.2f}" if rep is not None else "-"
        print(f"no-unk subset ratio={ratio:.3f} BLEU={score}")
    return EXIT_OK


def cmd_ter(args) -> int:
    params, config, sv, tv = _load_model(args.checkpoint)
    corpus = C.ParallelCorpus.load(args.src, args.tgt)
    ter = E.token_error_rate(params, config, corpus.encode(sv, tv), args.batch_size)
    print(f"TER = {ter:.6f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    report = E.gradient_probe(args.depth, args.width, args.length, args.trials, args.seed, args.init_std)
    if args.csv:
        report.write_csv(args.csv)
    print(f"median bottom-layer gradient ratio (ff/noff) = {report.median_ratio:.6g} over {report.trials} trials")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    variants = M.VARIANTS if args.variant == "both" else (args.variant,)
    results = run_gradcheck(args.n_e, args.n_d, args.width, args.emb, args.vocab, variants,
                            args.instances, args.seed, args.coords)
    worst = max(results, key=lambda r: r.max_rel_error)
    for r in results:
        print(f"{r.variant} instance={r.instance} max_rel_error={r.max_rel_error:.3e} coords={r.coords}")
    print(f"max relative error = {worst.max_rel_error:.3e} ({worst.variant}, {worst.worst_param})")
    if worst.max_rel_error > args.tolerance:
        raise NumericError(f"gradient check failed: {worst.max_rel_error:.3e} > {args.tolerance:g}")
    return EXIT_OK


def cmd_make_task(args) -> int:
    corpus = C.synth_task(args.task, args.vocab_size, args.min_len, args.max_len, args.count, args.seed,
                          args.lexicon_seed)
    prefix = Path(args.out_prefix)
    if prefix.parent and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True, exist_ok=True)
    corpus.save(f"{prefix}.src", f"{prefix}.tgt")
    print(f"wrote {len(corpus)} pairs to {prefix}.src / {prefix}.tgt")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(render_defaults())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffnmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help=f"INI config (default: ${CONFIG_ENV})")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--jobs", type=int, default=1, help="worker cap (training is single-process)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="beam-search translation; several checkpoints form an ensemble")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam", type=int, default=G.DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=0, help="decode cap (0: 3 * source length + 10)")
    p.add_argument("--posunk", metavar="MAP", help="source<TAB>target table for unk replacement")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; decoding is deterministic")
    p.add_argument("--jobs", type=int, default=1, help="decode lines in this many processes")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="corpus BLEU with optional length buckets and unk subset")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--src", help="source file for length buckets")
    p.add_argument("--bucket-width", type=int, default=0)
    p.add_argument("--vocab", help="vocabulary file for the no-unk subset score")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ter", help="teacher-forced token error rate")
    p.add_argument("checkpoint")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_ter)

    p = sub.add_parser("probe", help="gradient-propagation probe, F-F vs no F-F")
    p.add_argument("--depth", type=int, default=9)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--init-std", type=float, default=0.07)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write per-layer norms here")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of full-model gradients")
    p.add_argument("--n-e", type=int, default=2)
    p.add_argument("--n-d", type=int, default=2)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--emb", type=int, default=4)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--variant", choices=("both",) + M.VARIANTS, default="both")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--coords", type=int, default=8, help="coordinates probed per parameter tensor")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-task", help="write a synthetic parallel corpus")
    p.add_argument("task", choices=C.TASKS)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--lexicon-seed", type=int)
    p.set_defaults(func=cmd_make_task)

    p = sub.add_parser("config", help="print the default config with every key")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
