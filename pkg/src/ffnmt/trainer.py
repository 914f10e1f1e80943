"""Initialization, Adam with split learning rates and L2 shrinkage, batching, training loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import numerics as nx
from .checkpoint import save_checkpoint
from .corpus_io import PAD
from .errors import ConfigError, DimensionError, InputError

log = logging.getLogger(__name__)

INIT_STD = 0.07


@dataclass
class TrainConfig:
    l_r: float = 5e-4
    l_f: float = 4e-5
    r: float = 2.0
    p_d: float = 0.1
    batch_size: int = 32
    max_epochs: int = 10
    max_updates: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    checkpoint_every: int = 0
    eval_every: int = 0
    max_len: int = 100
    abort_after: int = 1
    patience: int = 0
    target_accuracy: float = 0.0
    recurrent_init_std: float = 0.0
    dev_beam: int = 1

    def __post_init__(self):
        # zero rates are allowed so a parameter group can be frozen
        if self.l_r < 0 or self.l_f < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.r < 0:
            raise ConfigError("L2 strength r must be >= 0")
        if not 0.0 <= self.p_d < 1.0:
            raise ConfigError(f"p_d must be in [0, 1), got {self.p_d}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0 or self.adam_eps <= 0:
            raise ConfigError("invalid Adam constants")
        for name in ("max_epochs", "max_updates", "checkpoint_every", "eval_every", "abort_after",
                     "patience", "max_len", "dev_beam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def rate(self, name: str) -> float:
        return self.l_r if M.is_recurrent(name) else self.l_f


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "OptimState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def init_params(config: M.ModelConfig, rng: nx.SeededRng, std: float = INIT_STD,
                recurrent_std: float = 0.0) -> dict:
    """Recurrent parts (W_r and peepholes) zero; everything else Normal(0, std^2).

    ``recurrent_std > 0`` overrides the zero init (used by instability probes).
    Each parameter draws from its own child stream, so adding a parameter
    never shifts another's values.
    """
    params = {}
    for i, (name, shape) in enumerate(M.param_shapes(config).items()):
        if M.is_recurrent(name):
            params[name] = rng.spawn(i).normal(shape, recurrent_std) if recurrent_std > 0 else np.zeros(shape)
        else:
            params[name] = rng.spawn(i).normal(shape, std)
    return params


def adam_step(params: dict, grads: dict, opt: OptimState, tc: TrainConfig) -> tuple[dict, OptimState]:
    """In-place Adam update on ``params`` with ``g + r*v`` for non-embedding parameters.

    Recurrent parameters use ``l_r``, all others ``l_f``.
    """
    opt.step += 1
    b1, b2 = tc.adam_beta1, tc.adam_beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if tc.r and not M.is_embedding(name):
            g = g + tc.r * p
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = tc.rate(name)
        if lr:
            p -= lr * (m / c1) / (np.sqrt(v / c2) + tc.adam_eps)
    return params, opt


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded id matrices (B x T) with 0/1 masks. Targets include the end mark."""

    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray
    indices: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def src_lengths(self) -> np.ndarray:
        return self.src_mask.sum(axis=1).astype(np.int64)

    @property
    def tgt_lengths(self) -> np.ndarray:
        return self.tgt_mask.sum(axis=1).astype(np.int64)


def pad_batch(pairs: list, indices: list | None = None) -> Batch:
    """Pad (source ids, target ids) pairs into one Batch."""
    if not pairs:
        raise InputError("cannot pad an empty batch")
    n = len(pairs)
    ts = max(len(s) for s, _ in pairs)
    tt = max(len(t) for _, t in pairs)
    src = np.full((n, ts), PAD, dtype=np.int64)
    tgt = np.full((n, tt), PAD, dtype=np.int64)
    sm = np.zeros((n, ts))
    tm = np.zeros((n, tt))
    for i, (s, t) in enumerate(pairs):
        if not s or not t:
            raise InputError("empty side in pair")
        src[i, :len(s)] = s
        sm[i, :len(s)] = 1.0
        tgt[i, :len(t)] = t
        tm[i, :len(t)] = 1.0
    return Batch(src, sm, tgt, tm, list(indices) if indices is not None else list(range(n)))


def make_batches(pairs: list, batch_size: int, rng: nx.SeededRng | None = None, max_len: int = 0,
                 pool_factor: int = 10) -> list[Batch]:
    """Shuffle by seed, group similar lengths within pools, pad.

    Pairs whose source or target exceeds ``max_len`` (if > 0) are skipped with a
    logged warning.
    """
    if not pairs:
        raise InputError("cannot batch an empty corpus")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = list(range(len(pairs)))
    if max_len:
        kept = [i for i in order if len(pairs[i][0]) <= max_len and len(pairs[i][1]) <= max_len]
        if len(kept) < len(order):
            log.warning("skipped %d sequences longer than %d", len(order) - len(kept), max_len)
        order = kept
        if not order:
            raise InputError("every sequence exceeds max_len")
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    pool = batch_size * pool_factor
    groups = []
    for start in range(0, len(order), pool):
        chunk = sorted(order[start:start + pool], key=lambda i: (len(pairs[i][0]), len(pairs[i][1])))
        groups.extend(chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size))
    if rng is not None:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    return [pad_batch([pairs[i] for i in g], g) for g in groups]


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss_and_grads(params: dict, config: M.ModelConfig, batch: Batch, rng=None, train: bool = True,
                   normalize: bool = True):
    """Forward + backward on one batch.

    Returns ``(loss, grads, correct)`` where loss is the summed NLL (divided by
    the number of sequences when ``normalize``) and correct the B x T' flags.
    """
    tape = nx.Tape()
    bound = M.bind(params, tape)
    loss, correct = M.batch_nll(bound, config, batch.src, batch.src_mask, batch.tgt, batch.tgt_mask, rng, train)
    if normalize:
        loss = nx.mul(loss, 1.0 / batch.size)
    grads = tape.backward(loss)
    return float(loss.value), grads, correct


def _finite(loss: float, grads: dict) -> bool:
    return math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

LOG_FIELDS = ("step", "epoch", "loss", "tokens", "l_r", "l_f", "event", "dev_loss", "dev_ter", "dev_bleu")


@dataclass
class TrainResult:
    params: dict
    opt: OptimState
    history: list
    events: list
    steps: int
    aborted: bool = False
    best_dev_bleu: float | None = None
    best_step: int | None = None
    reached_target_at: int | None = None
    dev_accuracy: list = field(default_factory=list)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def train(model_config: M.ModelConfig, tc: TrainConfig, corpus: list, dev: list | None = None,
          out_dir=None, params: dict | None = None, meta: dict | None = None) -> TrainResult:
    """Train on id pairs (targets already carry the end mark).

    Writes ``metrics.csv`` and checkpoints into ``out_dir`` when given: periodic
    ``step-N.ckpt``, ``best.ckpt`` (best dev BLEU) and ``last.ckpt``.
    Non-finite losses or gradients skip the update and are recorded as events;
    after ``abort_after`` events (0 = never) training stops with ``aborted``.
    """
    from . import evaluator, generator

    if not corpus:
        raise InputError("empty training corpus")
    config = dataclasses.replace(model_config, p_d=tc.p_d)
    root = nx.SeededRng(tc.seed)
    if params is None:
        params = init_params(config, root.spawn(1), recurrent_std=tc.recurrent_init_std)
    M.check_params(params, config)
    opt = OptimState.zeros(params)
    data_rng = root.spawn(2)
    drop_rng = root.spawn(3)
    out = Path(out_dir) if out_dir is not None else None
    writer = handle = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        handle = open(out / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(handle)
        writer.writerow(LOG_FIELDS)
    dev_batches = make_batches(dev, max(tc.batch_size, 32)) if dev else None
    result = TrainResult(params, opt, [], [], 0)
    best_dev_loss = math.inf
    stale = 0
    done = False

    def record(row):
        result.history.append(row)
        if writer is not None:
            writer.writerow([_fmt(row.get(k)) for k in LOG_FIELDS])

    def evaluate(step):
        nonlocal best_dev_loss, stale, done
        dev_loss, ter = evaluator.corpus_loss_and_ter(params, config, dev_batches)
        row = {"step": step, "event": "eval", "dev_loss": dev_loss, "dev_ter": ter}
        result.dev_accuracy.append((step, 1.0 - ter))
        if tc.target_accuracy and 1.0 - ter >= tc.target_accuracy and result.reached_target_at is None:
            result.reached_target_at = step
            done = True
        if tc.dev_beam:
            hyps = [generator.translate_ids(src, params, config, beam=tc.dev_beam) for src, _ in dev]
            refs = [[str(t) for t in tgt[:-1]] for _, tgt in dev]
            cands = [[str(t) for t in h] for h in hyps]
            bleu = evaluator.bleu(cands, refs).bleu
            row["dev_bleu"] = bleu
            if result.best_dev_bleu is None or bleu > result.best_dev_bleu:
                result.best_dev_bleu = bleu
                result.best_step = step
                if out is not None:
                    save_checkpoint(out / "best.ckpt", params, config, dict(meta or {}, step=step))
        if tc.patience:
            if dev_loss < best_dev_loss:
                best_dev_loss, stale = dev_loss, 0
            else:
                stale += 1
                if stale >= tc.patience:
                    done = True
        record(row)

    step = 0
    try:
        for epoch in range(tc.max_epochs or 10**9):
            for batch in make_batches(corpus, tc.batch_size, data_rng, tc.max_len):
                # blow-ups are detected below and recorded as events, not warned about
                with np.errstate(all="ignore"):
                    loss, grads, _ = loss_and_grads(params, config, batch, drop_rng, train=True)
                tokens = int(batch.tgt_mask.sum())
                if not _finite(loss, grads):
                    step += 1
                    result.events.append({"step": step, "kind": "non-finite", "loss": loss})
                    record({"step": step, "epoch": epoch, "loss": loss, "tokens": tokens, "l_r": tc.l_r,
                            "l_f": tc.l_f, "event": "non-finite"})
                    log.warning("non-finite loss/gradient at step %d", step)
                    if tc.abort_after and len(result.events) >= tc.abort_after:
                        result.aborted = True
                        done = True
                else:
                    adam_step(params, grads, opt, tc)
                    step += 1
                    record({"step": step, "epoch": epoch, "loss": loss, "tokens": tokens, "l_r": tc.l_r,
                            "l_f": tc.l_f, "event": ""})
                if not done and dev_batches and tc.eval_every and step % tc.eval_every == 0:
                    evaluate(step)
                if out is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                    save_checkpoint(out / f"step-{step}.ckpt", params, config, dict(meta or {}, step=step))
                if tc.max_updates and step >= tc.max_updates:
                    done = True
                if done:
                    break
            if done:
                break
        if dev_batches and not result.aborted and (not tc.eval_every or step % tc.eval_every):
            evaluate(step)
        if out is not None:
            save_checkpoint(out / "last.ckpt", params, config, dict(meta or {}, step=step))
    finally:
        if handle is not None:
            handle.close()
    result.steps = step
    return result

