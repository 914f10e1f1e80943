"""Deep-ED / Deep-Att sequence-to-sequence model.

Parameters live in a flat ``dict[str, ndarray]`` (see :func:`param_shapes`
for the naming scheme). Forward functions take a *bound* view of that dict:
either the raw arrays (no-grad evaluation) or tape leaves from
:func:`bind` (training).

Batched tensors are time-major: T x B x width. Source and target id matrices
are B x T with 0 as padding, as produced by :mod:`ffnmt.trainer`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from . import recurrent_stack as rs
from .errors import ConfigError, DimensionError, DomainError

DEEP_ED = "deep_ed"
DEEP_ATT = "deep_att"
VARIANTS = (DEEP_ED, DEEP_ATT)

RECURRENT_KEYS = ("W_r", "theta_rho", "theta_phi", "theta_pi")
EMBEDDING_NAMES = ("src_emb", "tgt_emb")


@dataclass
class ModelConfig:
    variant: str = DEEP_ATT
    n_e: int = 2
    n_d: int = 2
    columns: int = 2
    emb_dim: int = 16
    cell_width: int = 16
    src_vocab_size: int = 20
    tgt_vocab_size: int = 20
    p_d: float = 0.1
    attention_hidden_dim: int | None = None
    projection_factor: int = 4
    ff_enabled: bool = True
    direction_scheme: str = rs.INTERLEAVED

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("n_e", "n_d", "emb_dim", "cell_width", "src_vocab_size", "tgt_vocab_size",
                     "projection_factor"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.columns not in (1, 2):
            raise ConfigError(f"columns must be 1 or 2, got {self.columns}")
        if not 0.0 <= self.p_d < 1.0:
            raise ConfigError(f"p_d must be in [0, 1), got {self.p_d}")
        if self.direction_scheme not in (rs.INTERLEAVED, rs.ALL_FORWARD):
            raise ConfigError(f"unknown direction scheme {self.direction_scheme!r}")
        if self.variant == DEEP_ATT and self.e_width % self.projection_factor:
            raise ConfigError(
                f"representation width {self.e_width} is not divisible by the projection factor "
                f"{self.projection_factor}")
        if self.attention_hidden_dim is not None and self.attention_hidden_dim < 1:
            raise ConfigError("attention_hidden_dim must be >= 1")

    @property
    def e_width(self) -> int:
        """Width of the encoder representation e_t."""
        per_column = self.cell_width + (4 * self.cell_width if self.ff_enabled else 0)
        return self.columns * per_column

    @property
    def context_width(self) -> int:
        if self.variant == DEEP_ED:
            return self.e_width
        return self.e_width // self.projection_factor

    @property
    def att_hidden(self) -> int:
        return self.attention_hidden_dim or self.cell_width

    @property
    def decoder_input_dim(self) -> int:
        return self.context_width + self.emb_dim

    @property
    def topology(self) -> rs.Topology:
        return rs.Topology(self.n_e, self.n_d, self.columns)

    def encoder_stack(self, column: int) -> rs.StackConfig:
        first = rs.FORWARD if column == 0 else rs.BACKWARD
        return rs.StackConfig(self.n_e, self.cell_width, self.ff_enabled, self.direction_scheme,
                              self.p_d, first)

    def decoder_stack(self) -> rs.StackConfig:
        return rs.StackConfig(self.n_d, self.cell_width, self.ff_enabled, rs.ALL_FORWARD, self.p_d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


COLUMN_NAMES = ("a1", "a2")


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every parameter, in canonical (checkpoint) order."""
    d = config.cell_width
    shapes = {
        "src_emb": (config.src_vocab_size, config.emb_dim),
        "tgt_emb": (config.tgt_vocab_size, config.emb_dim),
    }

    def add_stack(prefix, depth, input_dim):
        for k in range(1, depth + 1):
            shapes[f"{prefix}.{k}.W_f"] = (4 * d, rs.layer_in_dim(k, input_dim, d, config.ff_enabled))
            shapes[f"{prefix}.{k}.W_r"] = (4 * d, d)
            for key in ("theta_rho", "theta_phi", "theta_pi"):
                shapes[f"{prefix}.{k}.{key}"] = (d,)

    for c in range(config.columns):
        add_stack(f"enc.{COLUMN_NAMES[c]}", config.n_e, config.emb_dim)
    add_stack("dec", config.n_d, config.decoder_input_dim)
    if config.variant == DEEP_ATT:
        shapes["att.W_p"] = (config.context_width, config.e_width)
        shapes["att.W_a"] = (config.att_hidden, d)
        shapes["att.U_a"] = (config.att_hidden, config.context_width)
        shapes["att.v"] = (config.att_hidden,)
    shapes["out.W"] = (config.tgt_vocab_size, d)
    return shapes


def is_recurrent(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in RECURRENT_KEYS


def is_embedding(name: str) -> bool:
    return name in EMBEDDING_NAMES


def check_params(params: dict, config: ModelConfig) -> None:
    shapes = param_shapes(config)
    missing = set(shapes) - set(params)
    extra = set(params) - set(shapes)
    if missing or extra:
        raise ConfigError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in shapes.items():
        if np.shape(params[name]) != shape:
            raise DimensionError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")


def bind(params: dict, tape: nx.Tape | None) -> dict:
    """Leaves on ``tape`` for every parameter (or the arrays themselves if no tape)."""
    if tape is None:
        return params
    return {name: tape.leaf(value, name) for name, value in params.items()}


def stack_layers(bound: dict, prefix: str, stack: rs.StackConfig) -> list[rs.LayerParams]:
    layers = []
    for k in range(1, stack.depth + 1):
        p = f"{prefix}.{k}"
        lstm = rs.LstmParams(bound[f"{p}.W_r"], bound[f"{p}.theta_rho"], bound[f"{p}.theta_phi"],
                             bound[f"{p}.theta_pi"])
        layers.append(rs.LayerParams(bound[f"{p}.W_f"], lstm, stack.direction(k), k))
    return layers


# ---------------------------------------------------------------------------
# Encoder and interface
# ---------------------------------------------------------------------------


@dataclass
class EncoderOutput:
    """Top-layer sequences per column (T x B x d and T x B x 4d) plus the T x B mask."""

    h: list
    f: list
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def length(self) -> int:
        return self.mask.shape[0]


def encode_batch(bound: dict, config: ModelConfig, src: np.ndarray, src_mask: np.ndarray,
                 rng: nx.SeededRng | None = None, train: bool = False) -> EncoderOutput:
    src = np.asarray(src, dtype=np.int64)
    if src.ndim != 2 or src.shape[1] == 0:
        raise DomainError("empty source")
    if src.min() < 0 or src.max() >= config.src_vocab_size:
        raise DomainError(f"source id outside [0, {config.src_vocab_size})")
    mask = np.asarray(src_mask, dtype=np.float64).T
    lengths = mask.sum(axis=0).astype(np.int64)
    if (lengths < 1).any():
        raise DomainError("empty source sequence in batch")
    x = nx.take_rows(bound["src_emb"], src.T)
    hs, fs = [], []
    for c in range(config.columns):
        stack = config.encoder_stack(c)
        layers = stack_layers(bound, f"enc.{COLUMN_NAMES[c]}", stack)
        top = rs.stack_forward(x, stack, layers, rng, train, mask)[-1]
        hs.append(top.h)
        fs.append(top.f)
    return EncoderOutput(hs, fs, mask, lengths)


def encode(source_ids, params: dict, config: ModelConfig, rng=None, train: bool = False) -> EncoderOutput:
    """Encode a single source sentence (batch of one)."""
    ids = np.asarray(list(source_ids), dtype=np.int64)
    if ids.size == 0:
        raise DomainError("empty source")
    return encode_batch(params, config, ids[None, :], np.ones((1, ids.size)), rng, train)


def interface_ed(enc: EncoderOutput, config: ModelConfig | None = None):
    """Deep-ED representation, constant across decoder steps (B x e_width).

    ``[h_last(a1), Max h(a2), Max f(a1), Max f(a2)]``; columns and f terms that
    the configuration disables are simply absent.
    """
    ff = True if config is None else config.ff_enabled
    parts = [nx.gather_steps(enc.h[0], enc.lengths - 1)]
    if len(enc.h) > 1:
        parts.append(nx.masked_max(enc.h[1], enc.mask))
    if ff:
        parts.extend(nx.masked_max(f, enc.mask) for f in enc.f)
    return nx.concat(parts, axis=-1)


def representation_sequence(enc: EncoderOutput, config: ModelConfig):
    """Deep-Att e_t for every source position: ``[h(a1), h(a2), f(a1), f(a2)]`` (T x B x e_width)."""
    parts = list(enc.h)
    if config.ff_enabled:
        parts.extend(enc.f)
    return nx.concat(parts, axis=-1)


@dataclass
class AttentionMemory:
    """Per-sentence attention precomputation: projected e_t and their alignment keys."""

    proj: object  # T x B x context_width, i.e. W_p e_t
    keys: object  # T x B x att_hidden, i.e. U_a W_p e_t
    mask: np.ndarray


def attention_memory(bound: dict, config: ModelConfig, enc: EncoderOutput) -> AttentionMemory:
    proj = nx.linear(representation_sequence(enc, config), bound["att.W_p"])
    return AttentionMemory(proj, nx.linear(proj, bound["att.U_a"]), enc.mask)


def attend(bound: dict, memory: AttentionMemory, h_dec_prev):
    """Bahdanau-style attention: ``a(u, h) = v . tanh(W_a h + U_a u)``.

    Returns ``(c_t, alphas)`` with c_t B x context_width and alphas T x B.
    """
    query = nx.linear(h_dec_prev, bound["att.W_a"])
    hidden = nx.tanh(nx.add(memory.keys, nx.reshape(query, (1,) + np.shape(nx._val(query)))))
    v = bound["att.v"]
    scores = nx.linear(hidden, nx.reshape(v, (1, np.shape(nx._val(v))[0])))
    scores = nx.reshape(scores, np.shape(nx._val(scores))[:2])
    alphas = nx.masked_softmax(scores, memory.mask, axis=0)
    shape = np.shape(nx._val(alphas))
    weighted = nx.mul(nx.reshape(alphas, shape + (1,)), memory.proj)
    return nx.total(weighted, axis=0), alphas


def interface_att(enc: EncoderOutput, h_dec_prev, params: dict, config: ModelConfig):
    """Attention context for one decoder step given the previous first-layer output."""
    d = config.cell_width
    if np.shape(nx._val(h_dec_prev))[-1] != d:
        raise DimensionError(f"decoder state width {np.shape(nx._val(h_dec_prev))[-1]} != {d}")
    return attend(params, attention_memory(params, config, enc), h_dec_prev)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------


@dataclass
class DecoderState:
    layers: list  # one LstmState per decoder layer, each B x d

    @classmethod
    def zeros(cls, config: ModelConfig, batch: int) -> "DecoderState":
        return cls([rs.LstmState.zeros(config.cell_width, batch) for _ in range(config.n_d)])

    @property
    def h1(self):
        return self.layers[0].h

    def select(self, index) -> "DecoderState":
        """Reorder/duplicate batch rows (numpy arrays only)."""
        return DecoderState([rs.LstmState(st.h[index], st.s[index]) for st in self.layers])


def target_embedding(bound: dict, config: ModelConfig, y_prev, batch: int):
    """Embedding of the previous target word; ``None`` is the start mark (zero vector)."""
    if y_prev is None:
        return np.zeros((batch, config.emb_dim))
    ids = np.asarray(y_prev, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= config.tgt_vocab_size:
        raise DomainError(f"target id outside [0, {config.tgt_vocab_size})")
    return nx.take_rows(bound["tgt_emb"], ids)


def decode_step(y_prev, c_t, state: DecoderState, bound: dict, config: ModelConfig,
                rng=None, train: bool = False):
    """One decoder time step for all n_d layers.

    Returns ``(logits, new_state, h1)``; logits is B x tgt_vocab_size.
    """
    batch = np.shape(nx._val(state.h1))[0]
    if not isinstance(c_t, nx.Var) and np.shape(c_t)[0] != batch:
        c_t = np.broadcast_to(c_t, (batch, np.shape(c_t)[-1]))
    x = nx.concat([c_t, target_embedding(bound, config, y_prev, batch)], axis=-1)
    stack = config.decoder_stack()
    layers = stack_layers(bound, "dec", stack)
    f = nx.linear(x, layers[0].w_f)
    new = [rs.lstm_step(f, state.layers[0], layers[0].lstm)]
    for layer, prev in zip(layers[1:], state.layers[1:]):
        drop = None
        if train and stack.p_d > 0.0:
            drop = nx.dropout_mask((batch, config.cell_width), stack.p_d, rng, train)
        if stack.ff_enabled:
            f = rs.ff_project(f, new[-1].h, layer, drop)
        else:
            f = rs.plain_project(new[-1].h, layer, drop)
        new.append(rs.lstm_step(f, prev, layer.lstm))
    logits = nx.linear(new[-1].h, bound["out.W"])
    return logits, DecoderState(new), new[0].h


def decoder_context(bound: dict, config: ModelConfig, enc: EncoderOutput):
    """What the decoder attends to: constant e (Deep-ED) or an attention memory (Deep-Att)."""
    if config.variant == DEEP_ED:
        return interface_ed(enc, config)
    return attention_memory(bound, config, enc)


def context_for_step(bound: dict, context, state: DecoderState):
    """c_t and attention weights (None for Deep-ED) for the next step."""
    if isinstance(context, AttentionMemory):
        return attend(bound, context, state.h1)
    return context, None


def teacher_forced_logits(bound: dict, config: ModelConfig, enc: EncoderOutput, tgt: np.ndarray,
                          rng=None, train: bool = False):
    """Decoder logits (T' x B x V) conditioned on the gold history."""
    tgt = np.asarray(tgt, dtype=np.int64)
    batch, n_steps = tgt.shape
    if tgt.min() < 0 or tgt.max() >= config.tgt_vocab_size:
        raise DomainError(f"target id outside [0, {config.tgt_vocab_size})")
    emb = nx.take_rows(bound["tgt_emb"], tgt.T)
    y_prev = nx.concat([np.zeros((1, batch, config.emb_dim)), nx.getitem(emb, slice(0, n_steps - 1))], axis=0)
    stack = config.decoder_stack()
    layers = stack_layers(bound, "dec", stack)
    context = decoder_context(bound, config, enc)
    if config.variant == DEEP_ED:
        width = config.context_width
        c = nx.mul(np.ones((n_steps, 1, 1)), nx.reshape(context, (1, batch, width)))
        outs = rs.stack_forward(nx.concat([c, y_prev], axis=-1), stack, layers, rng, train)
        top = outs[-1]
    else:
        first = layers[0]
        p = first.lstm
        state = rs.LstmState.zeros(config.cell_width, batch)
        fs, hs, ss = [], [], []
        for t in range(n_steps):
            c_t, _ = attend(bound, context, state.h)
            f_t = nx.linear(nx.concat([c_t, nx.getitem(y_prev, t)], axis=-1), first.w_f)
            state = rs.lstm_step(f_t, state, p)
            fs.append(f_t)
            hs.append(state.h)
            ss.append(state.s)
        top = rs.LayerOutput(nx.stack(fs), nx.stack(hs), nx.stack(ss))
        for layer in layers[1:]:
            top = rs.next_layer(top, layer, stack, rng, train)
    return nx.linear(top.h, bound["out.W"])


def batch_nll(bound: dict, config: ModelConfig, src, src_mask, tgt, tgt_mask, rng=None,
              train: bool = False):
    """Summed target NLL of a padded batch plus per-position argmax-correct flags (B x T').

    Targets must include the end mark. Padded positions contribute nothing.
    """
    tgt = np.asarray(tgt, dtype=np.int64)
    if tgt.ndim != 2 or tgt.shape[1] == 0:
        raise DomainError("empty target")
    tgt_mask = np.asarray(tgt_mask, dtype=np.float64)
    enc = encode_batch(bound, config, src, src_mask, rng, train)
    logits = teacher_forced_logits(bound, config, enc, tgt, rng, train)
    n_steps, batch, vocab = np.shape(nx._val(logits))
    flat = nx.reshape(logits, (n_steps * batch, vocab))
    loss = nx.cross_entropy(flat, tgt.T.ravel(), tgt_mask.T.ravel())
    correct = (nx._val(logits).argmax(axis=-1) == tgt.T).T
    return loss, correct & (tgt_mask > 0)


def sequence_nll(source_ids, target_ids, params: dict, config: ModelConfig, rng=None,
                 train: bool = False):
    """``-sum_j log p(y_j | gold history, x)`` for one pair; target includes the end mark.

    Returns ``(loss, flags)`` where flags[j] says whether the argmax prediction
    at position j equals the gold token.
    """
    src = list(source_ids)
    tgt = list(target_ids)
    if not tgt:
        raise DomainError("empty target")
    if not src:
        raise DomainError("empty source")
    loss, correct = batch_nll(params, config, np.array([src]), np.ones((1, len(src))), np.array([tgt]),
                              np.ones((1, len(tgt))), rng, train)
    return float(loss), [bool(c) for c in correct[0]]
