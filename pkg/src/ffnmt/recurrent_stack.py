"""Peephole LSTM layers stacked with fast-forward (F-F) connections.

Each layer is split into an "f" block (a bias-free linear projection to the
4d-wide gate pre-activation) and an "r" block (the recurrent cell). With F-F
enabled, layer k > 1 projects ``[first half of f^{k-1}, dropout(h^{k-1})]``, so
the f blocks of adjacent layers are joined by a purely linear path.

Sequences are T x B x width arrays (or ``Var``). Directions alternate by
layer parity in the interleaved scheme: odd layers of a forward-first column
scan left to right, even layers right to left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError, DomainError

FORWARD = "forward"
BACKWARD = "backward"
INTERLEAVED = "interleaved"
ALL_FORWARD = "all-forward"


@dataclass
class LstmParams:
    """Recurrent ("r" block) parameters: W_r (4d x d) and three peephole vectors."""

    w_r: object
    theta_rho: object
    theta_phi: object
    theta_pi: object

    def __post_init__(self):
        shape = np.shape(nx._val(self.w_r))
        if len(shape) != 2 or shape[0] != 4 * shape[1]:
            raise DimensionError(f"W_r must be 4d x d, got {shape}")
        for name in ("theta_rho", "theta_phi", "theta_pi"):
            if np.shape(nx._val(getattr(self, name))) != (shape[1],):
                raise DimensionError(f"{name} must have width {shape[1]}")

    @property
    def d(self) -> int:
        return np.shape(nx._val(self.w_r))[1]


@dataclass
class LayerParams:
    """One stacked layer: the f-block projection W_f plus its LSTM."""

    w_f: object
    lstm: LstmParams
    direction: str = FORWARD
    k: int = 1

    def __post_init__(self):
        if self.direction not in (FORWARD, BACKWARD):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.k < 1:
            raise ConfigError("layer index k starts at 1")
        out_dim = np.shape(nx._val(self.w_f))[0]
        if out_dim != 4 * self.lstm.d:
            raise DimensionError(f"W_f must produce 4d={4 * self.lstm.d} rows, got {out_dim}")

    @property
    def in_dim(self) -> int:
        return np.shape(nx._val(self.w_f))[1]


@dataclass
class LstmState:
    h: object
    s: object

    @classmethod
    def zeros(cls, d: int, batch: int | None = None) -> "LstmState":
        shape = (d,) if batch is None else (batch, d)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StackConfig:
    depth: int
    cell_width: int
    ff_enabled: bool = True
    direction_scheme: str = INTERLEAVED
    p_d: float = 0.0
    first_direction: str = FORWARD

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("stack depth must be >= 1")
        if self.cell_width < 1:
            raise ConfigError("cell width must be >= 1")
        if self.direction_scheme not in (INTERLEAVED, ALL_FORWARD):
            raise ConfigError(f"unknown direction scheme {self.direction_scheme!r}")
        if self.first_direction not in (FORWARD, BACKWARD):
            raise ConfigError(f"unknown direction {self.first_direction!r}")
        if not 0.0 <= self.p_d < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {self.p_d}")

    def direction(self, k: int) -> str:
        return layer_direction(k, self.direction_scheme, self.first_direction)

    def layer_in_dim(self, k: int, input_dim: int) -> int:
        return layer_in_dim(k, input_dim, self.cell_width, self.ff_enabled)


@dataclass
class LayerOutput:
    f: object
    h: object
    s: object


def layer_direction(k: int, scheme: str = INTERLEAVED, first: str = FORWARD) -> str:
    """Scan direction of layer ``k``.

    The displacement sign is (-1)^k with (-1)^1 = -1 meaning "neighbour t-1",
    so layer 1 of a forward-first column scans forward, layer 2 backward, ...
    A backward-first column flips every layer.
    """
    if scheme == ALL_FORWARD:
        return FORWARD
    forward = (k % 2 == 1) == (first == FORWARD)
    return FORWARD if forward else BACKWARD


def layer_in_dim(k: int, input_dim: int, d: int, ff_enabled: bool) -> int:
    if k == 1:
        return input_dim
    return 3 * d if ff_enabled else d


def half(f):
    """First half of the last axis (2d of the 4d gate pre-activation)."""
    width = np.shape(nx._val(f))[-1]
    if width % 2:
        raise DimensionError(f"Half() needs an even width, got {width}")
    return nx.getitem(f, (Ellipsis, slice(0, width // 2)))


def lstm_step(f_t, prev: LstmState, params: LstmParams) -> LstmState:
    h, s = nx.lstm_cell(f_t, prev.h, prev.s, params.w_r, params.theta_rho, params.theta_phi, params.theta_pi)
    return LstmState(h, s)


def ff_project(f_prev, h_prev, layer: LayerParams, mask=None):
    """F-F input projection ``W_f [Half(f_prev), Dr(h_prev)]`` for layer k > 1.

    ``mask`` is the (already drawn) dropout mask for ``h_prev``; ``None`` means
    no dropout. There is no bias and no nonlinearity on this path.
    """
    if layer.k == 1:
        raise ContractError("layer 1 takes the input projection, not the F-F projection")
    h_in = h_prev if mask is None else nx.mul(h_prev, mask)
    return nx.linear(nx.concat([half(f_prev), h_in], axis=-1), layer.w_f)


def plain_project(h_prev, layer: LayerParams, mask=None):
    """Conventional stacking (no F-F): layer k > 1 projects only ``Dr(h_prev)``."""
    if layer.k == 1:
        raise ContractError("layer 1 takes the input projection")
    h_in = h_prev if mask is None else nx.mul(h_prev, mask)
    return nx.linear(h_in, layer.w_f)


def run_layer(f, layer: LayerParams, mask=None) -> LayerOutput:
    """Scan one layer's LSTM over a precomputed T x B x 4d f sequence."""
    p = layer.lstm
    h, s = nx.lstm_scan(f, p.w_r, p.theta_rho, p.theta_phi, p.theta_pi, mask=mask,
                        reverse=layer.direction == BACKWARD)
    return LayerOutput(f, h, s)


def next_layer(prev: LayerOutput, layer: LayerParams, config: StackConfig, rng=None,
               train: bool = False, mask=None) -> LayerOutput:
    """Compute layer ``layer.k`` from the previous layer's outputs."""
    drop = None
    if train and config.p_d > 0.0:
        drop = nx.dropout_mask(np.shape(nx._val(prev.h)), config.p_d, rng, train)
    if config.ff_enabled:
        f = ff_project(prev.f, prev.h, layer, drop)
    else:
        f = plain_project(prev.h, layer, drop)
    return run_layer(f, layer, mask)


def stack_forward(inputs, config: StackConfig, params: list[LayerParams], rng=None,
                  train: bool = False, mask=None) -> list[LayerOutput]:
    """Run the whole stack; returns per-layer (f, h, s) sequences.

    ``inputs`` is T x B x in (or T x in for a single sequence, in which case
    outputs are T x width too). All outputs are aligned to input positions.
    ``mask`` (T x B) marks real positions of padded batches.
    """
    x = inputs
    if isinstance(x, (list, tuple)):
        if not x:
            raise DomainError("stack_forward on an empty sequence")
        x = nx.stack(list(x), axis=0)
    shape = np.shape(nx._val(x))
    if len(shape) == 0 or shape[0] == 0:
        raise DomainError("stack_forward on an empty sequence")
    if len(params) != config.depth:
        raise ConfigError(f"stack depth {config.depth} but {len(params)} layer params")
    squeeze = len(shape) == 2
    if squeeze:
        x = nx.reshape(x, (shape[0], 1, shape[1]))
        if mask is not None:
            mask = np.asarray(mask).reshape(shape[0], 1)
    for k, layer in enumerate(params, start=1):
        if layer.k != k:
            raise ConfigError(f"layer params out of order: expected k={k}, got {layer.k}")
        if layer.lstm.d != config.cell_width:
            raise DimensionError(f"layer {k} width {layer.lstm.d} != config width {config.cell_width}")
        expected = config.layer_in_dim(k, shape[-1])
        if layer.in_dim != expected:
            raise DimensionError(f"layer {k} W_f takes {layer.in_dim} inputs, expected {expected}")
    outs = [run_layer(nx.linear(x, params[0].w_f), params[0], mask)]
    for layer in params[1:]:
        outs.append(next_layer(outs[-1], layer, config, rng, train, mask))
    if squeeze:
        outs = [LayerOutput(*(nx.reshape(v, (shape[0], -1)) for v in (o.f, o.h, o.s))) for o in outs]
    return outs


def init_stack_params(config: StackConfig, input_dim: int, rng: nx.SeededRng, std: float = 0.07,
                      recurrent_std: float = 0.0) -> list[LayerParams]:
    """Random stack parameters; recurrent parts are zero unless ``recurrent_std`` > 0."""
    d = config.cell_width
    layers = []
    for k in range(1, config.depth + 1):
        w_f = rng.normal((4 * d, config.layer_in_dim(k, input_dim)), std)
        rec = [rng.normal(shape, recurrent_std) if recurrent_std > 0 else np.zeros(shape)
               for shape in ((4 * d, d), (d,), (d,), (d,))]
        layers.append(LayerParams(w_f, LstmParams(*rec), config.direction(k), k))
    return layers


@dataclass
class Topology:
    """Layer counting for an encoder/decoder built from these stacks."""

    n_e: int
    n_d: int
    columns: int = 2

    @property
    def lstm_layers(self) -> int:
        return self.columns * self.n_e + self.n_d

    @property
    def depth(self) -> int:
        # columns run side by side, so depth counts one column plus the decoder
        return self.n_e + self.n_d
