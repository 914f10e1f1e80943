"""Dense float64 arithmetic with a small reverse-mode differentiation tape.

Tensors are plain ``numpy.ndarray`` values in C (row-major) order. Every op in
this module accepts either arrays or :class:`Var` handles. When no argument is a
``Var`` the op is a pure numpy computation and returns an array, which gives a
cheap no-grad path for decoding and evaluation. When any argument is a ``Var``
the op records a backward closure on that variable's :class:`Tape`.

The LSTM cell and the full time scan are fused primitives with hand-written
backward passes; everything else is elementary.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, StateError

DTYPE = np.float64


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


class SeededRng:
    """Deterministic random stream built on numpy's PCG64.

    PCG64 produces the same stream on every platform for a given seed.
    ``spawn`` derives independent child streams keyed by small integers so that
    e.g. parameter init and dropout never share draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * std

    def random(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> None:
        order = self._gen.permutation(len(items))
        items[:] = [items[i] for i in order]

    def spawn(self, *keys: int) -> "SeededRng":
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in keys))
        return SeededRng(int(ss.generate_state(1, np.uint64)[0]))


def dropout_mask(shape, p_d: float, rng: SeededRng | None, train: bool = True) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p_d``, else ``1/(1-p_d)``.

    Evaluation mode (``train=False``) and ``p_d == 0`` give the all-ones mask.
    """
    if not 0.0 <= p_d < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p_d}")
    if not train or p_d == 0.0:
        return np.ones(shape, dtype=DTYPE)
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    keep = rng.random(shape) >= p_d
    return keep.astype(DTYPE) / (1.0 - p_d)


def check_finite(x, what: str = "value") -> None:
    v = x.value if isinstance(x, Var) else np.asarray(x)
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite {what} (nan={int(np.isnan(v).sum())}, inf={int(np.isinf(v).sum())})")


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Var:
    """A tape-tracked tensor. ``grad`` is filled in by :meth:`Tape.backward`."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", name: str | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    __array_priority__ = 100.0

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Records differentiable ops in execution order.

    A tape is single-use: one forward pass, then one ``backward``.
    """

    def __init__(self):
        self._nodes: list[tuple[tuple, tuple, Callable]] = []
        self._consumed = False

    def leaf(self, value, name: str | None = None) -> Var:
        if self._consumed:
            raise StateError("tape already consumed by backward()")
        return Var(np.asarray(value, dtype=DTYPE), self, name)

    def _record(self, inputs: tuple, outputs: tuple, backward: Callable) -> None:
        if self._consumed:
            raise StateError("tape already consumed by backward()")
        self._nodes.append((inputs, outputs, backward))

    def backward(self, loss: Var, output_grad=None) -> dict[str, np.ndarray]:
        """Propagate gradients from ``loss`` back to every leaf.

        Returns a mapping from leaf name to gradient for every named leaf that
        received one. Unnamed leaves still get their ``.grad`` populated.
        """
        if self._consumed:
            raise StateError("backward() called twice on the same tape")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise StateError("backward() needs a Var produced on this tape")
        if not self._nodes:
            raise StateError("backward() before any forward op was recorded")
        if output_grad is None:
            output_grad = np.ones_like(loss.value)
        else:
            output_grad = np.asarray(output_grad, dtype=DTYPE)
            if output_grad.shape != loss.shape:
                raise DimensionError(f"output_grad shape {output_grad.shape} != loss shape {loss.shape}")
        loss._accumulate(output_grad)
        leaves: dict[int, Var] = {}
        for inputs, outputs, fn in reversed(self._nodes):
            gouts = [o.grad for o in outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [np.zeros_like(o.value) if g is None else g for o, g in zip(outputs, gouts)]
            grads = fn(*gouts)
            for inp, g in zip(inputs, grads):
                if g is not None and isinstance(inp, Var):
                    inp._accumulate(g)
                    if inp.name is not None:
                        leaves[id(inp)] = inp
        self._consumed = True
        self._nodes = []
        return {v.name: v.grad for v in leaves.values()}


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise StateError("ops cannot mix Vars from different tapes")
    return tape


def _emit(tape: Tape, inputs: tuple, value: np.ndarray, backward: Callable) -> Var:
    out = Var(value, tape)
    tape._record(inputs, (out,), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape(x) -> tuple:
    return np.shape(_val(x))


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = _val(a), _val(b)
    y = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return y
    sa, sb = np.shape(av), np.shape(bv)
    return _emit(tape, (a, b), y, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    y = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return y
    sa, sb = np.shape(av), np.shape(bv)
    return _emit(tape, (a, b), y, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    y = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return y
    sa, sb = np.shape(av), np.shape(bv)
    return _emit(tape, (a, b), y, lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def neg(a):
    y = -_val(a)
    tape = _tape_of(a)
    if tape is None:
        return y
    return _emit(tape, (a,), y, lambda g: (-g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # 1/(1+e^-x) written through tanh so large |x| never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x):
    y = _sigmoid(_val(x))
    tape = _tape_of(x)
    if tape is None:
        return y
    return _emit(tape, (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x):
    y = np.tanh(_val(x))
    tape = _tape_of(x)
    if tape is None:
        return y
    return _emit(tape, (x,), y, lambda g: (g * (1.0 - y * y),))


def exp(x):
    y = np.exp(_val(x))
    tape = _tape_of(x)
    if tape is None:
        return y
    return _emit(tape, (x,), y, lambda g: (g * y,))


def log(x):
    xv = _val(x)
    y = np.log(xv)
    tape = _tape_of(x)
    if tape is None:
        return y
    return _emit(tape, (x,), y, lambda g: (g / xv,))


def activations(x, kind: str):
    """Elementwise ``sigmoid`` or ``tanh``."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# Linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product of an ``m x k`` and a ``k x n`` matrix."""
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    y = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return y
    return _emit(tape, (a, b), y, lambda g: (g @ bv.T, av.T @ g))


def linear(x, w):
    """Apply ``w`` (out x in) to the last axis of ``x`` (... x in)."""
    xv, wv = _val(x), _val(w)
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {xv.shape}, weight {wv.shape}")
    y = xv @ wv.T
    tape = _tape_of(x, w)
    if tape is None:
        return y

    def backward(g):
        gx = g @ wv
        gw = g.reshape(-1, wv.shape[0]).T @ xv.reshape(-1, wv.shape[1])
        return gx, gw

    return _emit(tape, (x, w), y, backward)


def concat(xs: Sequence, axis: int = -1):
    vals = [_val(x) for x in xs]
    try:
        y = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shape mismatch: {[v.shape for v in vals]}") from exc
    tape = _tape_of(*xs)
    if tape is None:
        return y
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(tape, tuple(xs), y, backward)


def stack(xs: Sequence, axis: int = 0):
    vals = [_val(x) for x in xs]
    try:
        y = np.stack(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack shape mismatch: {[v.shape for v in vals]}") from exc
    tape = _tape_of(*xs)
    if tape is None:
        return y

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _emit(tape, tuple(xs), y, backward)


def getitem(x, index):
    xv = _val(x)
    y = xv[index]
    tape = _tape_of(x)
    if tape is None:
        return y

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        gx = np.zeros_like(xv)
        if fancy:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return _emit(tape, (x,), np.array(y), backward)


def reshape(x, shape):
    xv = _val(x)
    y = xv.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return y
    return _emit(tape, (x,), y, lambda g: (g.reshape(xv.shape),))


def total(x, axis=None):
    """Sum over ``axis`` (all axes by default)."""
    xv = _val(x)
    y = np.asarray(xv.sum(axis=axis), dtype=DTYPE)
    tape = _tape_of(x)
    if tape is None:
        return y

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _emit(tape, (x,), y, backward)


def take_rows(table, ids):
    """Row lookup ``table[ids]`` (embedding). Gradient scatters back with add."""
    tv = _val(table)
    ids = np.asarray(ids, dtype=np.int64)
    y = tv[ids]
    tape = _tape_of(table)
    if tape is None:
        return y

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids.ravel(), g.reshape(-1, tv.shape[1]))
        return (gt,)

    return _emit(tape, (table,), y, backward)


def masked_max(x, mask):
    """Per-dimension maximum over axis 0 of ``x`` (T x B x w), ignoring ``mask == 0``."""
    xv = _val(x)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=0).all():
        raise DimensionError("masked_max needs at least one unmasked step per column")
    filled = np.where(mask[..., None], xv, -np.inf)
    arg = filled.argmax(axis=0)
    y = np.take_along_axis(xv, arg[None], axis=0)[0]
    tape = _tape_of(x)
    if tape is None:
        return y

    def backward(g):
        gx = np.zeros_like(xv)
        np.put_along_axis(gx, arg[None], g[None], axis=0)
        return (gx,)

    return _emit(tape, (x,), y, backward)


def gather_steps(x, index):
    """Select ``x[index[b], b]`` from a T x B x w tensor."""
    xv = _val(x)
    index = np.asarray(index, dtype=np.int64)
    b = np.arange(xv.shape[1])
    y = xv[index, b]
    tape = _tape_of(x)
    if tape is None:
        return y

    def backward(g):
        gx = np.zeros_like(xv)
        gx[index, b] = g
        return (gx,)

    return _emit(tape, (x,), y, backward)


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------


def _log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    m = v.max(axis=axis, keepdims=True)
    shifted = v - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis: int = -1):
    """Max-shifted softmax along ``axis``."""
    v = _val(logits)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("softmax of an empty tensor")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    tape = _tape_of(logits)
    if tape is None:
        return y
    return _emit(tape, (logits,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(logits, axis: int = -1):
    v = _val(logits)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty tensor")
    y = _log_softmax(v, axis)
    tape = _tape_of(logits)
    if tape is None:
        return y
    p = np.exp(y)
    return _emit(tape, (logits,), y, lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def masked_softmax(scores, mask, axis: int = 0):
    """Softmax along ``axis`` where ``mask == 0`` entries get zero weight."""
    v = _val(scores)
    mask = np.asarray(mask, dtype=bool)
    shifted = np.where(mask, v, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)
    tape = _tape_of(scores)
    if tape is None:
        return y
    return _emit(tape, (scores,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def cross_entropy(logits, targets, weights=None):
    """Summed weighted negative log-likelihood of ``targets`` under softmax(``logits``).

    ``logits`` is N x V, ``targets`` N integer ids, ``weights`` N (default ones).
    """
    v = _val(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if v.ndim != 2 or targets.shape != (v.shape[0],):
        raise DimensionError(f"cross_entropy shapes: logits {v.shape}, targets {targets.shape}")
    w = np.ones(v.shape[0], dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    lsm = _log_softmax(v, axis=-1)
    rows = np.arange(v.shape[0])
    y = np.asarray(-(w * lsm[rows, targets]).sum(), dtype=DTYPE)
    tape = _tape_of(logits)
    if tape is None:
        return y

    def backward(g):
        gl = np.exp(lsm)
        gl[rows, targets] -= 1.0
        return (gl * (w * g)[:, None],)

    return _emit(tape, (logits,), y, backward)


# ---------------------------------------------------------------------------
# Fused LSTM kernels
# ---------------------------------------------------------------------------
#
# Gate layout of the pre-activation vector is [z, z_rho, z_phi, z_pi]:
#   s = tanh(z) * sig(z_rho + s_prev*th_rho) + sig(z_phi + s_prev*th_phi) * s_prev
#   h = tanh(s) * sig(z_pi + s*th_pi)


def _cell_forward(f, h_prev, s_prev, w_r, th_rho, th_phi, th_pi):
    d = h_prev.shape[-1]
    zall = f + h_prev @ w_r.T
    z, z_rho, z_phi, z_pi = zall[..., :d], zall[..., d:2 * d], zall[..., 2 * d:3 * d], zall[..., 3 * d:]
    a_in = np.tanh(z)
    g_rho = _sigmoid(z_rho + s_prev * th_rho)
    g_phi = _sigmoid(z_phi + s_prev * th_phi)
    s = a_in * g_rho + g_phi * s_prev
    a_out = np.tanh(s)
    g_pi = _sigmoid(z_pi + s * th_pi)
    h = a_out * g_pi
    return h, s, (h_prev, s_prev, a_in, g_rho, g_phi, s, a_out, g_pi)


def _cell_backward(dh, ds, cache, w_r, th_rho, th_phi, th_pi):
    h_prev, s_prev, a_in, g_rho, g_phi, s, a_out, g_pi = cache
    dz_pi = dh * a_out * g_pi * (1.0 - g_pi)
    ds = ds + dh * g_pi * (1.0 - a_out * a_out) + dz_pi * th_pi
    dz = ds * g_rho * (1.0 - a_in * a_in)
    dz_rho = ds * a_in * g_rho * (1.0 - g_rho)
    dz_phi = ds * s_prev * g_phi * (1.0 - g_phi)
    ds_prev = ds * g_phi + dz_rho * th_rho + dz_phi * th_phi
    d = h_prev.shape[-1]
    dzall = np.concatenate([dz, dz_rho, dz_phi, dz_pi], axis=-1)
    dh_prev = dzall @ w_r
    flat_h = h_prev.reshape(-1, d)
    dw_r = dzall.reshape(-1, 4 * d).T @ flat_h
    dth_rho = (dz_rho * s_prev).reshape(-1, d).sum(axis=0)
    dth_phi = (dz_phi * s_prev).reshape(-1, d).sum(axis=0)
    dth_pi = (dz_pi * s).reshape(-1, d).sum(axis=0)
    return dzall, dh_prev, ds_prev, dw_r, dth_rho, dth_phi, dth_pi


def _check_cell_shapes(f, h, s, w_r, th_rho, th_phi, th_pi):
    d = h.shape[-1]
    if s.shape != h.shape:
        raise DimensionError(f"LSTM state widths differ: h {h.shape}, s {s.shape}")
    if w_r.shape != (4 * d, d):
        raise DimensionError(f"recurrent matrix must be {(4 * d, d)}, got {w_r.shape}")
    for name, th in (("theta_rho", th_rho), ("theta_phi", th_phi), ("theta_pi", th_pi)):
        if th.shape != (d,):
            raise DimensionError(f"{name} must be ({d},), got {th.shape}")
    if f.shape[-1] != 4 * d:
        raise DimensionError(f"LSTM input must be 4d={4 * d} wide, got {f.shape[-1]}")


def lstm_cell(f, h_prev, s_prev, w_r, th_rho, th_phi, th_pi):
    """One peephole LSTM step. Returns ``(h, s)``; a single fused tape node."""
    args = (f, h_prev, s_prev, w_r, th_rho, th_phi, th_pi)
    vals = [_val(a) for a in args]
    _check_cell_shapes(*vals)
    h, s, cache = _cell_forward(*vals)
    tape = _tape_of(*args)
    if tape is None:
        return h, s
    h_out, s_out = Var(h, tape), Var(s, tape)

    def backward(dh, ds):
        df, dh_prev, ds_prev, dw, dr, dp, dq = _cell_backward(dh, ds, cache, *vals[3:])
        return df, dh_prev, ds_prev, dw, dr, dp, dq

    tape._record(args, (h_out, s_out), backward)
    return h_out, s_out


def lstm_scan(f, w_r, th_rho, th_phi, th_pi, mask=None, reverse: bool = False):
    """Run the LSTM over a T x B x 4d input sequence from a zero state.

    ``reverse`` scans from the last position to the first, so position ``t``
    sees its neighbour ``t+1``. Where ``mask`` (T x B) is 0 the state is reset
    to zero; padded tails therefore act as the zero boundary for a reverse scan.
    Returns ``(h, s)``, each T x B x d, aligned to input positions.
    """
    args = (f, w_r, th_rho, th_phi, th_pi)
    fv, wv, rv, pv, qv = (_val(a) for a in args)
    if fv.ndim != 3:
        raise DimensionError(f"lstm_scan input must be T x B x 4d, got {fv.shape}")
    n_steps, batch, _ = fv.shape
    d = wv.shape[1]
    zero = np.zeros((batch, d), dtype=DTYPE)
    _check_cell_shapes(fv[0], zero, zero, wv, rv, pv, qv)
    m = None if mask is None else np.asarray(mask, dtype=DTYPE)[..., None]
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    hs = np.empty((n_steps, batch, d), dtype=DTYPE)
    ss = np.empty((n_steps, batch, d), dtype=DTYPE)
    caches = [None] * n_steps
    h, s = zero, zero
    for t in order:
        h, s, caches[t] = _cell_forward(fv[t], h, s, wv, rv, pv, qv)
        if m is not None:
            h, s = h * m[t], s * m[t]
        hs[t], ss[t] = h, s
    tape = _tape_of(*args)
    if tape is None:
        return hs, ss
    h_out, s_out = Var(hs, tape), Var(ss, tape)

    def backward(dhs, dss):
        df = np.empty_like(fv)
        dw = np.zeros_like(wv)
        dr, dp, dq = np.zeros_like(rv), np.zeros_like(pv), np.zeros_like(qv)
        dh_carry = np.zeros((batch, d), dtype=DTYPE)
        ds_carry = np.zeros((batch, d), dtype=DTYPE)
        for t in reversed(order):
            dh = dhs[t] + dh_carry
            ds = dss[t] + ds_carry
            if m is not None:
                dh, ds = dh * m[t], ds * m[t]
            df[t], dh_carry, ds_carry, gw, gr, gp, gq = _cell_backward(dh, ds, caches[t], wv, rv, pv, qv)
            dw += gw
            dr += gr
            dp += gp
            dq += gq
        return df, dw, dr, dp, dq

    tape._record(args, (h_out, s_out), backward)
    return h_out, s_out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Per-coordinate ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps coordinates whose true gradient is ~0 from turning
    round-off into huge relative errors.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn: Callable[[], float], array: np.ndarray, step: float = 1e-5,
                     coords: Iterable[tuple] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``array`` (mutated in place, then restored).

    Only ``coords`` are probed when given; other entries of the result stay 0.
    """
    grad = np.zeros_like(array)
    it = coords if coords is not None else np.ndindex(array.shape)
    for idx in it:
        old = array[idx]
        array[idx] = old + step
        up = fn()
        array[idx] = old - step
        down = fn()
        array[idx] = old
        grad[idx] = (up - down) / (2.0 * step)
    return grad
