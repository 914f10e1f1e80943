"""Finite-difference verification of full-model gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import numerics as nx
from .trainer import init_params, loss_and_grads, pad_batch

FD_STEP = 1e-5


@dataclass
class GradcheckResult:
    variant: str
    instance: int
    max_rel_error: float
    worst_param: str
    coords: int


def random_instance(config: M.ModelConfig, rng: nx.SeededRng, batch: int = 2, max_len: int = 4,
                    std: float = 0.5) -> tuple[dict, list]:
    """Random parameters (recurrent parts included) and a small padded id batch."""
    params = init_params(config, rng.spawn(0), std=std, recurrent_std=std)
    draw = rng.spawn(1)
    pairs = []
    for _ in range(batch):
        ns, nt = (int(n) for n in draw.integers(1, max_len + 1, size=2))
        src = [int(i) for i in draw.integers(3, config.src_vocab_size, size=ns)]
        tgt = [int(i) for i in draw.integers(3, config.tgt_vocab_size, size=nt)] + [2]
        pairs.append((src, tgt))
    return params, pairs


def check_model(config: M.ModelConfig, params: dict, pairs: list, rng: nx.SeededRng,
                coords_per_param: int = 8, step: float = FD_STEP, floor: float = 1e-3) -> tuple[float, str, int]:
    """Compare tape gradients of the summed batch NLL with central differences.

    Probes ``coords_per_param`` random coordinates of every parameter tensor
    (all of them when the tensor is smaller). Returns (max relative error,
    parameter holding it, number of coordinates checked).
    """
    batch = pad_batch(pairs)
    _, grads, _ = loss_and_grads(params, config, batch, train=False, normalize=False)

    def loss():
        value, _ = M.batch_nll(params, config, batch.src, batch.src_mask, batch.tgt, batch.tgt_mask)
        return float(value)

    worst, worst_name, count = 0.0, "", 0
    for i, (name, value) in enumerate(params.items()):
        flat = list(np.ndindex(value.shape))
        if len(flat) > coords_per_param:
            pick = rng.spawn(i).permutation(len(flat))[:coords_per_param]
            flat = [flat[j] for j in pick]
        numeric = nx.numeric_gradient(loss, value, step, flat)
        analytic = grads.get(name, np.zeros_like(value))
        idx = tuple(np.array(flat).T)
        err = nx.relative_error(analytic[idx], numeric[idx], floor).max()
        count += len(flat)
        if err > worst:
            worst, worst_name = float(err), name
    return worst, worst_name, count


def run_gradcheck(n_e: int = 2, n_d: int = 2, d: int = 4, emb: int = 4, vocab: int = 20,
                  variants=(M.DEEP_ED, M.DEEP_ATT), instances: int = 10, seed: int = 0,
                  coords_per_param: int = 8) -> list[GradcheckResult]:
    results = []
    root = nx.SeededRng(seed)
    for v, variant in enumerate(variants):
        config = M.ModelConfig(variant=variant, n_e=n_e, n_d=n_d, emb_dim=emb, cell_width=d,
                               src_vocab_size=vocab, tgt_vocab_size=vocab, p_d=0.0)
        for i in range(instances):
            rng = root.spawn(v, i)
            params, pairs = random_instance(config, rng)
            err, name, count = check_model(config, params, pairs, rng.spawn(2), coords_per_param)
            results.append(GradcheckResult(variant, i, err, name, count))
    return results
