import numpy as np
import pytest

from ffnmt import model as M
from ffnmt import numerics as nx
from ffnmt.trainer import init_params


@pytest.fixture
def rng():
    return nx.SeededRng(1234)


def tiny_config(variant=M.DEEP_ATT, **kw):
    base = dict(variant=variant, n_e=2, n_d=2, emb_dim=4, cell_width=4, src_vocab_size=12,
                tgt_vocab_size=10, p_d=0.0)
    base.update(kw)
    return M.ModelConfig(**base)


def tiny_model(variant=M.DEEP_ATT, seed=0, std=0.5, **kw):
    config = tiny_config(variant, **kw)
    return init_params(config, nx.SeededRng(seed), std=std, recurrent_std=std), config


def check_grads(fn, leaves: dict, tol=1e-6, step=1e-6):
    """Compare tape gradients of ``fn(tape, vars)`` against central differences on every entry."""
    tape = nx.Tape()
    vs = {k: tape.leaf(v, k) for k, v in leaves.items()}
    grads = tape.backward(fn(tape, vs))

    def scalar():
        return float(np.sum(nx._val(fn(None, leaves))))

    for name, value in leaves.items():
        numeric = nx.numeric_gradient(scalar, value, step)
        err = nx.relative_error(grads.get(name, np.zeros_like(value)), numeric, 1e-6)
        assert err.max() <= tol, (name, err.max())
