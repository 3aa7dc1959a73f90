"""Scalar-valued probes around each autodiff primitive, shared by the unit and acceptance suites."""

import numpy as np

from txdiff import autodiff as ad

_W = np.random.default_rng(99).normal(size=(4, 3))
_V = np.random.default_rng(98).normal(size=(3, 4))
_MASK = np.random.default_rng(97).random((3, 4)) < 0.3
_TARGETS = np.array([0, 3, 1])
_IDX = np.array([2, 0, 2, 1])


def _probe(out):
    # weighted sum so every output coordinate matters
    weights = np.linspace(0.5, 1.5, out.data.size).reshape(out.shape)
    return ad.tsum(out * weights)


PRIMITIVES = {
    "matmul": (lambda x: _probe(ad.matmul(x, ad.Tensor(_W))), (3, 4), None),
    "matmul_rhs": (lambda x: _probe(ad.matmul(ad.Tensor(_V), x)), (4, 2), None),
    "add": (lambda x: _probe(x + ad.Tensor(_V) * x), (3, 4), None),
    "mul": (lambda x: _probe(x * x * 0.5 + x * ad.Tensor(_V)), (3, 4), None),
    "div": (lambda x: _probe(ad.Tensor(_V) / (x * x + 1.0)), (3, 4), None),
    "relu": (lambda x: _probe(ad.relu(x)), (3, 4), None),
    "softmax": (lambda x: _probe(ad.softmax(x, axis=-1)), (3, 4), None),
    "softmax_axis0": (lambda x: _probe(ad.softmax(x, axis=0)), (3, 4), None),
    "log_softmax": (lambda x: _probe(ad.log_softmax(x, axis=-1)), (3, 4), None),
    "log": (lambda x: _probe(ad.log(x * x + 0.5)), (3, 4), None),
    "exp": (lambda x: _probe(ad.exp(x * 0.5)), (3, 4), None),
    "sqrt": (lambda x: _probe(ad.sqrt(x * x + 1.0)), (3, 4), None),
    "tanh": (lambda x: _probe(ad.tanh(x)), (3, 4), None),
    "silu": (lambda x: _probe(ad.silu(x)), (3, 4), None),
    "layernorm": (lambda x: _probe(ad.layernorm(x, axis=-1, eps=1e-5)), (3, 4), None),
    "mean": (lambda x: _probe(ad.mean(x * x, axis=1)), (3, 4), None),
    "sum": (lambda x: _probe(ad.tsum(x * x, axis=0, keepdims=True)), (3, 4), None),
    "concat": (lambda x: _probe(ad.concat([x, x * x], axis=1)), (3, 4), None),
    "slice": (lambda x: _probe(x[1:, ::2] * x[:2, 1::2]), (3, 4), None),
    "embedding": (lambda x: _probe(ad.embedding(x, _IDX) ** 2), (3, 4), None),
    "masked_fill": (lambda x: _probe(ad.masked_fill(x * x, _MASK, -2.0)), (3, 4), None),
    "cross_entropy": (lambda x: ad.cross_entropy(x, _TARGETS), (3, 4), None),
    "reshape_transpose": (lambda x: _probe(ad.transpose(x.reshape(2, 6), (1, 0)) ** 3), (3, 4), None),
}


def random_point(shape, rng):
    return rng.normal(size=shape)


# --- alignment losses -------------------------------------------------------

_LOSS_RNG = np.random.default_rng(123)
_B = (_LOSS_RNG.random((4, 24)) < 0.3) * _LOSS_RNG.integers(1, 5, size=(4, 24))
_B[:, 0] = np.maximum(_B[:, 0], 1)  # no all-zero fingerprint rows
_LABELS = ["a", "b", "a", "c"]
_MU_ENC = _LOSS_RNG.normal(size=(4, 5))
_VAR_ENC = _LOSS_RNG.random((4, 5)) + 0.5


def _contrast(x):
    from txdiff.tfe import contrast_loss

    return contrast_loss(x, _B, _LABELS, tau=0.1, lam=0.15)


def _regression(x):
    from txdiff.tfe import regression_loss

    return regression_loss(x, _B, alpha=0.4)


def _local(x):
    from txdiff.tfe import local_loss

    return local_loss(x, _B, _LABELS)


def _global_mu(x):
    from txdiff.tfe import global_loss

    return global_loss(_MU_ENC, _VAR_ENC, x, _VAR_ENC * 1.3, 0.7, 0.2)


def _global_var(x):
    from txdiff.tfe import global_loss

    return global_loss(_MU_ENC, _VAR_ENC, _MU_ENC * 0.5, ad.exp(x), 0.7, 0.2)


LOSSES = {
    "contrast_loss": (_contrast, (4, 24), None),
    "regression_loss": (_regression, (4, 24), None),
    "local_loss": (_local, (4, 24), None),
    "global_loss_mu": (_global_mu, (4, 5), None),
    "global_loss_var": (_global_var, (4, 5), None),
}
