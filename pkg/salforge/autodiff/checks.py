import numpy as np

from salforge.autodiff import functional as F
from salforge.autodiff.gradcheck import gradcheck, register
from salforge.autodiff.tensor import Tensor, FLOAT64, precision


def _rng():
    return np.random.default_rng(7)


def _away_from_zero(shape, rng, margin=0.1):
    values = rng.uniform(margin, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


def _distinct(shape, rng):
    # values at least 0.01 apart so no perturbation flips a max
    count = int(np.prod(shape))
    return (rng.permutation(count) * 0.01 - count * 0.005).reshape(shape)


def _leaf(values):
    with precision(FLOAT64):
        return Tensor(values, requires_grad=True)


@register('autodiff')
def affine_pointwise():
    rng = _rng()
    x, w, b = _leaf(rng.normal(size=(4, 6))), _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=3))

    def loss(_):
        return F.mean_all(F.square(F.affine_pointwise(x, w, b)))

    return {name: gradcheck(loss, t) for name, t in (('x', x), ('W', w), ('b', b))}


@register('autodiff')
def relu():
    x = _leaf(_away_from_zero((5, 4), _rng()))
    return {'x': gradcheck(lambda t: F.sum_all(F.square(F.relu(t))), x)}


@register('autodiff')
def elementwise():
    rng = _rng()
    a, b = _leaf(_away_from_zero((3, 5), rng)), _leaf(rng.normal(size=(3, 5)))
    checks = {
        'add': lambda t: F.sum_all(F.square(F.add(t, b))),
        'sub': lambda t: F.sum_all(F.square(F.sub(b, t))),
        'mul': lambda t: F.sum_all(F.mul(t, b)),
        'neg_scale_shift': lambda t: F.mean_all(F.square(F.shift(F.scale(F.neg(t), 3.0), 0.5))),
        'abs': lambda t: F.mean_all(F.abs(t)),
        'exp': lambda t: F.mean_all(F.exp(t)),
    }
    return {name: gradcheck(f, a) for name, f in checks.items()}


@register('autodiff')
def rows_and_columns():
    rng = _rng()
    a, b = _leaf(rng.normal(size=(2, 4))), _leaf(rng.normal(size=(3, 4)))
    v = _leaf(rng.normal(size=5))
    weights = rng.normal(size=(5, 4))
    return {
        'concat_rows': gradcheck(lambda t: F.sum_all(F.square(F.concat_rows(t, b))), a),
        'slice_rows': gradcheck(lambda t: F.sum_all(F.square(F.slice_rows(t, 1, 3))), b),
        'repeat_cols': gradcheck(
            lambda t: F.sum_all(F.mul(F.repeat_cols(t, 4), Tensor(weights, dtype=FLOAT64))), v),
        'reshape': gradcheck(lambda t: F.sum_all(F.square(F.reshape(t, (4, 2)))), a),
    }


@register('autodiff')
def pooling():
    rng = _rng()
    x = _leaf(_distinct((3, 7), rng))
    weights = Tensor(rng.normal(size=(3, 7)), dtype=FLOAT64)
    return {
        'maxpool_pairs': gradcheck(lambda t: F.sum_all(F.mul(F.maxpool_pairs(t), weights)), x),
        'global_maxpool': gradcheck(lambda t: F.sum_all(F.square(F.global_maxpool(t))), x),
    }


@register('autodiff')
def shared_consumer():
    x = _leaf(_rng().normal(size=(2, 3)))
    return {'x': gradcheck(lambda t: F.sum_all(F.mul(F.exp(t), F.square(t))), x)}
