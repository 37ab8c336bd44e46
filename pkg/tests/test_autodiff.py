"""Autodiff engine: per-primitive gradients against central differences,
tape discipline, and shape/validity errors."""

import numpy as np
import pytest

import spglab.autodiff as ad
from oracles import fd_gradient, max_rel_error
from spglab.rng import RngStream

TOL = 1e-6


def _check(build, params):
    """Tape-gradient of build() vs central differences on params."""
    ad.zero_grads(params)
    with ad.Tape() as tape:
        tape.backward(build())
    got = [p.grad.copy() for p in params]
    want = fd_gradient(lambda: float(build().data), [p.data for p in params],
                       eps=1e-6)
    for g, w in zip(got, want):
        assert max_rel_error(g, w) < TOL


def _tensor(rng, shape):
    return ad.Tensor(rng.normal(shape), requires_grad=True)


def test_matmul_gradient():
    rng = RngStream(1, "ad/matmul")
    a, b = _tensor(rng, (3, 4)), _tensor(rng, (4, 5))
    _check(lambda: ad.reduce_sum(ad.mul(ad.matmul(a, b),
                                        ad.constant(rng.clone().normal((3, 5))))),
           [a, b])


def test_add_mul_gradients():
    rng = RngStream(2, "ad/addmul")
    a, b = _tensor(rng, (4, 3)), _tensor(rng, (4, 3))
    _check(lambda: ad.reduce_sum(ad.mul(ad.add(a, b), b)), [a, b])


def test_bias_add_gradient():
    rng = RngStream(3, "ad/bias")
    x, b = _tensor(rng, (5, 4)), _tensor(rng, (4,))
    _check(lambda: ad.reduce_sum(ad.mul(ad.bias_add(x, b), x)), [x, b])


def test_relu_gradient():
    rng = RngStream(4, "ad/relu")
    x = _tensor(rng, (6, 3))
    c = ad.constant(rng.clone().normal((6, 3)))
    _check(lambda: ad.reduce_sum(ad.mul(ad.relu(x), c)), [x])


def test_log_softmax_gradient_and_value():
    rng = RngStream(5, "ad/lsm")
    x = _tensor(rng, (4, 7))
    c = ad.constant(rng.clone().normal((4, 7)))
    _check(lambda: ad.reduce_sum(ad.mul(ad.log_softmax(x), c)), [x])
    lp = ad.log_softmax(x).data
    np.testing.assert_allclose(np.exp(lp).sum(axis=-1), 1.0, rtol=1e-12)


def test_log_softmax_is_shift_stable():
    x = np.array([[1e4, 1e4 + 1.0, 1e4 - 2.0]])
    lp = ad.log_softmax(ad.constant(x)).data
    assert np.all(np.isfinite(lp))
    np.testing.assert_allclose(np.exp(lp).sum(), 1.0, rtol=1e-12)


def test_gather_gradient():
    rng = RngStream(6, "ad/gather")
    x = _tensor(rng, (5, 4))
    idx = np.asarray(rng.integers(4, (5,)), dtype=np.int64)
    c = ad.constant(rng.clone().normal((5,)))
    _check(lambda: ad.reduce_sum(ad.mul(ad.gather(x, idx), c)), [x])


def test_embedding_gradient_accumulates_repeats():
    rng = RngStream(7, "ad/embed")
    table = _tensor(rng, (6, 3))
    idx = np.array([1, 1, 4, 0, 1], dtype=np.int64)
    c = ad.constant(rng.clone().normal((5, 3)))
    _check(lambda: ad.reduce_sum(ad.mul(ad.embedding(table, idx), c)), [table])


def test_reduce_sum_and_mean_gradients():
    rng = RngStream(8, "ad/reduce")
    x = _tensor(rng, (3, 4, 2))
    _check(lambda: ad.reduce_sum(ad.mul(ad.reduce_mean(x, axes=(1,)),
                                        ad.constant(rng.clone().normal((3, 2))))),
           [x])


def test_dropout_train_gradient_with_frozen_mask():
    rng = RngStream(9, "ad/drop")
    x = _tensor(rng, (8, 5))
    c = ad.constant(rng.clone().normal((8, 5)))

    def build():
        mask_rng = RngStream(9, "ad/drop/mask")  # same mask every call
        return ad.reduce_sum(ad.mul(ad.dropout(x, 0.4, mask_rng, True), c))

    _check(build, [x])


def test_dropout_eval_is_the_same_tensor():
    x = ad.Tensor(np.ones((3, 3)), requires_grad=True)
    out = ad.dropout(x, 0.5, None, training=False)
    assert out is x


def test_dropout_train_scales_by_keep_probability():
    rng = RngStream(10, "ad/dropscale")
    x = ad.constant(np.ones((100_000,)))
    out = ad.dropout(x, 0.25, rng, training=True).data
    assert set(np.round(np.unique(out), 12)) <= {0.0, round(1 / 0.75, 12)}
    assert abs(out.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, rng, training=True)
    with pytest.raises(ValueError):
        ad.dropout(x, -0.1, rng, training=True)


def test_matmul_rejects_bad_ranks_and_shapes():
    a = ad.constant(np.ones((2, 3)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(a, ad.constant(np.ones((4, 2))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(a, ad.constant(np.ones(3)))
    with pytest.raises(ad.ShapeError):
        ad.add(a, ad.constant(np.ones((3, 2))))
    with pytest.raises(ad.ShapeError):
        ad.bias_add(a, ad.constant(np.ones((2, 3))))


def test_gather_rejects_out_of_range_index():
    x = ad.constant(np.ones((3, 4)))
    with pytest.raises(ValueError):
        ad.gather(x, np.array([0, 4, 1], dtype=np.int64))
    with pytest.raises(ad.ShapeError):
        ad.gather(x, np.array([0, 1], dtype=np.int64))  # leading shape mismatch


def test_backward_requires_scalar_and_nonempty_tape():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(ad.GradientError):
            tape.backward(y)  # non-scalar loss
        tape.backward(ad.reduce_sum(y))
        with pytest.raises(ad.GradientError):
            tape.backward(ad.constant(0.0))  # records already consumed


def test_nested_tapes_rejected():
    with ad.Tape():
        with pytest.raises(ad.GradientError):
            with ad.Tape():
                pass


def test_gradients_accumulate_across_backwards():
    x = ad.Tensor(np.full((3,), 2.0), requires_grad=True)
    for _ in range(2):
        with ad.Tape() as tape:
            tape.backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * (2 * x.data))


def test_non_finite_values_rejected():
    with pytest.raises(ValueError):
        ad.relu(ad.constant(np.array([1.0, np.inf])))
    with pytest.raises(ValueError):
        ad.mul(ad.constant(np.array([np.nan])), ad.constant(np.array([1.0])))


def test_ops_outside_tape_do_not_record():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    ad.reduce_sum(ad.mul(x, x))  # no active tape: compute only
    with ad.Tape() as tape:
        tape.backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2.0 * np.ones((2, 2)))
