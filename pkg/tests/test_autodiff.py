"""Tensor library and reverse-mode gradient tests."""

import math

import numpy as np
import pytest

from gumbelprune import autodiff as ad
from gumbelprune.autodiff import (GradCheckReport, ShapeMismatchError, Tensor,
                                  grad_check, precision)


def test_sigmoid_at_zero():
    assert float(ad.sigmoid(Tensor(0.0)).data) == 0.5


def test_cross_entropy_uniform_logits():
    V = 11
    logits = Tensor(np.zeros((3, V)))
    targets = np.array([0, 5, 10])
    assert float(ad.cross_entropy(logits, targets).data) == pytest.approx(math.log(V), rel=1e-6)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(a), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, a)


def test_sigmoid_grad_at_zero():
    x = Tensor(np.array(0.0), requires_grad=True)
    ad.sigmoid(x).backward()
    assert float(x.grad) == pytest.approx(0.25)


def test_abs_subgradient():
    x = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
    ad.tsum(ad.tabs(x)).backward()
    np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_three_layer_composition_matches_finite_differences():
    rng = np.random.default_rng(3)
    W1, W2 = rng.normal(size=(5, 4)), rng.normal(size=(3, 5))

    def fn(x):
        h = ad.sigmoid(ad.matmul(x, ad.transpose(Tensor(W1), (1, 0))))
        h = ad.matmul(h, ad.transpose(Tensor(W2), (1, 0)))
        return ad.tmean(ad.tabs(h))

    report = grad_check(fn, rng.normal(size=(6, 4)), step=1e-5, tolerance=1e-5)
    assert report.passed, report


def test_grad_check_sum_sigmoid():
    rng = np.random.default_rng(0)
    report = grad_check(lambda x: ad.tsum(ad.sigmoid(x)), rng.normal(size=(4, 3)))
    assert report.passed and report.max_rel_error < 1e-5


def test_grad_check_constant_fn():
    report = grad_check(lambda x: Tensor(np.array(1.5)), np.ones(4))
    assert isinstance(report, GradCheckReport)
    assert report.passed and report.max_rel_error == 0.0


# -- per-op finite-difference sweep ----------------------------------------

OP_CASES = {
    "add": lambda x, c: ad.tsum(ad.add(x, Tensor(c))),
    "add_scalar": lambda x, c: ad.tsum(ad.add(x, 1.7)),
    "sub": lambda x, c: ad.tsum(ad.sub(x, Tensor(c))),
    "mul": lambda x, c: ad.tsum(ad.mul(x, Tensor(c))),
    "mul_scalar": lambda x, c: ad.tsum(ad.mul(x, -0.3)),
    "sigmoid": lambda x, c: ad.tsum(ad.sigmoid(x)),
    "abs": lambda x, c: ad.tsum(ad.tabs(x)),
    "mean": lambda x, c: ad.tmean(ad.mul(x, Tensor(c))),
    "matmul": lambda x, c: ad.tsum(ad.matmul(x, Tensor(c.T))),
    "softmax": lambda x, c: ad.tsum(ad.mul(ad.softmax(x), Tensor(c))),
    "log_softmax": lambda x, c: ad.tsum(ad.mul(ad.log_softmax(x), Tensor(c))),
    "reshape": lambda x, c: ad.tsum(ad.mul(ad.reshape(x, (c.size,)), Tensor(c.reshape(-1)))),
    "transpose": lambda x, c: ad.tsum(ad.mul(ad.transpose(x, (1, 0)), Tensor(c.T))),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    fn = OP_CASES[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(100):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        c = rng.normal(size=shape)
        if name == "abs":
            # keep points away from the |.| kink where FD is one-sided
            point = rng.normal(size=shape)
            point[np.abs(point) < 1e-2] += 0.5
        else:
            point = rng.normal(size=shape)
        report = grad_check(lambda x, c=c: fn(x, c), point, step=1e-5, tolerance=1e-5)
        assert report.passed, (name, report)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(9)
    targets = rng.integers(0, 5, size=(2, 3))
    report = grad_check(lambda x: ad.cross_entropy(x, targets),
                        rng.normal(size=(2, 3, 5)))
    assert report.passed, report


def test_embedding_gradient():
    rng = np.random.default_rng(10)
    idx = rng.integers(0, 4, size=(2, 3))
    report = grad_check(lambda t: ad.tsum(ad.mul(ad.embedding(t, idx), 0.7)),
                        rng.normal(size=(4, 2)))
    assert report.passed, report


def test_layer_norm_gradient():
    rng = np.random.default_rng(11)
    g, b = rng.normal(size=5), rng.normal(size=5)
    report = grad_check(
        lambda x: ad.tsum(ad.tabs(ad.layer_norm(x, Tensor(g), Tensor(b)))),
        rng.normal(size=(3, 5)))
    assert report.passed, report
    # and through gain/bias
    x = rng.normal(size=(3, 5))
    report = grad_check(lambda t: ad.tmean(ad.layer_norm(Tensor(x), t, Tensor(b))),
                        g)
    assert report.passed, report


def test_batched_matmul_gradient():
    rng = np.random.default_rng(12)
    b = rng.normal(size=(2, 3, 4))
    report = grad_check(lambda a: ad.tsum(ad.matmul(a, Tensor(b))),
                        rng.normal(size=(2, 2, 3)))
    assert report.passed, report
    # ND @ 2D with weight gradient summed over leading dims
    a = rng.normal(size=(2, 2, 3))
    report = grad_check(lambda w: ad.tsum(ad.matmul(Tensor(a), w)),
                        rng.normal(size=(3, 4)))
    assert report.passed, report


# -- graph semantics --------------------------------------------------------


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.sigmoid(x).backward()


def test_frozen_tensor_gets_no_gradient():
    w = Tensor(np.ones((2, 2)), requires_grad=False)
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    ad.tsum(ad.mul(x, w)).backward()
    assert w.grad is None
    assert x.grad is not None


def test_repeated_backward_rezeroes_not_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    loss = ad.tsum(ad.sigmoid(x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(x.grad, first)


def test_shape_mismatch_error_names_op_and_shapes():
    with pytest.raises(ShapeMismatchError) as ei:
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert ei.value.op == "add"
    assert ei.value.shape_a == (2, 3) and ei.value.shape_b == (3, 2)
    with pytest.raises(ShapeMismatchError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_elementwise_broadcast_scalar_only():
    t = Tensor(np.ones((2, 3)))
    assert ad.add(t, 2.0).shape == (2, 3)
    with pytest.raises(ShapeMismatchError):
        ad.add(t, Tensor(np.ones(3)))


def test_precision_switching():
    assert ad.precision_bits() == 32
    with precision(64):
        assert Tensor(np.ones(2)).data.dtype == np.float64
    assert Tensor(np.ones(2)).data.dtype == np.float32
    with pytest.raises(ValueError):
        ad.set_precision(16)
