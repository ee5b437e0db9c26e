"""Objective term tests: density penalty, magnitude reward, composition."""

import numpy as np
import pytest

from gumbelprune import autodiff as ad
from gumbelprune.autodiff import Tensor
from gumbelprune.objective import (density_accounting, sparsity_loss,
                                   total_loss, weight_loss)


def _t(x, grad=True):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


def test_sparsity_loss_value():
    # mean soft density 0.6 vs target 0.5 at lambda1=3 -> 0.3
    m = _t([[0.6, 0.6], [0.6, 0.6]])
    loss = sparsity_loss([m], target_density=0.5, lambda1=3.0)
    assert float(loss.data) == pytest.approx(0.3, rel=1e-6)


def test_sparsity_loss_is_global_not_per_layer():
    # one dense layer + one empty layer of equal size average to the target,
    # so the penalty is zero despite per-layer imbalance
    a = _t(np.ones((4, 4)))
    b = _t(np.zeros((4, 4)))
    loss = sparsity_loss([a, b], target_density=0.5, lambda1=3.0)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_sparsity_loss_gradient_sign():
    # above target: gradient pushes each mask entry down by lambda1/N
    m = _t(np.full((2, 5), 0.7))
    loss = sparsity_loss([m], target_density=0.5, lambda1=3.0)
    loss.backward()
    np.testing.assert_allclose(m.grad, 3.0 / 10)
    # below target: sign flips
    m2 = _t(np.full((2, 5), 0.3))
    sparsity_loss([m2], 0.5, 3.0).backward()
    np.testing.assert_allclose(m2.grad, -3.0 / 10)


def test_sparsity_loss_subgradient_at_target_is_zero():
    m = _t(np.full((2, 2), 0.5))
    loss = sparsity_loss([m], target_density=0.5, lambda1=3.0)
    loss.backward()
    np.testing.assert_allclose(m.grad, 0.0)


def test_sparsity_loss_validation():
    with pytest.raises(ValueError, match="lambda1"):
        sparsity_loss([_t([1.0])], 0.5, -1.0)
    with pytest.raises(ValueError, match="no mask entries"):
        sparsity_loss([], 0.5, 3.0)


def test_weight_loss_value_and_gradient():
    w = _t([[1.0, -1.0], [0.5, -0.5]])
    loss = weight_loss([w], lambda2=10.0)
    # L1 mass 3.0 -> reward -30? spec example: magnitudes sum 2 at lambda2=10 -> -20
    assert float(loss.data) == pytest.approx(-30.0)
    loss.backward()
    np.testing.assert_allclose(w.grad, -10.0 * np.sign(w.data))


def test_weight_loss_spec_example():
    w = _t([[1.0, -1.0]])
    assert float(weight_loss([w], 10.0).data) == pytest.approx(-20.0)


def test_weight_loss_multiple_layers_accumulate():
    a = _t(np.ones((2, 2)))
    b = _t(np.full((1, 4), -2.0))
    assert float(weight_loss([a, b], 1.0).data) == pytest.approx(-(4.0 + 8.0))


def test_total_loss_composition_and_breakdown():
    lm, sp, wt = _t(2.5), _t(0.3), _t(-0.8)
    total, breakdown = total_loss(lm, sp, wt)
    assert float(total.data) == pytest.approx(2.0)
    assert breakdown.lm_loss == 2.5
    assert breakdown.sparsity_loss == pytest.approx(0.3)
    assert breakdown.weight_loss == pytest.approx(-0.8)
    assert breakdown.total == pytest.approx(2.0)


@pytest.mark.parametrize("bad,name", [
    ((float("nan"), 0.0, 0.0), "lm_loss"),
    ((0.0, float("inf"), 0.0), "sparsity_loss"),
    ((0.0, 0.0, float("-inf")), "weight_loss"),
])
def test_total_loss_names_nonfinite_term(bad, name):
    lm, sp, wt = (_t(v) for v in bad)
    with pytest.raises(FloatingPointError, match=name):
        total_loss(lm, sp, wt)


def test_density_accounting():
    a = _t(np.full((2, 2), 0.5))
    b = _t(np.ones((1, 4)))
    acc = density_accounting([a, b], target_density=0.5)
    assert acc.per_layer_l1 == [pytest.approx(2.0), pytest.approx(4.0)]
    assert acc.per_layer_count == [4, 4]
    assert acc.total_count == 8
    assert acc.mean_density == pytest.approx(0.75)


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    masks_np = rng.uniform(0.05, 0.95, size=(3, 4))
    weights_np = rng.normal(size=(3, 4))

    def fn(m):
        sp = sparsity_loss([m], 0.5, 3.0)
        wt = weight_loss([ad.mul(m, Tensor(weights_np))], 10.0)
        return ad.add(sp, wt)

    report = ad.grad_check(fn, masks_np, step=1e-6)
    assert report.passed, f"max rel error {report.max_rel_error}"
