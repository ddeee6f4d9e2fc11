import math

import numpy as np
import pytest

from bnaf import autodiff as ad
from bnaf.errors import NumericalError
from bnaf.flow import stack_forward
from bnaf.objectives import density_matching_loss, loss_and_grad, nll_loss
from bnaf.targets import EnergyTarget, normal_log_prob, normal_sample

from oracles import fd_param_gradients, random_stack


def _collapsed(d=2, n_flows=1):
    stack = random_stack(d, 3, 2, n_flows=n_flows, seed=1)
    for flow in stack.flows:
        flow.gate_raw[...] = -20.0
    return stack


def _zero_energy(y):
    return 0.0 * y.sum(axis=1)


def _check_fd(loss_of_stack, stack, grads):
    num = fd_param_gradients(loss_of_stack, stack)
    for name, g in grads.items():
        err = np.abs(g - num[name]) / np.maximum(1.0, np.abs(num[name]))
        assert err.max() < 1e-4, (name, err.max())


def test_nll_of_identity_stack_at_origin():
    value = nll_loss(_collapsed(), np.zeros((1, 2)))
    assert value.item() == pytest.approx(math.log(2 * math.pi), abs=1e-6)
    assert abs(value.mean_log_det) < 1e-6


def test_nll_of_duplicated_rows_equals_single_row():
    stack = random_stack(2, 2, 1, seed=3)
    row = np.array([[0.3, -1.2]])
    assert nll_loss(stack, np.repeat(row, 5, axis=0)).item() == pytest.approx(nll_loss(stack, row).item(), rel=1e-14)


def test_nll_gradient_matches_finite_differences():
    stack = random_stack(2, 2, 1, seed=4)
    x = np.random.default_rng(4).normal(size=(8, 2))
    _, grads = loss_and_grad(nll_loss, stack, x)
    _check_fd(lambda s: nll_loss(s, x).item(), stack, grads)


def test_matching_gradient_matches_finite_differences():
    stack = random_stack(2, 3, 1, seed=5)
    base = normal_sample(np.random.default_rng(5), 8, 2)
    u1 = EnergyTarget("u1")
    _, grads = loss_and_grad(density_matching_loss, stack, base, u1)
    _check_fd(lambda s: density_matching_loss(s, base, u1).item(), stack, grads)


def test_matching_with_flat_target_is_base_entropy_term():
    base = normal_sample(np.random.default_rng(6), 64, 2)
    value = density_matching_loss(_collapsed(), base, _zero_energy)
    assert value.item() == pytest.approx(normal_log_prob(base).data.mean(), abs=1e-6)


def test_constant_energy_shift():
    stack = random_stack(2, 2, 2, seed=7)
    base = normal_sample(np.random.default_rng(7), 16, 2)
    u1 = EnergyTarget("u1")
    c = 3.75
    v0, g0 = loss_and_grad(density_matching_loss, stack, base, u1)
    v1, g1 = loss_and_grad(density_matching_loss, stack, base, lambda y: u1(y) + c)
    assert v1.item() - v0.item() == pytest.approx(c, abs=1e-12)
    for name in g0:
        assert np.max(np.abs(g0[name] - g1[name])) <= 1e-12


def test_losses_are_deterministic():
    stack = random_stack(2, 2, 2, seed=8)
    x = np.random.default_rng(8).normal(size=(32, 2))
    a, ga = loss_and_grad(nll_loss, stack, x)
    b, gb = loss_and_grad(nll_loss, stack, x)
    assert a.item() == b.item()
    assert all(ga[k].tobytes() == gb[k].tobytes() for k in ga)


def test_monte_carlo_consistency():
    stack = random_stack(2, 3, 2, seed=9)
    u1 = EnergyTarget("u1")
    estimates, errors = [], []
    for seed in (10, 11):
        base = normal_sample(np.random.default_rng(seed), 100_000, 2)
        out = stack_forward(stack, base)
        per = normal_log_prob(base).data - out.log_det.data + u1(out.y).data
        estimates.append(per.mean())
        errors.append(per.std() / math.sqrt(len(per)))
        assert density_matching_loss(stack, base, u1).item() == pytest.approx(per.mean(), rel=1e-12)
    assert abs(estimates[0] - estimates[1]) < 3 * math.hypot(*errors)


def test_non_finite_row_reports_batch_index():
    stack = random_stack(2, 2, 1, seed=2)
    x = np.zeros((4, 2))
    x[2, 0] = np.inf
    with pytest.raises(NumericalError) as info:
        nll_loss(stack, x)
    assert info.value.batch_index in (2, None)


def test_loss_and_grad_covers_every_parameter():
    stack = random_stack(3, 2, 2, n_flows=2, seed=0)
    value, grads = loss_and_grad(nll_loss, stack, np.random.default_rng(0).normal(size=(4, 3)))
    assert value.loss.shape == ()
    assert len(grads) == 2 * (3 * 3 + 1)
    assert all(np.all(np.isfinite(g)) for g in grads.values())
    assert isinstance(value.loss, ad.Tensor)
