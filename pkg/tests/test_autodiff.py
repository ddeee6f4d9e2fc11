import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnaf import autodiff as ad
from bnaf.autodiff import Graph, Tensor
from bnaf.errors import ContractError, DimensionError, DomainError

from oracles import fd_gradient


# --- forward values ---------------------------------------------------------


def test_matmul_examples():
    col = Tensor([[3.0], [4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), col).data, [[3.0], [4.0]])
    assert np.array_equal(ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [0.0]]).data, [[0.0], [0.0]])
    assert ad.matmul([[1.0, 2.0]], [[3.0], [5.0]]).data.tolist() == [[13.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_examples():
    assert ad.tanh(0.0).item() == 0.0
    assert ad.softplus(0.0).item() == pytest.approx(math.log(2), abs=1e-15)
    assert ad.exp(ad.log(2.5)).item() == pytest.approx(2.5, rel=1e-15)


def test_softplus_is_stable_for_large_inputs():
    out = ad.softplus([-800.0, 800.0]).data
    assert out[0] == 0.0 and out[1] == 800.0


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log([1.0, 0.0])
    with pytest.raises(DomainError):
        ad.log(-1.0)


def test_no_implicit_broadcasting():
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 3)), np.ones(3))
    # scalar with tensor is allowed
    assert np.array_equal(ad.mul(2.0, np.ones((2, 3))).data, 2 * np.ones((2, 3)))


@pytest.mark.parametrize(
    "values, expected",
    [([0.0, 0.0], math.log(2)), ([1000.0, 1000.0], 1000 + math.log(2)), ([0.0, math.log(3)], math.log(4))],
)
def test_logsumexp_examples(values, expected):
    assert ad.logsumexp(values, axis=0).item() == pytest.approx(expected, abs=1e-12)


def test_reduce_examples():
    assert ad.reduce_sum([1.0, 2.0, 3.0]).item() == 6.0
    assert ad.reduce_mean([2.0, 4.0]).item() == 3.0
    assert ad.reduce_sum([[1.0, 2.0], [3.0, 4.0]], axis=0).data.tolist() == [4.0, 6.0]


def test_empty_reduction_is_a_domain_error():
    with pytest.raises(DomainError):
        ad.reduce_mean(np.zeros((0, 3)), axis=0)


@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.floats(-1e3, 1e3),
)
def test_logsumexp_shift_invariance(values, c):
    a = np.array(values)
    lhs = ad.logsumexp(a + c, axis=0).item()
    rhs = ad.logsumexp(a, axis=0).item() + c
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


# --- backward ---------------------------------------------------------------


def test_backward_linear_function():
    x = np.array([1.5, -2.0, 0.25])
    w = Tensor(np.array([0.3, 0.1, -0.7]), requires_grad=True)
    ad.backward((w * x).sum())
    assert np.array_equal(w.grad, x)


def test_backward_tanh_at_zero():
    w = Tensor(0.0, requires_grad=True)
    ad.backward(ad.tanh(w))
    assert w.grad == 1.0


def test_backward_requires_scalar_root():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.backward(w * 2.0)


def test_graph_is_topologically_ordered_and_root_adjoint_is_one():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.full((2, 2), 0.5), requires_grad=True)
    root = (ad.tanh(a @ b) * a).sum()
    graph = Graph(root)
    for i in range(len(graph.nodes)):
        assert all(j < i for j in graph.inputs(i))
    graph.backward(free=False)
    assert graph.adjoints[len(graph.nodes) - 1] == 1.0
    assert graph.nodes[-1] is root


def test_shared_subexpression_accumulates():
    x = Tensor(1.3, requires_grad=True)
    y = x * x
    ad.backward(y * y + y)  # x^4 + x^2
    assert x.grad == pytest.approx(4 * 1.3 ** 3 + 2 * 1.3, rel=1e-14)


def test_random_three_node_graphs_match_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        w0 = rng.normal(size=(3, 2))
        x = rng.normal(size=(2, 3))

        def f(w):
            return float(np.sum(np.tanh(w @ x) * np.exp(-0.1 * w @ x)))

        w = Tensor(w0, requires_grad=True)
        h = w @ x
        ad.backward((ad.tanh(h) * ad.exp(-0.1 * h)).sum())
        num = fd_gradient(f, w0)
        assert np.all(np.abs(w.grad - num) / np.maximum(1.0, np.abs(w.grad)) < 1e-6)


def _positive(rng, shape):
    return rng.uniform(0.2, 3.0, size=shape)


# op name -> (builder taking list of Tensors, input generator)
UNARY = {
    "neg": (ad.neg, lambda r: r.normal(size=(2, 3))),
    "exp": (ad.exp, lambda r: r.normal(size=(2, 3))),
    "log": (ad.log, lambda r: _positive(r, (2, 3))),
    "sqrt": (ad.sqrt, lambda r: _positive(r, (2, 3))),
    "tanh": (ad.tanh, lambda r: r.normal(scale=2, size=(2, 3))),
    "sigmoid": (ad.sigmoid, lambda r: r.normal(scale=3, size=(2, 3))),
    "softplus": (ad.softplus, lambda r: r.normal(scale=3, size=(2, 3))),
    "sin": (ad.sin, lambda r: r.normal(scale=2, size=(2, 3))),
    "square": (ad.square, lambda r: r.normal(size=(2, 3))),
    "power": (lambda t: ad.power(t, 2.5), lambda r: _positive(r, (2, 3))),
    "transpose": (ad.transpose, lambda r: r.normal(size=(2, 3))),
    "reshape": (lambda t: t.reshape(3, 2), lambda r: r.normal(size=(2, 3))),
    "index": (lambda t: t[:, [0, 2, 2]], lambda r: r.normal(size=(2, 3))),
    "broadcast": (lambda t: ad.broadcast_to(t.reshape(2, 1, 3), (4, 2, 2, 3)), lambda r: r.normal(size=(2, 3))),
    "sum_axis": (lambda t: t.sum(axis=1), lambda r: r.normal(size=(2, 3))),
    "mean_all": (lambda t: t.mean(), lambda r: r.normal(size=(2, 3))),
    "logsumexp": (lambda t: ad.logsumexp(t, axis=1), lambda r: r.normal(scale=3, size=(2, 3))),
}
BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "div": ad.div,
    "logaddexp": ad.logaddexp,
}


def _check_op(build, inputs, rng):
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    out = build(*leaves)
    weights = rng.normal(size=out.shape)
    ad.backward((out * weights).sum())
    for i, x in enumerate(inputs):
        def f(v, i=i):
            args = [Tensor(a) for a in inputs]
            args[i] = Tensor(v)
            return float(np.sum(build(*args).data * weights))
        num = fd_gradient(f, x)
        err = np.abs(leaves[i].grad - num) / np.maximum(1.0, np.abs(leaves[i].grad))
        assert err.max() < 1e-6, (i, err.max())


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradient_soundness(name):
    build, gen = UNARY[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    for _ in range(100):
        _check_op(build, [gen(rng)], rng)


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("scalar_rhs", [False, True])
def test_binary_gradient_soundness(name, scalar_rhs):
    build = BINARY[name]
    rng = np.random.default_rng(len(name) + 17 * scalar_rhs)
    for _ in range(100):
        a = rng.normal(size=(2, 3))
        b = rng.uniform(0.5, 2.0, size=() if scalar_rhs else (2, 3)) * rng.choice([-1.0, 1.0])
        _check_op(build, [a, b], rng)


def test_matmul_and_concatenate_gradient_soundness():
    rng = np.random.default_rng(3)
    for _ in range(100):
        _check_op(ad.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], rng)
        _check_op(lambda a, b: ad.concatenate([a, b], axis=1), [rng.normal(size=(2, 1)), rng.normal(size=(2, 3))], rng)


def test_determinism():
    rng = np.random.default_rng(0)
    w0, x = rng.normal(size=(4, 4)), rng.normal(size=(5, 4))

    def run():
        w = Tensor(w0, requires_grad=True)
        loss = ad.logsumexp(ad.tanh(Tensor(x) @ w), axis=1).mean()
        ad.backward(loss)
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_no_tape_without_gradients():
    out = ad.tanh(Tensor(np.ones(3))) * 2.0
    assert out.is_leaf and not out.requires_grad
