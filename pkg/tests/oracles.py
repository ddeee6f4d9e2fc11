"""Independent reference computations used by the tests.

Nothing here touches the log-domain Jacobian path or the autodiff engine's
backward pass; everything is finite differences, brute-force enumeration or
closed forms.
"""
import numpy as np

from bnaf.flow import FlowConfig, init_params, named_parameters, with_parameters


def fd_jacobian(fn, x, eps=1e-5):
    """Central-difference Jacobian of ``fn: R^d -> R^d`` at ``x`` (1-d array)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        step = np.zeros(d)
        step[j] = eps
        jac[:, j] = (fn(x + step) - fn(x - step)) / (2 * eps)
    return jac


def fd_gradient(fn, x, eps=1e-5):
    """Central-difference gradient of a scalar ``fn`` of an array of any shape."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return out


def fd_param_gradients(loss_of_stack, stack, eps=1e-5):
    """Finite-difference gradient of ``loss_of_stack(stack) -> float`` for every named parameter."""
    params = {k: np.array(v, dtype=np.float64) for k, v in named_parameters(stack).items()}
    grads = {}
    for name, arr in params.items():
        def f(value, name=name):
            trial = dict(params)
            trial[name] = value
            return loss_of_stack(with_parameters(stack, trial))
        grads[name] = fd_gradient(f, arr, eps)
    return grads


def count_params_by_enumeration(d, k, layers, n_flows):
    """Walk every weight entry and keep those inside the lower block triangle."""
    total = 0
    shapes = [(k, 1)] + [(k, k)] * (layers - 1) + [(1, k)]
    for _ in range(n_flows):
        for a, b in shapes:
            for r in range(a * d):
                for c in range(b * d):
                    if r // a >= c // b:
                        total += 1
            total += a * d  # log-scales
            total += a * d  # biases
        total += 1  # gate
    return total


def random_stack(d, k, layers, n_flows=1, seed=0, gate_scale=1.0, bias_scale=0.5):
    """A freshly initialised stack with random biases and gates so no parameter sits at a special value."""
    rng = np.random.default_rng(seed)
    stack = init_params(FlowConfig(d, k, layers, n_flows), rng)
    for flow in stack.flows:
        for layer in flow.layers:
            layer.bias[...] = bias_scale * rng.standard_normal(layer.bias.shape)
        flow.gate_raw[...] = gate_scale * rng.standard_normal()
    return stack


def gaussian_mle_nll(train, test):
    """Held-out NLL of the closed-form maximum-likelihood full-covariance Gaussian."""
    mu = train.mean(axis=0)
    cov = np.cov(train, rowvar=False, bias=True)
    d = train.shape[1]
    diff = test - mu
    sol = np.linalg.solve(cov, diff.T).T
    _, logdet = np.linalg.slogdet(cov)
    return float(np.mean(0.5 * (d * np.log(2 * np.pi) + logdet + np.sum(diff * sol, axis=1))))


def rel_err(a, b, floor=1.0):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(floor, np.abs(a))
