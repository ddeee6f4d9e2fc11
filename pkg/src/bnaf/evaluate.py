"""Density evaluation on lattices and sampling from trained stacks."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .flow import FlowStack, flow_inverse, stack_forward
from .targets import normal_log_prob, normal_sample

CHUNK = 2000


def grid_points(xmin: float, xmax: float, ymin: float, ymax: float, res: int) -> np.ndarray:
    """``res*res`` lattice points, x-major (x varies slowest)."""
    if int(res) != res or res < 1:
        raise ConfigError(f"res must be a positive integer, got {res!r}")
    if not (xmin <= xmax and ymin <= ymax):
        raise ConfigError("grid bounds must satisfy xmin <= xmax and ymin <= ymax")
    xs = np.linspace(xmin, xmax, int(res))
    ys = np.linspace(ymin, ymax, int(res))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def data_log_density(stack: FlowStack, x: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    """``log p(x) = log N(f(x)) + log|det J_f(x)|`` for a model fitted to data."""
    out = []
    for start in range(0, len(x), chunk):
        res = stack_forward(stack, x[start:start + chunk])
        out.append(normal_log_prob(res.y).data + res.log_det.data)
    return np.concatenate(out) if out else np.zeros(0)


def sampler_log_density(stack: FlowStack, y: np.ndarray, tol: float = 1e-8, chunk: int = CHUNK) -> np.ndarray:
    """Density of ``f(x)``, ``x ~ N(0, I)``: ``log N(x) - log|det J_f(x)|`` with ``x = f^{-1}(y)``."""
    out = []
    for start in range(0, len(y), chunk):
        x = flow_inverse(stack, y[start:start + chunk], tol=tol)
        res = stack_forward(stack, x)
        out.append(normal_log_prob(x).data - res.log_det.data)
    return np.concatenate(out) if out else np.zeros(0)


def sample(stack: FlowStack, rng: np.random.Generator, n: int, chunk: int = CHUNK) -> np.ndarray:
    """Push ``n`` standard-normal draws through the stack."""
    base = normal_sample(rng, n, stack.d)
    parts = [stack_forward(stack, base[s:s + chunk], log_det=False).y.data for s in range(0, n, chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, stack.d))
