"""Training losses over a flow stack.

``nll_loss`` fits a density to samples (maximum likelihood);
``density_matching_loss`` fits a sampler to an unnormalised target by
minimising the reverse KL. Both return batch means so learning rates carry
across batch sizes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericalError
from .flow import FlowStack, bind, stack_forward
from .targets import normal_log_prob


@dataclass
class LossValue:
    """Scalar loss attached to the autodiff graph plus cheap diagnostics.

    For density matching the target's log-normaliser is unknown, so ``loss`` is
    the reverse KL plus an unknown constant.
    """

    loss: Tensor
    mean_log_det: float
    mean_base_log_prob: float

    def item(self) -> float:
        return self.loss.item()


def _check_rows(per_example: Tensor):
    bad = ~np.isfinite(per_example.data)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NumericalError(f"non-finite loss contribution at batch index {idx}", batch_index=idx)


def nll_loss(stack: FlowStack, x_batch) -> LossValue:
    """Mean negative log-likelihood ``-(log N(f(x)) + log|det J_f(x)|)``."""
    out = stack_forward(stack, x_batch)
    base = normal_log_prob(out.y)
    per_example = base + out.log_det
    _check_rows(per_example)
    return LossValue(-per_example.mean(), float(out.log_det.data.mean()), float(base.data.mean()))


def density_matching_loss(stack: FlowStack, base_batch, target: Callable[[Tensor], Tensor]) -> LossValue:
    """Mean of ``log N(x) - log|det J_f(x)| + U(f(x))`` over base samples ``x``."""
    base_batch = ad.as_tensor(base_batch)
    out = stack_forward(stack, base_batch)
    base = normal_log_prob(base_batch)
    per_example = base - out.log_det + target(out.y)
    _check_rows(per_example)
    return LossValue(per_example.mean(), float(out.log_det.data.mean()), float(base.data.mean()))


def loss_and_grad(loss_fn, stack: FlowStack, *args) -> Tuple[LossValue, Dict[str, np.ndarray]]:
    """Evaluate ``loss_fn(stack, *args)`` and its gradient for every named parameter."""
    bound, leaves = bind(stack)
    value = loss_fn(bound, *args)
    ad.backward(value.loss)
    grads = {name: (leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)) for name, leaf in leaves.items()}
    return value, grads
