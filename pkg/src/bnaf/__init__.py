"""Block neural autoregressive flows with a small numpy autodiff engine."""
from .autodiff import Tensor, backward
from .flow import (
    FlowConfig,
    FlowStack,
    build_masks,
    count_params,
    effective_weight,
    flow_forward,
    flow_inverse,
    init_params,
    log_mat_mul,
    stack_forward,
)
from .objectives import density_matching_loss, loss_and_grad, nll_loss
from .targets import EnergyTarget, ToyDataset, normal_log_prob, normal_sample
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward",
    "FlowConfig", "FlowStack", "build_masks", "count_params", "effective_weight", "flow_forward",
    "flow_inverse", "init_params", "log_mat_mul", "stack_forward",
    "density_matching_loss", "loss_and_grad", "nll_loss",
    "EnergyTarget", "ToyDataset", "normal_log_prob", "normal_sample",
    "TrainConfig", "train",
]
