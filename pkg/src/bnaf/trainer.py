"""Optimisation loop for flow stacks.

Adam on the raw parameters, an exponential moving average (Polyak) copy used
for evaluation, and a plateau schedule that multiplies the learning rate by
``decay`` once the evaluation metric has not improved for ``patience``
iterations. Everything is driven by one seeded generator, so a config fully
determines the run and a checkpoint resumes it bit-for-bit.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .flow import FlowConfig, FlowStack, init_params, named_parameters, stack_forward, with_parameters
from .objectives import density_matching_loss, loss_and_grad, nll_loss
from .targets import DATASETS, ENERGIES, EnergyTarget, ToyDataset, normal_log_prob, normal_sample

logger = logging.getLogger(__name__)

METRICS_HEADER = ("iter", "loss", "lr", "eval_metric")


@dataclass
class TrainConfig:
    objective: str = "mle"
    target: str = "eight_gaussians"
    d: int = 2
    k: int = 25
    layers: int = 2
    n_flows: int = 1
    batch_size: int = 200
    max_iterations: int = 5000
    initial_lr: float = 1e-2
    decay: float = 0.5
    patience: int = 2000
    polyak: float = 0.0
    seed: int = 0
    eval_interval: int = 100
    checkpoint_interval: int = 1000
    held_out_size: int = 1000
    loss_window: int = 500
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.objective not in ("mle", "match"):
            raise ConfigError(f"objective must be 'mle' or 'match', got {self.objective!r}")
        valid = DATASETS if self.objective == "mle" else ENERGIES
        if self.target not in valid:
            raise ConfigError(f"unknown target {self.target!r} for {self.objective}; valid: {', '.join(valid)}")
        if self.d != 2:
            raise ConfigError("the built-in targets are two-dimensional; d must be 2")
        for name in ("k", "layers", "n_flows", "batch_size", "eval_interval", "checkpoint_interval",
                     "held_out_size", "loss_window", "patience"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 0:
            raise ConfigError("max_iterations must be a non-negative integer")
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]")
        if not 0 <= self.polyak < 1:
            raise ConfigError("polyak must lie in [0, 1)")

    @property
    def flow_config(self) -> FlowConfig:
        return FlowConfig(self.d, self.k, self.layers, self.n_flows)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kwargs)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def polyak_update(avg: Dict[str, np.ndarray], params: Dict[str, np.ndarray], phi: float):
    """``avg <- phi * avg + (1 - phi) * params`` in place."""
    for name, p in params.items():
        a = avg[name]
        a *= phi
        a += (1.0 - phi) * p
    return avg


# ---------------------------------------------------------------------------
# learning-rate schedule


def lr_schedule(iterations_since_improvement: int, lr: float, patience: int, decay: float):
    """Decay ``lr`` once the no-improvement counter reaches ``patience``.

    Returns ``(lr', counter')``; the counter restarts whenever a decay fires.
    """
    if patience <= 0:
        raise ConfigError("patience must be positive")
    if iterations_since_improvement >= patience:
        return lr * decay, 0
    return lr, iterations_since_improvement


@dataclass
class PlateauSchedule:
    lr: float
    decay: float = 0.5
    patience: int = 2000
    best: float = float("inf")
    since: int = 0

    def update(self, metric: float, elapsed: int = 1) -> float:
        """Feed one evaluation taken ``elapsed`` iterations after the previous one."""
        if metric < self.best:
            self.best = metric
            self.since = 0
        else:
            self.since += elapsed
        self.lr, self.since = lr_schedule(self.since, self.lr, self.patience, self.decay)
        return self.lr


# ---------------------------------------------------------------------------
# training loop


@dataclass
class Checkpoint:
    config: TrainConfig
    iteration: int
    params: Dict[str, np.ndarray]
    adam: AdamState
    averaged: Dict[str, np.ndarray]
    rng_state: dict
    schedule: PlateauSchedule
    loss_history: List[float] = field(default_factory=list)

    def stack(self, averaged: bool = True) -> FlowStack:
        """Rebuild the flow stack, by default from the Polyak-averaged parameters."""
        skeleton = init_params(self.config.flow_config, np.random.default_rng(0))
        values = self.averaged if averaged else self.params
        return with_parameters(skeleton, {k: v.copy() for k, v in values.items()})


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[tuple]


class TrainingAborted(NumericalError):
    """Raised when a step produces non-finite values; the last good checkpoint was saved."""

    def __init__(self, message, checkpoint: Checkpoint, cause: Exception):
        super().__init__(message, layer=getattr(cause, "layer", None),
                         batch_index=getattr(cause, "batch_index", None))
        self.checkpoint = checkpoint


def initial_checkpoint(config: TrainConfig) -> Checkpoint:
    rng = np.random.default_rng(config.seed)
    stack = init_params(config.flow_config, rng)
    params = named_parameters(stack)
    return Checkpoint(
        config=config,
        iteration=0,
        params=params,
        adam=AdamState.zeros_like(params),
        averaged={k: p.copy() for k, p in params.items()},
        rng_state=rng.bit_generator.state,
        schedule=PlateauSchedule(config.initial_lr, config.decay, config.patience),
    )


def held_out_data(config: TrainConfig) -> np.ndarray:
    """Fixed evaluation sample, drawn from a stream independent of training."""
    rng = np.random.default_rng([config.seed, 1])
    return ToyDataset(config.target).sample(rng, config.held_out_size)


def mean_nll(stack: FlowStack, x: np.ndarray) -> float:
    out = stack_forward(stack, x)
    return float(-(normal_log_prob(out.y).data + out.log_det.data).mean())


def _write_rows(path: str, rows: List[tuple]):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRICS_HEADER)
        for it, loss, lr, metric in rows:
            writer.writerow([it, f"{loss:.17g}", f"{lr:.17g}", "" if metric is None else f"{metric:.17g}"])


def train(config: TrainConfig, resume: Optional[Checkpoint] = None,
          metrics_path: Optional[str] = None) -> TrainResult:
    """Run (or continue) the optimisation described by ``config``.

    Writes a checkpoint every ``checkpoint_interval`` iterations and at the end
    when ``config.checkpoint_path`` is set, and appends one metrics row per
    iteration to ``metrics_path``.
    """
    from .checkpoint import save_checkpoint

    state = copy.deepcopy(resume) if resume is not None else initial_checkpoint(config)
    state.config = config
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    skeleton = init_params(config.flow_config, np.random.default_rng(0))
    stack = with_parameters(skeleton, state.params)
    losses = deque(state.loss_history, maxlen=config.loss_window)
    held_out = held_out_data(config) if config.objective == "mle" else None
    if config.objective == "mle":
        sampler = ToyDataset(config.target)
    else:
        energy = EnergyTarget(config.target)

    history: List[tuple] = []
    pending: List[tuple] = []
    start = state.iteration

    def snapshot(iteration, rng_state):
        state.iteration = iteration
        state.rng_state = rng_state
        state.loss_history = list(losses)
        return state

    def flush():
        if metrics_path and pending:
            _write_rows(metrics_path, pending)
        pending.clear()

    for it in range(state.iteration + 1, config.max_iterations + 1):
        before = rng.bit_generator.state
        try:
            if config.objective == "mle":
                batch = sampler.sample(rng, config.batch_size)
                value, grads = loss_and_grad(nll_loss, stack, batch)
            else:
                batch = normal_sample(rng, config.batch_size, config.d)
                value, grads = loss_and_grad(density_matching_loss, stack, batch, energy)
            lr = state.schedule.lr
            adam_step(state.params, grads, state.adam, lr)
        except NumericalError as exc:
            flush()
            good = snapshot(it - 1, before)
            if config.checkpoint_path:
                save_checkpoint(config.checkpoint_path, good)
            raise TrainingAborted(f"numerical failure at iteration {it}: {exc}", good, exc) from exc

        if config.polyak > 0:
            polyak_update(state.averaged, state.params, config.polyak)
        else:
            for name, p in state.params.items():
                state.averaged[name][...] = p
        loss = value.item()
        losses.append(loss)

        metric = None
        if it % config.eval_interval == 0:
            if config.objective == "mle":
                metric = mean_nll(with_parameters(skeleton, state.averaged), held_out)
            else:
                metric = float(np.mean(losses))
            state.schedule.update(metric, config.eval_interval)
        row = (it, loss, lr, metric)
        history.append(row)
        pending.append(row)
        if metric is not None:
            logger.debug("iter %d loss %.4f lr %.3g eval %.4f", it, loss, lr, metric)

        if config.checkpoint_path and (it % config.checkpoint_interval == 0 or it == config.max_iterations):
            flush()
            save_checkpoint(config.checkpoint_path, snapshot(it, rng.bit_generator.state))

    flush()
    final = snapshot(max(start, config.max_iterations), rng.bit_generator.state)
    if config.checkpoint_path and config.max_iterations <= start:
        save_checkpoint(config.checkpoint_path, final)
    return TrainResult(final, history)
