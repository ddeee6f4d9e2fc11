"""Block neural autoregressive flows.

A flow is a single masked feed-forward network ``R^d -> R^d`` whose affine
layers use lower block-triangular weight matrices. Diagonal blocks are passed
through ``exp`` so every ``y_i`` is strictly increasing in ``x_i`` while
depending freely on ``x_<i``. The Jacobian diagonal is accumulated in log space
alongside the forward pass, so ``log|det J|`` never needs the full Jacobian.

Layer ``l`` of a flow maps ``b*d`` inputs to ``a*d`` outputs; row block ``i``
(rows ``i*a .. (i+1)*a``) only reads column blocks ``j <= i``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ConvergenceError, DimensionError, DomainError, NumericalError, RangeError

INVERSE_BRACKET = 1e3
INVERSE_MAX_ITER = 200


@dataclass(frozen=True)
class FlowConfig:
    """Architecture of a stack: ``d`` inputs, hidden width ``k*d``, ``layers`` hidden layers."""

    d: int
    k: int
    layers: int
    n_flows: int = 1

    def __post_init__(self):
        for name in ("d", "k", "layers", "n_flows"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

    @property
    def hidden_units(self) -> int:
        return self.k * self.d

    def block_shapes(self) -> List[tuple]:
        """``(a, b)`` for each affine layer, input to output."""
        return [(self.k, 1)] + [(self.k, self.k)] * (self.layers - 1) + [(1, self.k)]


@dataclass(frozen=True)
class BlockMasks:
    d: int
    a: int
    b: int
    diag: np.ndarray
    off: np.ndarray
    diag_rows: np.ndarray = field(repr=False)
    diag_cols: np.ndarray = field(repr=False)


def build_masks(d: int, a: int, b: int) -> BlockMasks:
    """Masks selecting the diagonal blocks and the strictly lower blocks of an ``ad x bd`` matrix."""
    for name, value in (("d", d), ("a", a), ("b", b)):
        if int(value) != value or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    row_block = np.arange(a * d) // a
    col_block = np.arange(b * d) // b
    diag = (row_block[:, None] == col_block[None, :]).astype(np.float64)
    off = (row_block[:, None] > col_block[None, :]).astype(np.float64)
    blocks = np.arange(d)[:, None, None]
    rows = np.broadcast_to(blocks * a + np.arange(a)[None, :, None], (d, a, b)).copy()
    cols = np.broadcast_to(blocks * b + np.arange(b)[None, None, :], (d, a, b)).copy()
    for arr in (diag, off, rows, cols):
        arr.flags.writeable = False
    return BlockMasks(d, a, b, diag, off, rows, cols)


@dataclass
class BnafLayerParams:
    """Free parameters of one masked affine layer.

    ``W_hat`` is the unconstrained matrix, ``s`` the per-row log-scale of the
    weight normalisation and ``bias`` the offset. Fields hold numpy arrays, or
    autodiff leaves after :func:`bind`.
    """

    W_hat: np.ndarray
    s: np.ndarray
    bias: np.ndarray
    masks: BlockMasks
    activation: bool = True


@dataclass
class BnafFlow:
    layers: List[BnafLayerParams]
    gate_raw: np.ndarray

    @property
    def d(self) -> int:
        return self.layers[0].masks.d


@dataclass
class FlowStack:
    config: FlowConfig
    flows: List[BnafFlow]
    permutations: List[np.ndarray]

    @property
    def d(self) -> int:
        return self.config.d


@dataclass
class FlowOutput:
    y: Tensor
    log_det: Tensor
    log_diags: List[Tensor]


# ---------------------------------------------------------------------------
# parameters


def reversal(d: int) -> np.ndarray:
    return np.arange(d)[::-1].copy()


def init_params(config: FlowConfig, rng: np.random.Generator) -> FlowStack:
    """Standard-normal ``W_hat``, ``s = log(u)`` with ``u ~ U(0, 1]``, zero biases, gates at 0.5."""
    flows = []
    shapes = config.block_shapes()
    for _ in range(config.n_flows):
        layers = []
        for idx, (a, b) in enumerate(shapes):
            masks = build_masks(config.d, a, b)
            w_hat = rng.standard_normal((a * config.d, b * config.d))
            s = np.log(1.0 - rng.random(a * config.d))
            layers.append(BnafLayerParams(w_hat, s, np.zeros(a * config.d), masks,
                                          activation=idx < len(shapes) - 1))
        flows.append(BnafFlow(layers, np.zeros(())))
    perms = [reversal(config.d) for _ in range(config.n_flows - 1)]
    return FlowStack(config, flows, perms)


def named_parameters(stack: FlowStack) -> Dict[str, object]:
    """Ordered ``name -> array`` view of every trainable tensor (shared, not copied)."""
    out = {}
    for j, flow in enumerate(stack.flows):
        for l, layer in enumerate(flow.layers):
            out[f"flow{j}.layer{l}.W_hat"] = layer.W_hat
            out[f"flow{j}.layer{l}.s"] = layer.s
            out[f"flow{j}.layer{l}.bias"] = layer.bias
        out[f"flow{j}.gate_raw"] = flow.gate_raw
    return out


def with_parameters(stack: FlowStack, values: Dict[str, object]) -> FlowStack:
    """A structural copy of ``stack`` whose parameters come from ``values``."""
    flows = []
    for j, flow in enumerate(stack.flows):
        layers = [
            dataclasses.replace(
                layer,
                W_hat=values[f"flow{j}.layer{l}.W_hat"],
                s=values[f"flow{j}.layer{l}.s"],
                bias=values[f"flow{j}.layer{l}.bias"],
            )
            for l, layer in enumerate(flow.layers)
        ]
        flows.append(BnafFlow(layers, values[f"flow{j}.gate_raw"]))
    return FlowStack(stack.config, flows, stack.permutations)


def bind(stack: FlowStack):
    """Wrap every parameter in a gradient-tracking leaf.

    Returns ``(bound_stack, leaves)`` where ``leaves`` maps parameter names to
    the :class:`Tensor` objects whose ``.grad`` is filled by ``backward``.
    """
    leaves = {name: Tensor(arr, requires_grad=True) for name, arr in named_parameters(stack).items()}
    return with_parameters(stack, leaves), leaves


def count_params(config: FlowConfig) -> int:
    """Trainable scalars: unmasked weights, log-scales, biases and one gate per flow."""
    d = config.d
    per_flow = 1
    for a, b in config.block_shapes():
        per_flow += (d * (d + 1) // 2) * a * b + 2 * a * d
    return per_flow * config.n_flows


# ---------------------------------------------------------------------------
# forward pass


def effective_weight(p: BnafLayerParams):
    """Masked, exponentiated and row-normalised weight matrix.

    Returns ``(W, log_diag_blocks)``; the second has shape ``(d, a, b)`` and
    holds the exact log of every diagonal-block entry of ``W``.
    """
    m = p.masks
    w_hat = ad.as_tensor(p.W_hat)
    s = ad.as_tensor(p.s)
    if w_hat.shape != m.diag.shape or s.shape != (m.diag.shape[0],):
        raise DimensionError(f"parameter shapes {w_hat.shape}, {s.shape} do not match masks {m.diag.shape}")
    # exp only on the diagonal support so masked-out entries cannot overflow
    v = ad.exp(w_hat * m.diag) * m.diag + w_hat * m.off
    sq_norm = (v * v).sum(axis=1)
    if np.any(sq_norm.data <= 0):
        row = int(np.argmax(sq_norm.data <= 0))
        raise DomainError(f"degenerate row {row}: weight row is entirely zero")
    row_log_scale = s - 0.5 * ad.log(sq_norm)
    n_rows, n_cols = m.diag.shape
    tiled = ad.broadcast_to(row_log_scale.reshape(n_rows, 1), (n_rows, n_cols))
    weight = v * ad.exp(tiled)
    log_diag = ad.index_select(w_hat + tiled, (m.diag_rows, m.diag_cols))
    return weight, log_diag


def log_mat_mul(a_log, b_log) -> Tensor:
    """Product of positive matrices given and returned as logarithms.

    ``C[..., i, j] = logsumexp_k(A[..., i, k] + B[..., k, j])``; leading batch
    dimensions must match exactly.
    """
    a_log, b_log = ad.as_tensor(a_log), ad.as_tensor(b_log)
    if (a_log.ndim < 2 or a_log.ndim != b_log.ndim or a_log.shape[:-2] != b_log.shape[:-2]
            or a_log.shape[-1] != b_log.shape[-2]):
        raise DimensionError(f"log_mat_mul: cannot multiply shapes {a_log.shape} and {b_log.shape}")
    *lead, m, n = a_log.shape
    p = b_log.shape[-1]
    full = (*lead, m, n, p)
    lhs = ad.broadcast_to(a_log.reshape(*lead, m, n, 1), full)
    rhs = ad.broadcast_to(b_log.reshape(*lead, 1, n, p), full)
    return ad.logsumexp(lhs + rhs, axis=-2)


def tanh_log_derivative(h) -> Tensor:
    """``log(1 - tanh(h)^2)`` without cancellation for large ``|h|``."""
    h = ad.as_tensor(h)
    return 2.0 * (np.log(2.0) - h - ad.softplus(-2.0 * h))


def _check_finite(t: Tensor, layer: int, what: str):
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite {what} in layer {layer}", layer=layer)


def flow_forward(flow: BnafFlow, x, log_det: bool = True) -> FlowOutput:
    """Evaluate one gated flow on a ``batch x d`` input.

    With ``log_det=False`` only ``y`` is computed (``log_det`` and
    ``log_diags`` are ``None``); inversion and sampling use this.
    """
    x = ad.as_tensor(x)
    d = flow.d
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"flow expects input of shape (batch, {d}), got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericalError("non-finite flow input", layer=-1)
    n = x.shape[0]
    h, g = x, None
    for idx, layer in enumerate(flow.layers):
        m = layer.masks
        weight, log_blocks = effective_weight(layer)
        bias = ad.broadcast_to(ad.as_tensor(layer.bias).reshape(1, m.a * d), (n, m.a * d))
        pre = h @ weight.T + bias
        _check_finite(pre, idx, "pre-activation")
        if log_det:
            blocks = ad.broadcast_to(log_blocks.reshape(1, d, m.a, m.b), (n, d, m.a, m.b))
            g = blocks if g is None else log_mat_mul(blocks, g)
        if layer.activation:
            h = ad.tanh(pre)
            if log_det:
                # diagonal activation Jacobian: a log-space Hadamard product suffices
                g = g + tanh_log_derivative(pre).reshape(n, d, m.a, 1)
        else:
            h = pre
        if log_det:
            _check_finite(g, idx, "log-Jacobian")
    gate_raw = ad.as_tensor(flow.gate_raw)
    alpha, keep = ad.sigmoid(gate_raw), ad.sigmoid(-gate_raw)
    y = alpha * h + keep * x
    if not log_det:
        return FlowOutput(y, None, None)
    core = g.reshape(n, d)
    log_alpha = -ad.softplus(-gate_raw)
    log_keep = -ad.softplus(gate_raw)
    diag = ad.logaddexp(log_alpha + core, log_keep)
    return FlowOutput(y, diag.sum(axis=1), [diag])


def stack_forward(stack: FlowStack, x, log_det: bool = True) -> FlowOutput:
    """Compose the flows, permuting coordinates between consecutive flows."""
    y = ad.as_tensor(x)
    total, diags = None, []
    for j, flow in enumerate(stack.flows):
        if j > 0:
            y = y[:, stack.permutations[j - 1]]
        out = flow_forward(flow, y, log_det=log_det)
        y = out.y
        if log_det:
            total = out.log_det if total is None else total + out.log_det
            diags.extend(out.log_diags)
    return FlowOutput(y, total, diags if log_det else None)


# ---------------------------------------------------------------------------
# inversion


def _flow_values(flow: BnafFlow, x: np.ndarray) -> np.ndarray:
    return flow_forward(flow, x, log_det=False).y.data


def _invert_flow(flow: BnafFlow, y: np.ndarray, tol: float, bracket: float, max_iter: int) -> np.ndarray:
    n, d = y.shape
    x = np.zeros((n, d))
    for i in range(d):
        lo = np.full(n, -bracket)
        hi = np.full(n, bracket)
        x[:, i] = lo
        f_lo = _flow_values(flow, x)[:, i]
        x[:, i] = hi
        f_hi = _flow_values(flow, x)[:, i]
        bad = ~((f_lo < y[:, i]) & (y[:, i] < f_hi))
        if np.any(bad):
            rows = np.flatnonzero(bad)
            raise RangeError(f"coordinate {i}: target outside f([-{bracket:g}, {bracket:g}]) for rows {rows.tolist()}")
        sol = np.zeros(n)
        done = np.zeros(n, dtype=bool)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            x[:, i] = mid
            f_mid = _flow_values(flow, x)[:, i]
            # finished when close enough or the interval cannot shrink further
            hit = ~done & ((np.abs(f_mid - y[:, i]) <= 1e-3 * tol) | (mid <= lo) | (mid >= hi))
            sol[hit] = mid[hit]
            done |= hit
            if np.all(done):
                break
            below = f_mid < y[:, i]
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        else:
            rows = np.flatnonzero(~done)
            raise ConvergenceError(f"coordinate {i}: bisection did not converge in {max_iter} steps", rows)
        x[:, i] = sol
    return x


def flow_inverse(stack: FlowStack, y, tol: float = 1e-8, bracket: float = INVERSE_BRACKET,
                 max_iter: int = INVERSE_MAX_ITER) -> np.ndarray:
    """Numerically invert the stack by coordinate-wise bisection.

    Each flow is inverted in reverse order. Within a flow ``x_1`` is found
    first, then ``x_2`` given ``x_1`` and so on; every step is a scalar
    monotone root-find. Raises :class:`ConvergenceError` listing the rows whose
    forward residual exceeds ``tol``.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    target = np.array(ad.as_tensor(y).data, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != stack.d:
        raise DimensionError(f"expected shape (batch, {stack.d}), got {target.shape}")
    if target.shape[0] == 0:
        return target.copy()
    x = target
    for j in range(len(stack.flows) - 1, -1, -1):
        x = _invert_flow(stack.flows[j], x, tol, bracket, max_iter)
        if j > 0:
            inv = np.argsort(stack.permutations[j - 1])
            x = x[:, inv]
    residual = np.abs(stack_forward(stack, x, log_det=False).y.data - target).max(axis=1)
    failed = np.flatnonzero(~(residual < tol))
    if failed.size:
        raise ConvergenceError(f"round-trip error {residual.max():.3g} exceeds tol {tol:g}", failed)
    return x
