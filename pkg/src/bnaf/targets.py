"""Base distribution, 2D toy datasets and 2D energy functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

DATASETS = ("eight_gaussians", "two_spirals", "checkerboard")
ENERGIES = ("u1", "u2", "u3", "u4")

LOG_2PI = float(np.log(2 * np.pi))


def normal_log_prob(x) -> Tensor:
    """Row-wise log-density of the standard normal for a ``batch x d`` input."""
    x = ad.as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"expected a (batch, d) tensor, got shape {x.shape}")
    d = x.shape[1]
    return -0.5 * d * LOG_2PI - 0.5 * (x * x).sum(axis=1)


def normal_sample(rng: np.random.Generator, batch: int, d: int) -> np.ndarray:
    return rng.standard_normal((batch, d))


@dataclass(frozen=True)
class ToyDataset:
    """One of the named 2D toy distributions.

    * ``eight_gaussians``: equal-weight mixture, means on the radius-2 circle at
      angles ``2*pi*j/8``, isotropic std 0.2.
    * ``two_spirals``: ``r = t``, ``theta = 1.5*pi*t`` with ``t ~ U(0, 1)`` plus
      N(0, 0.05^2) jitter; half the points are negated to form the second arm.
    * ``checkerboard``: uniform over the unit cells of ``[-4, 4]^2`` whose
      integer corner ``(i, j)`` has ``i + j`` even.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in DATASETS:
            raise ConfigError(f"unknown dataset {self.kind!r}; valid kinds: {', '.join(DATASETS)}")

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return toy_sample(self, rng, batch)


EIGHT_GAUSSIAN_MEANS = 2.0 * np.stack(
    [np.cos(2 * np.pi * np.arange(8) / 8), np.sin(2 * np.pi * np.arange(8) / 8)], axis=1
)
EIGHT_GAUSSIAN_STD = 0.2


def _checker_cells() -> np.ndarray:
    ij = np.array([(i, j) for i in range(-4, 4) for j in range(-4, 4) if (i + j) % 2 == 0], dtype=float)
    return ij


def toy_sample(ds, rng: np.random.Generator, batch: int) -> np.ndarray:
    kind = ds.kind if isinstance(ds, ToyDataset) else ToyDataset(ds).kind
    if kind == "eight_gaussians":
        centers = EIGHT_GAUSSIAN_MEANS[rng.integers(0, 8, size=batch)]
        return centers + EIGHT_GAUSSIAN_STD * rng.standard_normal((batch, 2))
    if kind == "two_spirals":
        t = rng.random(batch)
        theta = 1.5 * np.pi * t
        pts = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1)
        sign = np.where(rng.random(batch) < 0.5, 1.0, -1.0)
        return sign[:, None] * pts + 0.05 * rng.standard_normal((batch, 2))
    cells = _checker_cells()
    return cells[rng.integers(0, len(cells), size=batch)] + rng.random((batch, 2))


# ---------------------------------------------------------------------------
# energies: log p*(z) = -U(z) up to a constant


def _gauss_exponent(value, scale: float) -> Tensor:
    return -0.5 * ad.square(value / scale)


def _w1(z1):
    return ad.sin(2 * np.pi * z1 / 4.0)


def _u1(z1, z2):
    radius = ad.sqrt(z1 * z1 + z2 * z2)
    ring = 0.5 * ad.square((radius - 2.0) / 0.4)
    return ring - ad.logaddexp(_gauss_exponent(z1 - 2.0, 0.6), _gauss_exponent(z1 + 2.0, 0.6))


def _u2(z1, z2):
    return 0.5 * ad.square((z2 - _w1(z1)) / 0.4)


def _u3(z1, z2):
    w2 = 3.0 * ad.exp(_gauss_exponent(z1 - 1.0, 0.6))
    inner = z2 - _w1(z1)
    return -ad.logaddexp(_gauss_exponent(inner, 0.35), _gauss_exponent(inner + w2, 0.35))


def _u4(z1, z2):
    w3 = 3.0 * ad.sigmoid((z1 - 1.0) / 0.3)
    inner = z2 - _w1(z1)
    return -ad.logaddexp(_gauss_exponent(inner, 0.4), _gauss_exponent(inner + w3, 0.35))


_ENERGY_FNS = {"u1": _u1, "u2": _u2, "u3": _u3, "u4": _u4}


@dataclass(frozen=True)
class EnergyTarget:
    """Unnormalised 2D target with ``log p~(z) = -U(z)``; call it on a ``batch x 2`` tensor."""

    kind: str

    def __post_init__(self):
        if self.kind not in ENERGIES:
            raise ConfigError(f"unknown energy {self.kind!r}; valid targets: {', '.join(ENERGIES)}")

    def __call__(self, z) -> Tensor:
        return energy(self, z)


def energy(target, z) -> Tensor:
    kind = target.kind if isinstance(target, EnergyTarget) else EnergyTarget(target).kind
    z = ad.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != 2:
        raise DimensionError(f"energies are defined on (batch, 2) inputs, got {z.shape}")
    return _ENERGY_FNS[kind](z[:, 0], z[:, 1])
