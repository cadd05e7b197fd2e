"""Differentiable sampling primitives for discrete modes and squashed actions.

Three mechanisms for drawing a block of one-hot categorical variables with a
usable gradient:

* soft relaxation: ``z = softmax((logits + g) / temperature)`` with
  ``g = -log(-log u)`` standard Gumbel noise, fully differentiable but not
  discrete;
* hard relaxation: one-hot at the argmax of the soft sample forward, with the
  soft sample's gradient (``hard = soft + stop_gradient(onehot - soft)``);
* straight-through categorical: an exact categorical draw forward; backward,
  the upstream gradient lands unchanged on the class probabilities and then
  flows through the exact softmax Jacobian onto the logits.

Continuous actions come from a diagonal Gaussian squashed through tanh. No
density correction is applied anywhere; downstream losses are pathwise only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import TensorNode

STE = "ste"
GUMBEL_SOFT = "gumbel_soft"
GUMBEL_HARD = "gumbel_hard"

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_U_FLOOR = 1e-12


@dataclass(frozen=True)
class GumbelConfig:
    """Relaxation settings. The temperature is fixed for a whole run."""

    temperature: float = 2.0
    hard: bool = True

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass
class CategoricalParams:
    """A block of independent categorical variables, one per logits row.

    ``logits`` has ``batch * n_factors`` rows of ``n_classes`` columns; for a
    single input the block is exactly ``n_factors`` rows.
    """

    logits: TensorNode
    n_factors: int
    n_classes: int

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("need at least one categorical factor")
        if self.n_classes < 2:
            raise ValueError("each categorical needs at least two classes")
        rows, cols = self.logits.shape
        if cols != self.n_classes:
            raise ValueError(f"logits have {cols} columns, expected {self.n_classes}")
        if rows % self.n_factors != 0:
            raise ValueError(f"{rows} logit rows do not stack {self.n_factors} factors")
        if not np.isfinite(self.logits.values).all():
            raise ValueError("logits contain non-finite entries")


@dataclass
class ModeSample:
    """A sampled mode block; rows align with the logits rows that produced it."""

    z: TensorNode
    hard: bool
    source_method: str

    def __post_init__(self):
        if self.source_method not in (STE, GUMBEL_SOFT, GUMBEL_HARD):
            raise ValueError(f"unknown sampling method {self.source_method!r}")
        v = self.z.values
        if np.abs(v.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("mode sample rows must sum to 1")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("mode sample entries must lie in [0, 1]")
        if self.hard:
            if not np.logical_or(v == 0.0, v == 1.0).all():
                raise ValueError("hard sample must be exactly one-hot")


@dataclass
class SquashedGaussianParams:
    """Mean and per-dimension log standard deviation of the pre-tanh Gaussian."""

    mean: TensorNode
    log_std: TensorNode

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise ValueError("mean and log_std shapes differ")
        v = self.log_std.values
        if v.min() < LOG_STD_MIN or v.max() > LOG_STD_MAX:
            raise ValueError(
                f"log_std outside [{LOG_STD_MIN}, {LOG_STD_MAX}]; clamp before constructing"
            )


def sample_gumbel(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel(0, 1) noise via -log(-log u), u clamped away from {0, 1}."""
    u = rng.random((rows, cols))
    np.clip(u, _U_FLOOR, 1.0 - _U_FLOOR, out=u)
    return -np.log(-np.log(u))


def onehot_rows(values: np.ndarray) -> np.ndarray:
    """One-hot of the per-row argmax; ties resolve to the lowest index."""
    out = np.zeros_like(values)
    out[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
    return out


def gumbel_softmax(
    params: CategoricalParams,
    cfg: GumbelConfig,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> ModeSample:
    """Temperature-relaxed categorical sample; hard variant keeps soft gradients.

    ``noise`` overrides the Gumbel draw (tests use zeros to recover a plain
    softmax). Exactly one of ``rng`` / ``noise`` must be provided.
    """
    logits = params.logits
    if noise is None:
        if rng is None:
            raise ValueError("need an rng when no noise is supplied")
        noise = sample_gumbel(logits.rows, logits.cols, rng)
    elif noise.shape != logits.shape:
        raise ValueError(f"noise shape {noise.shape} != logits shape {logits.shape}")

    g = logits.tape.constant(noise)
    soft = ((logits + g) * (1.0 / cfg.temperature)).softmax_rows()
    if not cfg.hard:
        return ModeSample(soft, hard=False, source_method=GUMBEL_SOFT)
    hard = soft.straight_through(onehot_rows(soft.values))
    return ModeSample(hard, hard=True, source_method=GUMBEL_HARD)


def ste_categorical(
    params: CategoricalParams,
    rng: np.random.Generator | None = None,
    indices: np.ndarray | None = None,
) -> ModeSample:
    """Exact categorical sample forward, straight-through backward.

    The sampled one-hot replaces the probability vector in the forward pass;
    the backward pass treats that replacement as the identity, so the
    upstream gradient reaches the probabilities unchanged and then the exact
    softmax Jacobian maps it onto the logits. ``indices`` forces the drawn
    class per row (test hook).
    """
    probs = params.logits.softmax_rows()
    p = probs.values
    if indices is None:
        if rng is None:
            raise ValueError("need an rng when no indices are supplied")
        u = rng.random(p.shape[0])
        cdf = p.cumsum(axis=1)
        indices = (cdf < u[:, None]).sum(axis=1)
        np.clip(indices, 0, p.shape[1] - 1, out=indices)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), indices] = 1.0
    return ModeSample(probs.straight_through(onehot), hard=True, source_method=STE)


def squashed_gaussian_sample(
    params: SquashedGaussianParams,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> tuple[TensorNode, TensorNode]:
    """Reparameterized draw ``tanh(mean + std * eps)``.

    Returns ``(action, pre_tanh)``. ``noise`` overrides ``eps`` for
    deterministic replay; actions land strictly inside (-1, 1).
    """
    mean = params.mean
    if noise is None:
        if rng is None:
            raise ValueError("need an rng when no noise is supplied")
        noise = rng.standard_normal(mean.shape)
    elif noise.shape != mean.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {mean.shape}")
    eps = mean.tape.constant(noise)
    pre_tanh = mean + params.log_std.exp() * eps
    return pre_tanh.tanh(), pre_tanh


def gaussian_entropy(params: SquashedGaussianParams) -> float:
    """Entropy of the pre-squash diagonal Gaussian, sum of
    ``log_std_i + 0.5 * log(2 * pi * e)`` per dimension; batched inputs
    return the mean over rows."""
    per_row = params.log_std.values.sum(axis=1) + 0.5 * np.log(2.0 * np.pi * np.e) * params.log_std.cols
    return float(per_row.mean())
