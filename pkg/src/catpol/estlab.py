"""Exact-gradient lab for categorical gradient estimators.

For small factored categoricals the expected objective is a finite sum over
all class combinations, so the true gradient of
``E[f(mode)]`` with respect to the logits is computable exactly: enumerate
every mode, weight each ``f(mode)`` by its factorized probability, and
differentiate the sum with the same autodiff core the estimators run on.
Against that reference the lab measures, per estimator, the empirical mean
gradient, bias norm, per-component variance (reported as the trace), and the
standard error of the mean.

The three estimators reuse the backward rules from ``distributions``:
straight-through (exact categorical forward, softmax-Jacobian backward),
soft Gumbel relaxation (pathwise through the tempered softmax), and hard
Gumbel (one-hot forward, soft backward). The soft estimator is unbiased for
the *relaxed* objective; its bias here is measured against the exact
categorical gradient and is the relaxation bias. Sampling is vectorized over
draws with the identical update rules; tests pin the vectorized path to the
tape-built path sample by sample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .distributions import GUMBEL_HARD, GUMBEL_SOFT, STE, sample_gumbel
from .gradcore import Tape, TensorNode

ESTIMATORS = (STE, GUMBEL_SOFT, GUMBEL_HARD)

MAX_ENUMERATION = 1296  # largest M ** N the exact sum will expand

LINEAR = "linear"
QUADRATIC = "quadratic"


@dataclass(frozen=True)
class ObjectiveSpec:
    """A scalar objective on the flattened one-hot mode block.

    ``build`` records the objective on a tape; ``grad_flat`` is the same
    function's gradient in closed form on a batch of flattened samples,
    used by the vectorized estimator loop.
    """

    tag: str
    n_factors: int
    n_classes: int
    weight: np.ndarray | None = None     # (block,) for linear
    quad: np.ndarray | None = None       # (block, block) for quadratic

    @property
    def block(self) -> int:
        return self.n_factors * self.n_classes

    def build(self, z: TensorNode) -> TensorNode:
        """f(z) as a 1x1 node; ``z`` is the (n_factors, n_classes) block."""
        tape = z.tape
        flat = z.reshape(1, self.block)
        if self.tag == LINEAR:
            return flat.matmul(tape.constant(self.weight.reshape(-1, 1)))
        q = tape.constant(self.quad)
        return (flat.matmul(q) * flat).sum()

    def value(self, z: np.ndarray) -> float:
        x = z.reshape(-1)
        if self.tag == LINEAR:
            return float(x @ self.weight)
        return float(x @ self.quad @ x)

    def grad_flat(self, z_flat: np.ndarray) -> np.ndarray:
        """df/dz for each row of ``z_flat`` (draws, block)."""
        if self.tag == LINEAR:
            return np.broadcast_to(self.weight, z_flat.shape).copy()
        return z_flat @ (self.quad + self.quad.T)


def linear_objective(n_factors: int, n_classes: int, rng: np.random.Generator | None = None,
                     weight: np.ndarray | None = None) -> ObjectiveSpec:
    if weight is None:
        weight = rng.normal(0.0, 1.0, size=n_factors * n_classes)
    return ObjectiveSpec(LINEAR, n_factors, n_classes, weight=np.asarray(weight, dtype=np.float64))


def quadratic_objective(n_factors: int, n_classes: int, rng: np.random.Generator | None = None,
                        quad: np.ndarray | None = None) -> ObjectiveSpec:
    if quad is None:
        block = n_factors * n_classes
        quad = rng.normal(0.0, 1.0, size=(block, block))
    return ObjectiveSpec(QUADRATIC, n_factors, n_classes, quad=np.asarray(quad, dtype=np.float64))


def enumerate_modes(n_factors: int, n_classes: int) -> np.ndarray:
    """All one-hot mode blocks, shape (n_classes ** n_factors, n_factors,
    n_classes), in lexicographic order (factor 0 slowest), matching the
    mixed-radix mode index."""
    count = n_classes ** n_factors
    if count > MAX_ENUMERATION:
        raise ValueError(f"{n_classes} ** {n_factors} = {count} exceeds the enumeration cap {MAX_ENUMERATION}")
    out = np.zeros((count, n_factors, n_classes))
    for idx, choices in enumerate(itertools.product(range(n_classes), repeat=n_factors)):
        out[idx, np.arange(n_factors), choices] = 1.0
    return out


def exact_categorical_grad(logits: np.ndarray, obj: ObjectiveSpec) -> np.ndarray:
    """d E[f(mode)] / d logits by expanding the expectation exactly.

    E[f] = sum over modes of f(mode) * prod_i p_i(choice_i); the sum is
    recorded on a tape and differentiated with the ordinary backward pass.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (obj.n_factors, obj.n_classes):
        raise ValueError(f"logits shape {logits.shape} != ({obj.n_factors}, {obj.n_classes})")
    modes = enumerate_modes(obj.n_factors, obj.n_classes)
    tape = Tape()
    lg = tape.parameter(logits.shape, logits)
    probs = lg.softmax_rows()
    expectation = None
    for mode in modes:
        picked = (probs * tape.constant(mode)).sum_rows()   # p_i(choice_i), (n_factors, 1)
        prob = picked.log().sum().exp()                      # product over factors
        term = prob * obj.value(mode)
        expectation = term if expectation is None else expectation + term
    tape.backward(expectation)
    return lg.grad.copy()


@dataclass
class EstimatorReport:
    method: str
    temperature: float
    n_samples: int
    mean_grad: np.ndarray
    exact_grad: np.ndarray
    bias_norm: float
    variance_trace: float
    std_error_norm: float


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _jacobian_transport(s: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Rowwise softmax-Jacobian transpose: s * (u - <u, s>)."""
    dot = (upstream * s).sum(axis=-1, keepdims=True)
    return s * (upstream - dot)


def sample_gradients(
    method: str,
    logits: np.ndarray,
    obj: ObjectiveSpec,
    temperature: float,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``n_samples`` per-draw logits gradients, shape (draws, factors, classes).

    Vectorized over draws; applies exactly the backward rules the tape ops
    implement (see distributions): straight-through lands df/dz on the class
    probabilities and transports it through the softmax Jacobian; both Gumbel
    variants transport df/dz through the tempered softmax Jacobian scaled by
    1 / temperature, differing only in where df/dz is evaluated.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, m = obj.n_factors, obj.n_classes
    if logits.shape != (n, m):
        raise ValueError(f"logits shape {logits.shape} != ({n}, {m})")

    if method == STE:
        p = _softmax(logits)
        u = rng.random((n_samples, n))
        cdf = p.cumsum(axis=1)
        choices = (cdf[None, :, :] < u[:, :, None]).sum(axis=2)
        np.clip(choices, 0, m - 1, out=choices)
        z = np.zeros((n_samples, n, m))
        np.put_along_axis(z, choices[:, :, None], 1.0, axis=2)
        upstream = obj.grad_flat(z.reshape(n_samples, -1)).reshape(n_samples, n, m)
        return _jacobian_transport(p[None, :, :], upstream)

    if method in (GUMBEL_SOFT, GUMBEL_HARD):
        g = sample_gumbel(n_samples * n, m, rng).reshape(n_samples, n, m)
        soft = _softmax((logits[None, :, :] + g) / temperature)
        if method == GUMBEL_HARD:
            z = np.zeros_like(soft)
            np.put_along_axis(z, soft.argmax(axis=2)[:, :, None], 1.0, axis=2)
        else:
            z = soft
        upstream = obj.grad_flat(z.reshape(n_samples, -1)).reshape(n_samples, n, m)
        return _jacobian_transport(soft, upstream) / temperature

    raise ValueError(f"unknown estimator {method!r}; known: {ESTIMATORS}")


def estimator_stats(
    method: str,
    logits: np.ndarray,
    obj: ObjectiveSpec,
    temperature: float,
    n_samples: int,
    rng: np.random.Generator,
) -> EstimatorReport:
    """Bias / variance report for one estimator on one (logits, objective).

    Bias is always measured against the exact categorical gradient; for the
    soft Gumbel estimator that number is the relaxation bias, since the
    estimator is unbiased only for the relaxed objective.
    """
    if n_samples < 1000:
        raise ValueError(f"need at least 1000 samples for stable statistics, got {n_samples}")
    grads = sample_gradients(method, logits, obj, temperature, n_samples, rng)
    exact = exact_categorical_grad(logits, obj)
    mean_grad = grads.mean(axis=0)
    variance = grads.var(axis=0, ddof=1)
    variance_trace = float(variance.sum())
    return EstimatorReport(
        method=method,
        temperature=temperature,
        n_samples=n_samples,
        mean_grad=mean_grad,
        exact_grad=exact,
        bias_norm=float(np.linalg.norm(mean_grad - exact)),
        variance_trace=variance_trace,
        std_error_norm=float(np.sqrt(variance_trace / n_samples)),
    )


def chi_square_fit(counts: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    """Pearson goodness-of-fit statistic and its p-value.

    ``counts`` are observed per-class tallies, ``probs`` the hypothesized
    distribution. Degrees of freedom are classes - 1; the p-value is the
    regularized upper incomplete gamma Q(df / 2, statistic / 2). Expected
    counts below 5 make the chi-square approximation unreliable and raise.
    """
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if counts.shape != probs.shape or counts.ndim != 1:
        raise ValueError("counts and probs must be 1-D and the same length")
    if counts.size < 2:
        raise ValueError("need at least two classes")
    if abs(probs.sum() - 1.0) > 1e-9 or probs.min() <= 0.0:
        raise ValueError("probs must be positive and sum to 1")
    expected = counts.sum() * probs
    if expected.min() < 5.0:
        raise ValueError(f"expected count {expected.min():.3g} below 5; draw more samples")
    statistic = float(((counts - expected) ** 2 / expected).sum())
    p_value = float(gammaincc((counts.size - 1) / 2.0, statistic / 2.0))
    return statistic, p_value
