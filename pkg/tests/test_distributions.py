"""Sampling-primitive checks.

Distributional claims get statistical oracles (chi-square against exact
categorical probabilities, moment checks against closed forms); gradient
claims are checked against finite differences with the noise held fixed, or
against independently derived closed forms for the straight-through path.
"""

import numpy as np
import pytest
from scipy import stats

from catpol.distributions import (
    GUMBEL_HARD,
    GUMBEL_SOFT,
    LOG_STD_MAX,
    LOG_STD_MIN,
    STE,
    CategoricalParams,
    GumbelConfig,
    ModeSample,
    SquashedGaussianParams,
    gaussian_entropy,
    gumbel_softmax,
    onehot_rows,
    sample_gumbel,
    squashed_gaussian_sample,
    ste_categorical,
)
from catpol.gradcore import Tape

from conftest import finite_difference


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def make_params(tape, logits, n_factors=None):
    arr = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    node = tape.parameter(arr.shape, arr)
    return CategoricalParams(node, n_factors or arr.shape[0], arr.shape[1])


# ---- parameter validation ----------------------------------------------------


def test_categorical_params_validation():
    tape = Tape()
    with pytest.raises(ValueError):
        CategoricalParams(tape.constant(np.zeros((3, 4))), 2, 4)   # 3 rows, 2 factors
    with pytest.raises(ValueError):
        CategoricalParams(tape.constant(np.zeros((2, 4))), 2, 5)   # wrong class count
    with pytest.raises(ValueError):
        CategoricalParams(tape.constant([[np.inf, 0.0]]), 1, 2)
    with pytest.raises(ValueError):
        CategoricalParams(tape.constant(np.zeros((2, 1))), 2, 1)   # one class


def test_mode_sample_validation():
    tape = Tape()
    good = tape.constant([[1.0, 0.0], [0.0, 1.0]])
    ModeSample(good, hard=True, source_method=STE)
    with pytest.raises(ValueError):
        ModeSample(tape.constant([[0.6, 0.6]]), hard=False, source_method=GUMBEL_SOFT)
    with pytest.raises(ValueError):
        ModeSample(tape.constant([[0.5, 0.5]]), hard=True, source_method=GUMBEL_HARD)
    with pytest.raises(ValueError):
        ModeSample(good, hard=True, source_method="nonsense")


def test_squashed_params_require_clamped_log_std():
    tape = Tape()
    mean = tape.constant(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        SquashedGaussianParams(mean, tape.constant([[0.0, LOG_STD_MAX + 0.1]]))
    with pytest.raises(ValueError):
        SquashedGaussianParams(mean, tape.constant([[LOG_STD_MIN - 0.1, 0.0]]))
    with pytest.raises(ValueError):
        SquashedGaussianParams(mean, tape.constant(np.zeros((1, 3))))


def test_gumbel_config_validation():
    with pytest.raises(ValueError):
        GumbelConfig(temperature=0.0)


# ---- gumbel noise ------------------------------------------------------------


def test_sample_gumbel_moments(rng):
    draws = sample_gumbel(2000, 50, rng)
    assert np.isfinite(draws).all()
    # Gumbel(0,1): mean = Euler-Mascheroni, var = pi^2 / 6
    assert draws.mean() == pytest.approx(np.euler_gamma, abs=0.01)
    assert draws.var() == pytest.approx(np.pi ** 2 / 6.0, rel=0.02)


# ---- gumbel-softmax ----------------------------------------------------------


def test_soft_sample_with_zero_noise_is_tempered_softmax():
    tape = Tape()
    logits = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
    params = make_params(tape, logits)
    for temp in (0.5, 1.0, 2.0):
        sample = gumbel_softmax(params, GumbelConfig(temperature=temp, hard=False),
                                noise=np.zeros_like(logits))
        np.testing.assert_allclose(sample.z.values, softmax(logits / temp), atol=1e-12)
        assert sample.source_method == GUMBEL_SOFT and not sample.hard


def test_hard_sample_is_onehot_at_soft_argmax(rng):
    tape = Tape()
    logits = rng.standard_normal((6, 4))
    params = make_params(tape, logits)
    noise = sample_gumbel(6, 4, rng)
    soft = gumbel_softmax(params, GumbelConfig(2.0, hard=False), noise=noise)
    tape2 = Tape()
    hard = gumbel_softmax(make_params(tape2, logits), GumbelConfig(2.0, hard=True), noise=noise)
    np.testing.assert_array_equal(hard.z.values, onehot_rows(soft.z.values))
    assert hard.hard and hard.source_method == GUMBEL_HARD


def test_hard_gradient_equals_soft_gradient(rng):
    """Straight-through: the hard sample's backward is exactly the soft one's."""
    logits = rng.standard_normal((4, 3))
    noise = sample_gumbel(4, 3, rng)
    w = rng.standard_normal((4, 3))

    grads = {}
    for hard in (False, True):
        tape = Tape()
        params = make_params(tape, logits)
        sample = gumbel_softmax(params, GumbelConfig(1.5, hard=hard), noise=noise)
        loss = (sample.z * tape.constant(w)).sum()
        tape.backward(loss)
        grads[hard] = params.logits.grad.copy()
    np.testing.assert_allclose(grads[True], grads[False], atol=1e-14)


def test_soft_gradient_matches_finite_difference(rng):
    logits = rng.standard_normal((3, 4))
    noise = sample_gumbel(3, 4, rng)
    w = rng.standard_normal((3, 4))
    temp = 0.7

    def value(arrs):
        (l,) = arrs
        tape = Tape()
        params = make_params(tape, l)
        sample = gumbel_softmax(params, GumbelConfig(temp, hard=False), noise=noise)
        return (sample.z * tape.constant(w)).sum().item()

    tape = Tape()
    params = make_params(tape, logits)
    sample = gumbel_softmax(params, GumbelConfig(temp, hard=False), noise=noise)
    loss = (sample.z * tape.constant(w)).sum()
    tape.backward(loss)
    numeric = finite_difference(value, [logits])[0]
    np.testing.assert_allclose(params.logits.grad, numeric, atol=1e-7)


def test_gumbel_softmax_rejects_bad_noise_and_missing_rng():
    tape = Tape()
    params = make_params(tape, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        gumbel_softmax(params, GumbelConfig())
    with pytest.raises(ValueError):
        gumbel_softmax(params, GumbelConfig(), noise=np.zeros((1, 3)))


def test_gumbel_argmax_sampling_distribution(rng):
    """The Gumbel-max trick must reproduce categorical probabilities."""
    logits = np.array([[0.5, -0.3, 1.2, 0.0]])
    p = softmax(logits)[0]
    n = 20000
    tape = Tape()
    params = make_params(tape, np.repeat(logits, n, axis=0), n_factors=n)
    sample = gumbel_softmax(params, GumbelConfig(temperature=1.0, hard=True), rng=rng)
    counts = sample.z.values.sum(axis=0)
    result = stats.chisquare(counts, f_exp=n * p)
    assert result.pvalue > 1e-4


# ---- straight-through categorical --------------------------------------------


def test_ste_forward_is_exact_onehot_draw(rng):
    tape = Tape()
    params = make_params(tape, rng.standard_normal((5, 4)))
    sample = ste_categorical(params, rng)
    v = sample.z.values
    assert ((v == 0.0) | (v == 1.0)).all()
    np.testing.assert_array_equal(v.sum(axis=1), np.ones(5))
    assert sample.hard and sample.source_method == STE


def test_ste_sampling_distribution_matches_softmax(rng):
    logits = np.array([[1.0, 0.0, -1.0]])
    p = softmax(logits)[0]
    n = 20000
    tape = Tape()
    params = make_params(tape, np.repeat(logits, n, axis=0), n_factors=n)
    counts = ste_categorical(params, rng).z.values.sum(axis=0)
    assert stats.chisquare(counts, f_exp=n * p).pvalue > 1e-4


def test_ste_gradient_is_softmax_jacobian_on_upstream(rng):
    """For loss sum(w * z), the logit gradient must be p * (w - p.w) per row,
    independent of which class was drawn (derived by composing the identity
    backward with the softmax Jacobian)."""
    logits = rng.standard_normal((4, 5))
    w = rng.standard_normal((4, 5))
    p = softmax(logits)
    expected = p * (w - (p * w).sum(axis=1, keepdims=True))
    for forced_class in range(5):
        tape = Tape()
        params = make_params(tape, logits)
        indices = np.full(4, forced_class)
        sample = ste_categorical(params, indices=indices)
        np.testing.assert_array_equal(sample.z.values[:, forced_class], np.ones(4))
        tape.backward((sample.z * tape.constant(w)).sum())
        np.testing.assert_allclose(params.logits.grad, expected, atol=1e-12)


def test_ste_requires_rng_or_indices():
    tape = Tape()
    with pytest.raises(ValueError):
        ste_categorical(make_params(tape, np.zeros((2, 3))))


# ---- squashed gaussian --------------------------------------------------------


def test_squashed_sample_matches_reparameterization(rng):
    tape = Tape()
    mean = tape.constant([[0.3, -0.5]])
    log_std = tape.constant([[0.1, -1.0]])
    params = SquashedGaussianParams(mean, log_std)
    noise = np.array([[0.7, -1.2]])
    action, pre = squashed_gaussian_sample(params, noise=noise)
    want_pre = mean.values + np.exp(log_std.values) * noise
    np.testing.assert_allclose(pre.values, want_pre, atol=1e-14)
    np.testing.assert_allclose(action.values, np.tanh(want_pre), atol=1e-14)
    assert (np.abs(action.values) < 1.0).all()


def test_squashed_sample_gradients_match_fd(rng):
    mean0 = rng.standard_normal((3, 2))
    log_std0 = np.clip(rng.standard_normal((3, 2)), -1.5, 0.5)
    noise = rng.standard_normal((3, 2))
    w = rng.standard_normal((3, 2))

    def build(arrs):
        m, ls = arrs
        tape = Tape()
        mean = tape.parameter(m.shape, m)
        log_std = tape.parameter(ls.shape, ls)
        params = SquashedGaussianParams(mean, log_std)
        action, _ = squashed_gaussian_sample(params, noise=noise)
        loss = (action * tape.constant(w)).sum()
        return tape, mean, log_std, loss

    tape, mean, log_std, loss = build([mean0, log_std0])
    tape.backward(loss)
    numeric = finite_difference(lambda arrs: build(arrs)[3].item(), [mean0, log_std0])
    np.testing.assert_allclose(mean.grad, numeric[0], atol=1e-7)
    np.testing.assert_allclose(log_std.grad, numeric[1], atol=1e-7)


def test_squashed_sample_requires_rng_or_noise():
    tape = Tape()
    params = SquashedGaussianParams(tape.constant(np.zeros((1, 2))),
                                    tape.constant(np.zeros((1, 2))))
    with pytest.raises(ValueError):
        squashed_gaussian_sample(params)
    with pytest.raises(ValueError):
        squashed_gaussian_sample(params, noise=np.zeros((2, 2)))


def test_gaussian_entropy_closed_form():
    tape = Tape()
    params = SquashedGaussianParams(tape.constant(np.zeros((1, 1))),
                                    tape.constant(np.zeros((1, 1))))
    assert gaussian_entropy(params) == pytest.approx(0.5 * np.log(2.0 * np.pi * np.e))
    # scipy as the independent oracle, including nontrivial sigma and k = 2
    log_std = np.array([[-0.4, 0.9]])
    params2 = SquashedGaussianParams(tape.constant(np.zeros((1, 2))),
                                     tape.constant(log_std))
    want = sum(stats.norm(0.0, np.exp(s)).entropy() for s in log_std[0])
    assert gaussian_entropy(params2) == pytest.approx(want)


def test_gaussian_entropy_batch_is_row_mean():
    tape = Tape()
    log_std = np.array([[0.0, 0.0], [1.0, -1.0]])
    params = SquashedGaussianParams(tape.constant(np.zeros((2, 2))),
                                    tape.constant(log_std))
    per_row = log_std.sum(axis=1) + np.log(2.0 * np.pi * np.e)
    assert gaussian_entropy(params) == pytest.approx(per_row.mean())
