"""Multimodal categorical policies for continuous control.

The package centers on a two-stage stochastic policy: a state-conditioned
block of categorical variables picks a discrete behavior mode, and a
mode-conditioned squashed Gaussian produces the continuous action. Supporting
pieces: a small reverse-mode autodiff core (``gradcore``), differentiable
sampling primitives (``distributions``), differentiable toy environments
(``envs``), a pathwise actor-critic trainer (``trainer``), and an exact-
gradient lab for estimator bias/variance analysis (``estlab``).
"""

__version__ = "0.1.0"
