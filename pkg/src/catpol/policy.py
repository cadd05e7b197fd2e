"""Policy networks: a two-stage multimodal policy and a unimodal baseline.

The multimodal policy factors action selection into two MLPs. The mode net
maps the state to ``n_factors * n_classes`` logits, read as ``n_factors``
independent categorical variables; a discrete behavior mode is sampled from
them. The action net maps the flattened one-hot mode block (and nothing
else; the state reaches the action only through the mode) to the mean and
log standard deviation of a tanh-squashed Gaussian. The unimodal baseline is
a single, one-layer-deeper MLP from state straight to the same Gaussian
head.

Parameters persist as plain numpy arrays between updates; each training step
binds them onto a fresh tape as parameter nodes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    GUMBEL_HARD,
    GUMBEL_SOFT,
    LOG_STD_MAX,
    LOG_STD_MIN,
    STE,
    CategoricalParams,
    GumbelConfig,
    ModeSample,
    SquashedGaussianParams,
    gumbel_softmax,
    squashed_gaussian_sample,
    ste_categorical,
)
from .gradcore import Tape, TensorNode

METHOD_STE = "ste"
METHOD_GUMBEL = "gumbel"
METHOD_UNIMODAL = "unimodal"

DEFAULT_HIDDEN = 300
DESK_HIDDEN = 64
DEFAULT_FACTORS = 8
DEFAULT_CLASSES = 8
DESK_FACTORS = 4
DESK_CLASSES = 4

_ACTIVATIONS = ("elu", "linear")


@dataclass
class MlpLayer:
    weight: np.ndarray          # (fan_in, fan_out)
    bias: np.ndarray            # (1, fan_out)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (1, self.weight.shape[1]):
            raise ValueError("bias shape does not match weight fan-out")


@dataclass
class MlpParams:
    layers: list[MlpLayer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def arrays(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        named = []
        for i, layer in enumerate(self.layers):
            named.append((f"{prefix}.{i}.w", layer.weight))
            named.append((f"{prefix}.{i}.b", layer.bias))
        return named


def mlp_params(
    rng: np.random.Generator,
    dims: list[int],
    out_activation: str = "linear",
    zero_final: bool = True,
) -> MlpParams:
    """Fresh MLP with ELU hidden layers and Glorot-uniform weights, zero biases.

    The final layer starts at zero by default so freshly built heads emit
    exactly zero: mode logits begin uniform, action means begin centered with
    unit pre-squash noise, and value predictions begin at zero. Starting the
    critic at zero matters for training stability: a random critic surface
    hands the actor large phantom-value gradients that swamp the true reward
    signal and saturate the tanh actions before any learning happens.
    """
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        final = i == len(dims) - 2
        if final and zero_final:
            weight = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        bias = np.zeros((1, fan_out))
        layers.append(MlpLayer(weight, bias, out_activation if final else "elu"))
    return MlpParams(layers)


@dataclass
class BoundMlp:
    """An MlpParams instantiated on one tape; keeps (node, source array) pairs."""

    params: MlpParams
    nodes: list[tuple[TensorNode, TensorNode]]

    def forward(self, x: TensorNode) -> TensorNode:
        out = x
        for (w, b), layer in zip(self.nodes, self.params.layers):
            out = out.matmul(w).add_bias(b)
            if layer.activation == "elu":
                out = out.elu()
        return out

    def pairs(self) -> list[tuple[TensorNode, np.ndarray]]:
        flat = []
        for (w, b), layer in zip(self.nodes, self.params.layers):
            flat.append((w, layer.weight))
            flat.append((b, layer.bias))
        return flat


def bind_mlp(tape: Tape, params: MlpParams) -> BoundMlp:
    nodes = [
        (tape.parameter(l.weight.shape, l.weight), tape.parameter(l.bias.shape, l.bias))
        for l in params.layers
    ]
    return BoundMlp(params, nodes)


# ---- mode index encoding ---------------------------------------------------
# A mode is the tuple of per-factor class choices; its index is the mixed-
# radix encoding with factor 0 as the most significant digit, which matches
# both the row-major flattening of the one-hot block and lexicographic
# enumeration order.


def encode_mode_index(choices: np.ndarray, n_classes: int) -> np.ndarray:
    choices = np.asarray(choices)
    idx = np.zeros(choices.shape[0], dtype=np.int64)
    for i in range(choices.shape[1]):
        idx = idx * n_classes + choices[:, i]
    return idx


def decode_mode_index(index: int, n_factors: int, n_classes: int) -> np.ndarray:
    if not 0 <= index < n_classes ** n_factors:
        raise ValueError(f"mode index {index} out of range")
    digits = np.zeros(n_factors, dtype=np.int64)
    for i in range(n_factors - 1, -1, -1):
        digits[i] = index % n_classes
        index //= n_classes
    return digits


# ---- policies ---------------------------------------------------------------


@dataclass
class ActionSample:
    """Everything produced by one policy call on a batch of states."""

    action: TensorNode                       # (batch, action_dim), in (-1, 1)
    pre_tanh: TensorNode
    dist: SquashedGaussianParams
    mode: ModeSample | None = None           # None for the unimodal baseline
    mode_index: np.ndarray | None = None     # (batch,) ints in [0, n_classes ** n_factors)


@dataclass
class MultimodalPolicyParams:
    mode_net: MlpParams
    action_net: MlpParams
    n_factors: int
    n_classes: int
    state_dim: int
    action_dim: int
    hidden: int
    method: str = METHOD_STE
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)

    def __post_init__(self):
        if self.method not in (METHOD_STE, METHOD_GUMBEL):
            raise ValueError(f"multimodal method must be ste or gumbel, got {self.method!r}")
        if self.mode_net.out_dim != self.n_factors * self.n_classes:
            raise ValueError("mode net output must be n_factors * n_classes")
        if self.action_net.in_dim != self.n_factors * self.n_classes:
            raise ValueError("action net input must be n_factors * n_classes")
        if self.action_net.out_dim != 2 * self.action_dim:
            raise ValueError("action net must emit mean and log_std per action dim")

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.mode_net.arrays("policy.mode_net") + self.action_net.arrays("policy.action_net")

    def method_source(self) -> str:
        if self.method == METHOD_STE:
            return STE
        return GUMBEL_HARD if self.gumbel.hard else GUMBEL_SOFT


@dataclass
class UnimodalPolicyParams:
    net: MlpParams
    state_dim: int
    action_dim: int
    hidden: int
    method: str = METHOD_UNIMODAL

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.net.arrays("policy.net")


def _set_init_log_std(action_head: MlpParams, action_dim: int, init_log_std: float) -> None:
    """Start the action head's log-std outputs at ``init_log_std``.

    The head's final layer is zero-initialized, so its log-std columns emit
    exactly the bias. Raising it widens exploration noise at the start of
    training; tasks whose reward is locally flat around the rest state (the
    pendulum hanging straight down) need the wider early wander to put
    states with reward slope into the start-state pool at all.
    """
    if not LOG_STD_MIN <= init_log_std <= LOG_STD_MAX:
        raise ValueError(
            f"init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}], got {init_log_std}"
        )
    action_head.layers[-1].bias[0, action_dim:] = init_log_std


def make_multimodal_policy(
    rng: np.random.Generator,
    state_dim: int,
    action_dim: int,
    n_factors: int = DESK_FACTORS,
    n_classes: int = DESK_CLASSES,
    hidden: int = DESK_HIDDEN,
    method: str = METHOD_STE,
    gumbel: GumbelConfig | None = None,
    init_log_std: float = 0.0,
) -> MultimodalPolicyParams:
    block = n_factors * n_classes
    mode_net = mlp_params(rng, [state_dim, hidden, hidden, block])
    action_net = mlp_params(rng, [block, hidden, hidden, 2 * action_dim])
    _set_init_log_std(action_net, action_dim, init_log_std)
    return MultimodalPolicyParams(
        mode_net, action_net, n_factors, n_classes, state_dim, action_dim, hidden,
        method=method, gumbel=gumbel or GumbelConfig(),
    )


def make_unimodal_policy(
    rng: np.random.Generator,
    state_dim: int,
    action_dim: int,
    hidden: int = DESK_HIDDEN,
    init_log_std: float = 0.0,
) -> UnimodalPolicyParams:
    # one hidden layer deeper than either stage of the two-stage policy
    net = mlp_params(rng, [state_dim, hidden, hidden, hidden, 2 * action_dim])
    _set_init_log_std(net, action_dim, init_log_std)
    return UnimodalPolicyParams(net, state_dim, action_dim, hidden)


class MultimodalBinding:
    """A multimodal policy bound to one tape for one differentiable rollout."""

    def __init__(self, tape: Tape, pol: MultimodalPolicyParams):
        self.tape = tape
        self.pol = pol
        self.mode_net = bind_mlp(tape, pol.mode_net)
        self.action_net = bind_mlp(tape, pol.action_net)

    def pairs(self) -> list[tuple[TensorNode, np.ndarray]]:
        return self.mode_net.pairs() + self.action_net.pairs()

    def mode_logits(self, state: TensorNode) -> CategoricalParams:
        batch = state.rows
        flat = self.mode_net.forward(state)
        logits = flat.reshape(batch * self.pol.n_factors, self.pol.n_classes)
        return CategoricalParams(logits, self.pol.n_factors, self.pol.n_classes)

    def action_head(self, mode_flat: TensorNode) -> SquashedGaussianParams:
        out = self.action_net.forward(mode_flat)
        mean, log_std_raw = out.split_cols([self.pol.action_dim, self.pol.action_dim])
        return SquashedGaussianParams(mean, log_std_raw.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def act(
        self,
        state: TensorNode,
        rng: np.random.Generator | None,
        mode_rng: np.random.Generator | None = None,
        frozen_mode: np.ndarray | None = None,
        noise: np.ndarray | None = None,
    ) -> ActionSample:
        """Sample mode then action. ``mode_rng`` defaults to ``rng``;
        ``frozen_mode`` (a stacked one-hot block) skips resampling and is an
        evaluation-only diagnostic; ``noise`` overrides the Gaussian draw."""
        pol = self.pol
        batch = state.rows
        params = self.mode_logits(state)
        if frozen_mode is not None:
            z = self.tape.constant(frozen_mode)
            mode = ModeSample(z, hard=True, source_method=pol.method_source())
        elif pol.method == METHOD_STE:
            mode = ste_categorical(params, mode_rng or rng)
        else:
            mode = gumbel_softmax(params, pol.gumbel, mode_rng or rng)
        mode_flat = mode.z.reshape(batch, pol.n_factors * pol.n_classes)
        dist = self.action_head(mode_flat)
        action, pre_tanh = squashed_gaussian_sample(dist, rng, noise=noise)
        choices = mode.z.values.reshape(batch, pol.n_factors, pol.n_classes).argmax(axis=2)
        index = encode_mode_index(choices, pol.n_classes)
        return ActionSample(action, pre_tanh, dist, mode=mode, mode_index=index)


class UnimodalBinding:
    def __init__(self, tape: Tape, pol: UnimodalPolicyParams):
        self.tape = tape
        self.pol = pol
        self.net = bind_mlp(tape, pol.net)

    def pairs(self) -> list[tuple[TensorNode, np.ndarray]]:
        return self.net.pairs()

    def act(
        self,
        state: TensorNode,
        rng: np.random.Generator | None,
        mode_rng: np.random.Generator | None = None,
        noise: np.ndarray | None = None,
    ) -> ActionSample:
        out = self.net.forward(state)
        mean, log_std_raw = out.split_cols([self.pol.action_dim, self.pol.action_dim])
        dist = SquashedGaussianParams(mean, log_std_raw.clamp(LOG_STD_MIN, LOG_STD_MAX))
        action, pre_tanh = squashed_gaussian_sample(dist, rng, noise=noise)
        return ActionSample(action, pre_tanh, dist)


PolicyParams = MultimodalPolicyParams | UnimodalPolicyParams


def bind_policy(tape: Tape, pol: PolicyParams):
    if isinstance(pol, MultimodalPolicyParams):
        return MultimodalBinding(tape, pol)
    return UnimodalBinding(tape, pol)


def mode_logits(pol: MultimodalPolicyParams, state: np.ndarray, tape: Tape) -> CategoricalParams:
    """Convenience wrapper: bind on ``tape`` and map raw states to logits."""
    state_node = tape.constant(np.atleast_2d(state))
    return MultimodalBinding(tape, pol).mode_logits(state_node)


def act(pol: PolicyParams, state: np.ndarray, rng: np.random.Generator, tape: Tape) -> ActionSample:
    """One stochastic policy call on raw states, recorded on ``tape``."""
    state_node = tape.constant(np.atleast_2d(state))
    return bind_policy(tape, pol).act(state_node, rng)


def act_unimodal(pol: UnimodalPolicyParams, state: np.ndarray, rng: np.random.Generator, tape: Tape) -> ActionSample:
    return act(pol, state, rng, tape)


def act_deterministic(pol: PolicyParams, state: np.ndarray) -> ActionSample:
    """Greedy action: argmax mode (ties to the lowest index) and tanh(mean).

    Runs on a scratch tape; the caller only needs the values.
    """
    tape = Tape()
    states = np.atleast_2d(np.asarray(state, dtype=np.float64))
    state_node = tape.constant(states)
    binding = bind_policy(tape, pol)
    zero_noise = np.zeros((states.shape[0], pol.action_dim))
    if isinstance(pol, UnimodalPolicyParams):
        return binding.act(state_node, None, noise=zero_noise)
    params = binding.mode_logits(state_node)
    probs = params.logits.softmax_rows()
    onehot = np.zeros_like(probs.values)
    onehot[np.arange(onehot.shape[0]), probs.values.argmax(axis=1)] = 1.0
    return binding.act(state_node, None, frozen_mode=onehot, noise=zero_noise)


def mode_usage_histogram(pol: MultimodalPolicyParams, states: np.ndarray) -> tuple[Counter, int]:
    """Counts of deterministic mode choices over ``states``.

    Returns ``(counter keyed by mode index, number of distinct modes)``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("need at least one state")
    sample = act_deterministic(pol, states)
    counts = Counter(int(i) for i in sample.mode_index)
    return counts, len(counts)
