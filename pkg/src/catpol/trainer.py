"""Pathwise actor-critic training through differentiable rollouts.

Each update records a fresh tape: H environment steps from a batch of start
states, with the policy sampled stochastically and the critic evaluated at
every visited state. Lambda-returns blend the observed rewards with critic
bootstraps. The critic regresses onto stop-gradient targets; the actor
maximizes the summed lambda-returns directly through the differentiable
dynamics, the reparameterized action noise, and the discrete-mode gradient
relaxation. Gradients flow into critic weights inside the actor loss, but
only the actor update's own parameter set is stepped.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .distributions import LOG_STD_MAX, LOG_STD_MIN, GumbelConfig
from .envs import EnvState, make_env
from .gradcore import Tape, TensorNode
from .policy import (
    METHOD_GUMBEL,
    METHOD_STE,
    METHOD_UNIMODAL,
    ActionSample,
    MlpParams,
    MultimodalPolicyParams,
    PolicyParams,
    act_deterministic,
    bind_mlp,
    bind_policy,
    make_multimodal_policy,
    make_unimodal_policy,
    mlp_params,
)
from .seeding import named_rng, rng_state_bytes

METHODS = (METHOD_STE, METHOD_GUMBEL, METHOD_UNIMODAL)


class TrainingError(RuntimeError):
    """Raised when training hits non-finite numbers; message names the step."""


@dataclass
class TrainConfig:
    env: str = "two_goal"
    method: str = METHOD_STE
    n_factors: int = 4
    n_classes: int = 4
    hidden: int = 64
    temperature: float = 2.0
    init_log_std: float = 0.0
    gamma: float = 0.99
    lam: float = 0.95
    horizon: int = 16
    batch: int = 32
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    updates: int = 3000
    eval_every: int = 200
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not LOG_STD_MIN <= self.init_log_std <= LOG_STD_MAX:
            raise ValueError(
                f"init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}], got {self.init_log_std}"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.horizon < 1 or self.batch < 1:
            raise ValueError("horizon and batch must be positive")
        if self.updates < 0:
            raise ValueError("updates must be non-negative")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("eval_every and eval_episodes must be positive")


# ---- lambda returns ---------------------------------------------------------


def lambda_returns(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Backward lambda-return recursion on plain arrays.

    ``rewards`` has H entries, ``values`` H+1 (the last is the bootstrap).
    Entry t satisfies
    ``R(t) = r_t + gamma * ((1 - lam) * v_{t+1} + lam * R(t+1))`` with
    ``R(H) = v_H``. lam = 0 gives one-step targets, lam = 1 the full
    discounted sum bootstrapped at the horizon.
    """
    rewards = [np.asarray(r, dtype=np.float64) for r in rewards]
    values = [np.asarray(v, dtype=np.float64) for v in values]
    if len(values) != len(rewards) + 1:
        raise ValueError("need one more value than rewards")
    out = [None] * len(rewards)
    tail = values[-1]
    for t in range(len(rewards) - 1, -1, -1):
        tail = rewards[t] + gamma * ((1.0 - lam) * values[t + 1] + lam * tail)
        out[t] = tail
    return np.stack(out)


def _lambda_return_nodes(rewards, values, gamma: float, lam: float) -> list[TensorNode]:
    """Same recursion, built as graph nodes for the losses."""
    out = [None] * len(rewards)
    tail = values[-1]
    for t in range(len(rewards) - 1, -1, -1):
        tail = rewards[t] + (values[t + 1] * (gamma * (1.0 - lam)) + tail * (gamma * lam))
        out[t] = tail
    return out


# ---- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments for a fixed tuple of parameter arrays, updated in place."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    def apply(self, arrays, grads, lr: float, clip_norm: float = 100.0) -> None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        scale = clip_norm / total if total > clip_norm else 1.0
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        for arr, grad, m, v in zip(arrays, grads, self.m, self.v):
            g = grad * scale
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            arr -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def make_value_net(rng: np.random.Generator, state_dim: int, hidden: int) -> MlpParams:
    return mlp_params(rng, [state_dim, hidden, hidden, 1])


def value_net_arrays(value_net: MlpParams) -> list[tuple[str, np.ndarray]]:
    return value_net.arrays("value.net")


# ---- rollouts and updates -----------------------------------------------------


@dataclass
class RolloutBatch:
    """One recorded differentiable rollout plus its parameter bindings."""

    tape: Tape
    states: list[TensorNode]          # H + 1 nodes, (batch, state_dim)
    actions: list[ActionSample]       # H samples
    rewards: list[TensorNode]         # H nodes, (batch, 1)
    values: list[TensorNode]          # H + 1 nodes, (batch, 1)
    returns: list[TensorNode]         # H lambda-return nodes, (batch, 1)
    policy_binding: object
    value_binding: object


def rollout(
    policy: PolicyParams,
    value_net: MlpParams,
    env,
    starts: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    tape: Tape,
    mode_rng: np.random.Generator | None = None,
) -> RolloutBatch:
    """Record H steps from ``starts`` (one row per rollout) on ``tape``."""
    binding = bind_policy(tape, policy)
    vbind = bind_mlp(tape, value_net)
    state = tape.constant(np.atleast_2d(starts))
    states, actions, rewards, values = [state], [], [], []
    for t in range(cfg.horizon):
        values.append(vbind.forward(state))
        sample = binding.act(state, rng, mode_rng)
        state, reward = env.step_diff(state, sample.action)
        if not np.isfinite(state.values).all() or not np.isfinite(reward.values).all():
            raise TrainingError(f"non-finite state or reward at rollout step {t}")
        states.append(state)
        actions.append(sample)
        rewards.append(reward)
    values.append(vbind.forward(state))
    returns = _lambda_return_nodes(rewards, values, cfg.gamma, cfg.lam)
    return RolloutBatch(tape, states, actions, rewards, values, returns, binding, vbind)


def actor_update(policy: PolicyParams, value_net: MlpParams, batch: RolloutBatch, cfg: TrainConfig, adam: AdamState) -> float:
    """Step the policy on the negated mean summed lambda-return."""
    total = batch.returns[0]
    for node in batch.returns[1:]:
        total = total + node
    loss = total.mean() * -1.0
    if not np.isfinite(loss.values).all():
        raise TrainingError("non-finite actor loss")
    tape = batch.tape
    tape.zero_grads()
    tape.backward(loss)
    pairs = batch.policy_binding.pairs()
    adam.apply([arr for _, arr in pairs], [node.grad for node, _ in pairs], cfg.actor_lr)
    return loss.item()


def critic_update(value_net: MlpParams, batch: RolloutBatch, cfg: TrainConfig, adam: AdamState) -> float:
    """Step the critic toward stop-gradient lambda-return targets."""
    acc = None
    for v, ret in zip(batch.values[:-1], batch.returns):
        sq = (v - ret.stop_gradient()).square()
        acc = sq if acc is None else acc + sq
    loss = acc.mean() * (0.5 / cfg.horizon)
    if not np.isfinite(loss.values).all():
        raise TrainingError("non-finite critic loss")
    tape = batch.tape
    tape.zero_grads()
    tape.backward(loss)
    pairs = batch.value_binding.pairs()
    adam.apply([arr for _, arr in pairs], [node.grad for node, _ in pairs], cfg.critic_lr)
    return loss.item()


# ---- evaluation ----------------------------------------------------------------


@dataclass
class EvalReport:
    return_mean: float
    return_std: float
    returns: list[float]
    mode_counts: Counter | None
    distinct_modes: int


def evaluate(
    policy: PolicyParams,
    env,
    episodes: int,
    rng: np.random.Generator,
    stochastic: bool = False,
    reset_states: list[np.ndarray] | None = None,
) -> EvalReport:
    """Run full episodes with step_eval; deterministic policy by default.

    Mode statistics aggregate the per-step mode choices (multimodal only).
    ``reset_states`` overrides the start states for repeatability tests.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    multimodal = isinstance(policy, MultimodalPolicyParams)
    counts: Counter | None = Counter() if multimodal else None
    returns = []
    for ep in range(episodes):
        if reset_states is not None:
            state = EnvState(np.asarray(reset_states[ep % len(reset_states)], dtype=np.float64).copy())
        else:
            state = env.reset(rng)
        total = 0.0
        for _ in range(env.spec.episode_horizon):
            if stochastic:
                tape = Tape()
                sample = bind_policy(tape, policy).act(tape.constant(state.vector.reshape(1, -1)), rng)
            else:
                sample = act_deterministic(policy, state.vector)
            if multimodal:
                counts[int(sample.mode_index[0])] += 1
            state, reward = env.step_eval(state, sample.action.values[0])
            total += reward
        returns.append(total)
    arr = np.asarray(returns)
    return EvalReport(
        return_mean=float(arr.mean()),
        return_std=float(arr.std()),
        returns=returns,
        mode_counts=counts,
        distinct_modes=len(counts) if counts is not None else 0,
    )


def goal_fractions(
    policy: PolicyParams,
    env,
    rollouts: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Fractions of stochastic episodes ending within 0.3 of each two_goal goal."""
    if env.spec.name != "two_goal":
        raise ValueError("goal fractions are defined for two_goal only")
    hits = [0, 0]
    for _ in range(rollouts):
        state = env.reset(rng)
        for _ in range(env.spec.episode_horizon):
            tape = Tape()
            sample = bind_policy(tape, policy).act(tape.constant(state.vector.reshape(1, -1)), rng)
            state, _ = env.step_eval(state, sample.action.values[0])
        pos = state.vector[:2]
        for i, goal in enumerate(env.GOALS):
            if np.linalg.norm(pos - goal) < 0.3:
                hits[i] += 1
    return hits[0] / rollouts, hits[1] / rollouts


# ---- training loop ---------------------------------------------------------------


@dataclass
class MetricsRow:
    update_step: int
    env_steps: int
    eval_return_mean: float
    eval_return_std: float
    actor_loss: float
    critic_loss: float
    distinct_modes_used: int
    wall_ms: float


@dataclass
class TrainingRecord:
    config: TrainConfig
    rows: list[MetricsRow]
    policy: PolicyParams
    value_net: MlpParams
    eval_rng_state: bytes

    @property
    def final_return(self) -> float:
        return self.rows[-1].eval_return_mean


POOL_CAPACITY = 4096


class StatePool:
    """Uniform reservoir of visited states used to seed rollout starts.

    Keeps an (approximately) uniform sample over every state seen so far,
    not just the most recent batch. That breadth matters: regions the policy
    explored early stay in the start distribution, so the critic keeps
    receiving data from them even after the policy has specialized elsewhere.
    """

    def __init__(self, capacity: int, state_dim: int) -> None:
        self.capacity = capacity
        self.states = np.empty((capacity, state_dim))
        self.size = 0
        self.seen = 0

    def add(self, batch: np.ndarray, rng: np.random.Generator) -> None:
        for row in batch:
            self.seen += 1
            if self.size < self.capacity:
                self.states[self.size] = row
                self.size += 1
            else:
                slot = rng.integers(0, self.seen)
                if slot < self.capacity:
                    self.states[slot] = row

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        picks = rng.integers(0, self.size, size=count)
        return self.states[picks]


def make_policy(cfg: TrainConfig, state_dim: int, action_dim: int, rng: np.random.Generator) -> PolicyParams:
    if cfg.method == METHOD_UNIMODAL:
        return make_unimodal_policy(
            rng, state_dim, action_dim, hidden=cfg.hidden, init_log_std=cfg.init_log_std,
        )
    return make_multimodal_policy(
        rng, state_dim, action_dim,
        n_factors=cfg.n_factors, n_classes=cfg.n_classes, hidden=cfg.hidden,
        method=cfg.method, gumbel=GumbelConfig(temperature=cfg.temperature, hard=True),
        init_log_std=cfg.init_log_std,
    )


def train(cfg: TrainConfig) -> TrainingRecord:
    """Full training run; deterministic for a fixed config.

    Start states mix fresh resets with states retained from previous
    rollouts, half and half; retained states come from a uniform reservoir
    over the whole run. Each update does one critic step, then one actor
    step, on the same recorded rollout. Evaluation happens before the first
    update, every ``eval_every`` updates, and after the last one.
    """
    env = make_env(cfg.env)
    init_rng = named_rng(cfg.seed, "init")
    env_rng = named_rng(cfg.seed, "env")
    policy_rng = named_rng(cfg.seed, "policy")
    gumbel_rng = named_rng(cfg.seed, "gumbel")
    eval_rng = named_rng(cfg.seed, "eval")

    policy = make_policy(cfg, env.spec.state_dim, env.spec.action_dim, init_rng)
    value_net = make_value_net(init_rng, env.spec.state_dim, cfg.hidden)
    adam_actor = AdamState.for_arrays([arr for _, arr in policy.arrays()])
    adam_critic = AdamState.for_arrays([arr for _, arr in value_net_arrays(value_net)])

    started = time.perf_counter()
    rows: list[MetricsRow] = []
    # State of the eval stream just before the most recent evaluation. Stored
    # in the checkpoint so a post-load evaluation with the same episode count
    # replays the final recorded evaluation draw for draw.
    eval_state = rng_state_bytes(eval_rng)

    def record(update: int, actor_loss: float, critic_loss: float) -> None:
        nonlocal eval_state
        eval_state = rng_state_bytes(eval_rng)
        report = evaluate(policy, env, cfg.eval_episodes, eval_rng)
        rows.append(MetricsRow(
            update_step=update,
            env_steps=update * cfg.batch * cfg.horizon,
            eval_return_mean=report.return_mean,
            eval_return_std=report.return_std,
            actor_loss=actor_loss,
            critic_loss=critic_loss,
            distinct_modes_used=report.distinct_modes,
            wall_ms=(time.perf_counter() - started) * 1e3,
        ))

    record(0, 0.0, 0.0)
    pool = StatePool(POOL_CAPACITY, env.spec.state_dim)
    actor_loss = critic_loss = 0.0
    for update in range(1, cfg.updates + 1):
        if pool.size == 0:
            starts = np.stack([env.reset(env_rng).vector for _ in range(cfg.batch)])
        else:
            fresh = cfg.batch // 2
            starts = np.concatenate([
                np.stack([env.reset(env_rng).vector for _ in range(fresh)]),
                pool.sample(cfg.batch - fresh, env_rng),
            ])
        tape = Tape()
        batch = rollout(policy, value_net, env, starts, cfg, policy_rng, tape, mode_rng=gumbel_rng)
        critic_loss = critic_update(value_net, batch, cfg, adam_critic)
        actor_loss = actor_update(policy, value_net, batch, cfg, adam_actor)
        pool.add(np.concatenate([s.values for s in batch.states[1:]]), env_rng)
        if update % cfg.eval_every == 0 or update == cfg.updates:
            record(update, actor_loss, critic_loss)

    return TrainingRecord(cfg, rows, policy, value_net, eval_state)
