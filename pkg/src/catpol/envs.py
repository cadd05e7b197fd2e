"""Differentiable toy control environments.

Each environment exposes the same small surface: ``reset`` draws a start
state, ``step_diff`` records one semi-implicit Euler transition on a tape
(batched, one row per rollout), and ``step_eval`` runs the identical math on
a scratch tape and returns plain numbers. ``step_eval`` literally calls
``step_diff``, so the two can never drift apart.

Dynamics are deterministic; the only stochasticity is reset noise. Rewards
live in [0, 1] per step and are smooth in state and action, which is what
makes pathwise gradients through the transition useful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import Tape, TensorNode, concat_cols

__all__ = [
    "EnvSpec",
    "EnvState",
    "TwoGoalEnv",
    "PendulumEnv",
    "SmoothReacherEnv",
    "make_env",
    "ENV_NAMES",
]


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    dt: float
    episode_horizon: int
    reward_range: tuple[float, float] = (0.0, 1.0)


@dataclass
class EnvState:
    vector: np.ndarray
    step_count: int = 0


_RESET_NOISE = 0.05


def _check_finite(name: str, values: np.ndarray) -> None:
    if not np.isfinite(values).all():
        raise ValueError(f"{name} contains NaN or Inf")


class _EnvBase:
    spec: EnvSpec

    def reset(self, rng: np.random.Generator) -> EnvState:
        raise NotImplementedError

    def step_diff(self, state: TensorNode, action: TensorNode) -> tuple[TensorNode, TensorNode]:
        """One batched transition on the state's tape -> (next_state, reward)."""
        if state.cols != self.spec.state_dim:
            raise ValueError(f"state must have {self.spec.state_dim} columns, got {state.cols}")
        if action.cols != self.spec.action_dim:
            raise ValueError(f"action must have {self.spec.action_dim} columns, got {action.cols}")
        if action.rows != state.rows:
            raise ValueError("state and action batch sizes differ")
        _check_finite("state", state.values)
        _check_finite("action", action.values)
        return self._step(state, action)

    def step_eval(
        self,
        state: EnvState,
        action: np.ndarray,
        rng: np.random.Generator | None = None,
    ) -> tuple[EnvState, float]:
        """Plain-number step; forward values are exactly step_diff's."""
        tape = Tape()
        s = tape.constant(state.vector.reshape(1, self.spec.state_dim))
        a = tape.constant(np.asarray(action, dtype=np.float64).reshape(1, self.spec.action_dim))
        nxt, reward = self.step_diff(s, a)
        return EnvState(nxt.values[0].copy(), state.step_count + 1), float(reward.values[0, 0])

    def _step(self, state, action):
        raise NotImplementedError


class TwoGoalEnv(_EnvBase):
    """Damped point mass on the plane with two equally rewarded goals.

    State (px, py, vx, vy); acceleration control. Per step:
    ``v' = 0.9 v + dt * a * a_max`` and ``p' = p + dt * v'``. Reward is the
    mean of two Gaussian bumps centered at (1, 0) and (-1, 0):
    ``0.5 * (exp(-8 |p' - g1|^2) + exp(-8 |p' - g2|^2))``, symmetric under
    px -> -px, so neither goal is preferable.
    """

    A_MAX = 2.0
    VEL_DECAY = 0.9
    GOALS = (np.array([1.0, 0.0]), np.array([-1.0, 0.0]))

    def __init__(self):
        self.spec = EnvSpec("two_goal", 4, 2, dt=0.1, episode_horizon=60)

    def reset(self, rng: np.random.Generator) -> EnvState:
        vec = np.zeros(4)
        vec[:2] = rng.uniform(-_RESET_NOISE, _RESET_NOISE, size=2)
        return EnvState(vec)

    def _step(self, state, action):
        tape = state.tape
        pos, vel = state.split_cols([2, 2])
        vel_next = vel * self.VEL_DECAY + action * (self.spec.dt * self.A_MAX)
        pos_next = pos + vel_next * self.spec.dt
        bumps = []
        for goal in self.GOALS:
            offset = pos_next.add_bias(tape.constant(-goal))
            dist2 = offset.square().sum_rows()
            bumps.append((dist2 * -8.0).exp())
        reward = (bumps[0] + bumps[1]) * 0.5
        return concat_cols([pos_next, vel_next]), reward


class PendulumEnv(_EnvBase):
    """Torque-limited pendulum swing-up.

    State (cos th, sin th, th_dot) with th = 0 upright. Angular acceleration
    ``(g/l) sin th + (tau_max / (m l^2)) a - damping * th_dot``; gravity
    pushes away from upright, and tau_max = 2 < m g l, so the pendulum must
    pump energy across several swings instead of rotating straight up. The
    velocity is kept in [-8, 8] by the smooth clamp ``8 tanh(th_dot / 8)``,
    and the angle advances by rotating (cos, sin) through dt * th_dot',
    which preserves cos^2 + sin^2 exactly up to float rounding. Reward
    ``(1 + cos th') / 2`` is 1 upright and 0 hanging down.
    """

    GRAVITY = 9.8
    LENGTH = 1.0
    MASS = 1.0
    TORQUE_MAX = 2.0
    VEL_LIMIT = 8.0

    def __init__(self, damping: float = 0.05):
        self.spec = EnvSpec("pendulum", 3, 1, dt=0.05, episode_horizon=200)
        self.damping = damping

    def reset(self, rng: np.random.Generator) -> EnvState:
        theta = np.pi + rng.uniform(-_RESET_NOISE, _RESET_NOISE)
        return EnvState(np.array([np.cos(theta), np.sin(theta), 0.0]))

    def _step(self, state, action):
        dt = self.spec.dt
        cos_th, sin_th, vel = state.split_cols([1, 1, 1])
        accel = (
            sin_th * (self.GRAVITY / self.LENGTH)
            + action * (self.TORQUE_MAX / (self.MASS * self.LENGTH ** 2))
            + vel * -self.damping
        )
        vel_raw = vel + accel * dt
        vel_next = (vel_raw * (1.0 / self.VEL_LIMIT)).tanh() * self.VEL_LIMIT
        delta = vel_next * dt
        cos_d, sin_d = delta.cos(), delta.sin()
        cos_next = cos_th * cos_d - sin_th * sin_d
        sin_next = sin_th * cos_d + cos_th * sin_d
        reward = (cos_next + 1.0) * 0.5
        return concat_cols([cos_next, sin_next, vel_next]), reward


class SmoothReacherEnv(_EnvBase):
    """Velocity-controlled two-link arm reaching a fixed target.

    State (cos th1, sin th1, cos th2, sin th2, th1_dot, th2_dot, tx, ty).
    Actions set joint velocities directly: ``th_i_dot' = 2 a_i`` and
    ``th_i' = th_i + dt * th_i_dot'``. Both links have length 0.5; the second
    angle is relative to the first link. Reward
    ``exp(-|tip - target|^2 / 0.01)`` peaks sharply at the target, which sits
    inside the reachable disk and never moves within an episode.
    """

    LINK = 0.5
    VEL_GAIN = 2.0
    TARGET_RADIUS = (0.2, 1.0)

    def __init__(self):
        self.spec = EnvSpec("smooth_reacher", 8, 2, dt=0.05, episode_horizon=100)

    def reset(self, rng: np.random.Generator) -> EnvState:
        th1, th2 = rng.uniform(-_RESET_NOISE, _RESET_NOISE, size=2)
        lo, hi = self.TARGET_RADIUS
        radius = np.sqrt(rng.uniform(lo ** 2, hi ** 2))  # area-uniform over the annulus
        angle = rng.uniform(0.0, 2.0 * np.pi)
        return EnvState(np.array([
            np.cos(th1), np.sin(th1), np.cos(th2), np.sin(th2),
            0.0, 0.0, radius * np.cos(angle), radius * np.sin(angle),
        ]))

    def _step(self, state, action):
        dt = self.spec.dt
        c1, s1, c2, s2, _, _, tx, ty = state.split_cols([1] * 8)
        a1, a2 = action.split_cols([1, 1])
        v1 = a1 * self.VEL_GAIN
        v2 = a2 * self.VEL_GAIN

        def rotate(c, s, vel):
            delta = vel * dt
            cd, sd = delta.cos(), delta.sin()
            return c * cd - s * sd, s * cd + c * sd

        c1n, s1n = rotate(c1, s1, v1)
        c2n, s2n = rotate(c2, s2, v2)
        # second joint angle is relative, so the forearm direction is th1 + th2
        c12 = c1n * c2n - s1n * s2n
        s12 = s1n * c2n + c1n * s2n
        tip_x = (c1n + c12) * self.LINK
        tip_y = (s1n + s12) * self.LINK
        dist2 = (tip_x - tx).square() + (tip_y - ty).square()
        reward = (dist2 * (-1.0 / 0.01)).exp()
        return concat_cols([c1n, s1n, c2n, s2n, v1, v2, tx, ty]), reward


_REGISTRY = {
    "two_goal": TwoGoalEnv,
    "pendulum": PendulumEnv,
    "smooth_reacher": SmoothReacherEnv,
}

ENV_NAMES = tuple(sorted(_REGISTRY))


def make_env(name: str) -> _EnvBase:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {ENV_NAMES}") from None
