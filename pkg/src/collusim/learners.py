"""Tabular learners for the platform and the sellers.

All learners share one contract: ``select(s, t, rng)`` picks an action in
state ``s`` at round ``t`` and ``update(s, a, r, s_next, t, rng)`` consumes
the realized reward.  Tables are plain nested lists; they are small and the
per-element access pattern is faster than numpy here.  The compiled kernel
re-implements the same arithmetic and must draw from ``rng`` in the same
order, so keep the two in sync.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputDomainError, NumericInputError

ALGORITHMS = (
    "qlearning",
    "sarsa",
    "gradient_bandit",
    "ucb",
    "thompson",
    "actor_critic",
    "reinforce",
    "exp3",
)
STATEFUL = {"qlearning", "sarsa", "actor_critic", "reinforce", "exp3"}
EXP3_RESCALE = 1e150


@dataclass(frozen=True)
class StateCodec:
    bins_m: int = 4
    bins_b: int = 4
    history_window: int = 100
    max_manip: float = 3.0
    max_bid: float = 2.0

    def __post_init__(self):
        if self.bins_m < 1 or self.bins_b < 1:
            raise ConfigurationError("state codec needs at least one bin per axis")
        if self.history_window < 1:
            raise ConfigurationError("history_window must be positive")

    @property
    def n_states(self) -> int:
        return self.bins_m * self.bins_b

    @property
    def manip_bins(self) -> tuple:
        return tuple(self.max_manip * k / self.bins_m for k in range(self.bins_m))

    @property
    def bid_bins(self) -> tuple:
        return tuple(self.max_bid * k / self.bins_b for k in range(self.bins_b))


def _bin(x: float, lower_edges: Sequence[float]) -> int:
    # half-open bins; the last bin is closed and absorbs anything above it
    k = 0
    for j in range(1, len(lower_edges)):
        if x >= lower_edges[j]:
            k = j
    return k


def state_index(recent_manip_mean: float, recent_bid_mean: float, codec: StateCodec = StateCodec()) -> int:
    if recent_manip_mean < 0 or recent_bid_mean < 0:
        raise InputDomainError("recent means must be non-negative")
    return _bin(recent_manip_mean, codec.manip_bins) * codec.bins_b + _bin(recent_bid_mean, codec.bid_bins)


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = "qlearning"
    alpha: float = 0.12
    gamma: float = 0.90
    eps0: float = 0.25
    eps_decay: float = 0.9995
    eps_min: float = 0.02
    ucb_c: float = 2.0
    ac_alpha_v: float = 0.15
    ac_alpha_theta: float = 0.10
    ac_tau: float = 1.0
    reinforce_alpha: float = 0.05
    reinforce_episode: int = 100
    exp3_gamma: float = 0.1
    q_init_range: float = 0.01

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        for name in ("alpha", "gamma", "eps0", "eps_decay", "ac_alpha_v", "ac_alpha_theta",
                     "reinforce_alpha", "exp3_gamma"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.eps_min <= self.eps0:
            raise ConfigurationError("need 0 <= eps_min <= eps0")
        if self.reinforce_episode < 1:
            raise ConfigurationError("reinforce_episode must be positive")
        if self.ac_tau <= 0 or self.ucb_c < 0 or self.q_init_range < 0:
            raise ConfigurationError("ac_tau must be positive; ucb_c and q_init_range non-negative")


def epsilon_at(t: int, config: LearnerConfig = LearnerConfig()) -> float:
    return max(config.eps_min, config.eps0 * config.eps_decay ** t)


def argmax(row: Sequence[float]) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    best = 0
    top = row[0]
    for a in range(1, len(row)):
        if row[a] > top:
            top = row[a]
            best = a
    return best


def seq_sum(values: Sequence[float]) -> float:
    """Left-to-right float sum (``sum`` is compensated on newer Pythons)."""
    total = 0.0
    for x in values:
        total += x
    return total


def uniform_index(u: float, n: int) -> int:
    a = int(u * n)
    return a if a < n else n - 1


def sample_weights(weights: Sequence[float], total: float, u: float) -> int:
    """Inverse-CDF draw from unnormalized non-negative ``weights``."""
    target = u * total
    cum = 0.0
    last = 0
    for a, x in enumerate(weights):
        if x > 0.0:
            last = a
            cum += x
            if cum > target:
                return a
    return last


def softmax_weights(row: Sequence[float], scale: float = 1.0) -> tuple[list, float]:
    top = max(row)
    z = [math.exp((x - top) / scale) for x in row]
    return z, seq_sum(z)


def select_eps_greedy(row: Sequence[float], eps: float, rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return uniform_index(rng.random(), len(row))
    return argmax(row)


def _check_reward(r: float) -> None:
    if not math.isfinite(r):
        raise NumericInputError(f"reward must be finite, got {r}")


def qlearning_update(Q, s: int, a: int, r: float, s_next: int, config: LearnerConfig = LearnerConfig()):
    _check_reward(r)
    Q[s][a] += config.alpha * (r + config.gamma * max(Q[s_next]) - Q[s][a])
    return Q


def sarsa_update(Q, s: int, a: int, r: float, s_next: int, a_next: int,
                 config: LearnerConfig = LearnerConfig()):
    _check_reward(r)
    Q[s][a] += config.alpha * (r + config.gamma * Q[s_next][a_next] - Q[s][a])
    return Q


def gradient_bandit_update(H: list, r_bar: float, n_seen: int, a_taken: int, r: float,
                           config: LearnerConfig = LearnerConfig()) -> tuple[list, float]:
    """Preference step against the pre-update baseline, then fold ``r`` into the mean.

    ``n_seen`` is the number of rewards already averaged into ``r_bar``.
    """
    z, total = softmax_weights(H)
    step = config.alpha * (r - r_bar)
    for a in range(len(H)):
        H[a] -= step * (z[a] / total)
    H[a_taken] += step
    return H, r_bar + (r - r_bar) / (n_seen + 1)


def ucb_select(N: Sequence[int], mu: Sequence[float], t: int, c: float = 2.0) -> int:
    if t < 1:
        raise InputDomainError("ucb_select needs t >= 1")
    for a, n in enumerate(N):
        if n == 0:
            return a
    log_t = math.log(t)
    scores = [mu[a] + c * math.sqrt(log_t / N[a]) for a in range(len(N))]
    return argmax(scores)


def thompson_update(a0: list, b0: list, a_taken: int, r: float) -> tuple[list, list]:
    p = min(1.0, max(0.0, (r + 1.0) / 2.0))
    a0[a_taken] += p
    b0[a_taken] += 1.0 - p
    return a0, b0


def thompson_select(a0: Sequence[float], b0: Sequence[float], rng: np.random.Generator) -> int:
    return argmax([rng.beta(a0[a], b0[a]) for a in range(len(a0))])


def actor_critic_update(theta, V, s: int, a: int, r: float, s_next: int,
                        config: LearnerConfig = LearnerConfig()):
    delta = r + config.gamma * V[s_next] - V[s]
    V[s] += config.ac_alpha_v * delta
    theta[s][a] += config.ac_alpha_theta * delta
    return theta, V


def discounted_returns(rewards: Sequence[float], gamma: float) -> list:
    out = [0.0] * len(rewards)
    g = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        g = rewards[k] + gamma * g
        out[k] = g
    return out


def reinforce_episode_update(theta, episode: list, config: LearnerConfig = LearnerConfig()):
    if not episode:
        return theta
    returns = discounted_returns([step[2] for step in episode], config.gamma)
    for (s, a, _), g in zip(episode, returns):
        theta[s][a] += config.reinforce_alpha * g
    episode.clear()
    return theta


def exp3_policy(w_row: Sequence[float], gamma_e: float) -> list:
    total = seq_sum(w_row)
    k = len(w_row)
    return [(1.0 - gamma_e) * x / total + gamma_e / k for x in w_row]


def exp3_update(w, s: int, a_taken: int, r: float, config: LearnerConfig = LearnerConfig()):
    row = w[s]
    k = len(row)
    pi = exp3_policy(row, config.exp3_gamma)[a_taken]
    r_norm = min(1.0, max(0.0, (r + 1.0) / 3.0))
    row[a_taken] *= math.exp(config.exp3_gamma * (r_norm / pi) / k)
    if row[a_taken] > EXP3_RESCALE:
        top = row[a_taken]
        for j in range(k):
            row[j] /= top
    return w


# -- learner objects ---------------------------------------------------------


@dataclass
class Learner:
    n_states: int
    n_actions: int
    config: LearnerConfig
    tables: dict = field(default_factory=dict)

    def select(self, s: int, t: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def update(self, s: int, a: int, r: float, s_next: int, t: int, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def finish(self) -> None:
        pass

    def policy(self, s: int) -> list:
        """Current action distribution in state ``s`` (for invariant checks)."""
        raise NotImplementedError

    def snapshot(self) -> np.ndarray:
        raise NotImplementedError


class QLearner(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        lo = config.q_init_range
        if rng is None:
            self.Q = [[0.0] * n_actions for _ in range(n_states)]
        else:
            self.Q = [[-lo + 2.0 * lo * rng.random() for _ in range(n_actions)] for _ in range(n_states)]
        self.pending = -1

    def select(self, s, t, rng):
        if self.pending >= 0:
            a, self.pending = self.pending, -1
            return a
        return select_eps_greedy(self.Q[s], epsilon_at(t, self.config), rng)

    def update(self, s, a, r, s_next, t, rng):
        qlearning_update(self.Q, s, a, r, s_next, self.config)

    def policy(self, s):
        eps = self.config.eps_min
        k = self.n_actions
        pi = [eps / k] * k
        pi[argmax(self.Q[s])] += 1.0 - eps
        return pi

    def snapshot(self):
        return np.array(self.Q).ravel()


class SarsaLearner(QLearner):
    def update(self, s, a, r, s_next, t, rng):
        a_next = select_eps_greedy(self.Q[s_next], epsilon_at(t + 1, self.config), rng)
        sarsa_update(self.Q, s, a, r, s_next, a_next, self.config)
        self.pending = a_next


class GradientBandit(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.H = [0.0] * n_actions
        self.r_bar = 0.0
        self.n_seen = 0

    def select(self, s, t, rng):
        z, total = softmax_weights(self.H)
        return sample_weights(z, total, rng.random())

    def update(self, s, a, r, s_next, t, rng):
        self.H, self.r_bar = gradient_bandit_update(self.H, self.r_bar, self.n_seen, a, r, self.config)
        self.n_seen += 1

    def policy(self, s):
        z, total = softmax_weights(self.H)
        return [x / total for x in z]

    def snapshot(self):
        return np.array(self.H)


class UCBLearner(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.N = [0] * n_actions
        self.mu = [0.0] * n_actions

    def select(self, s, t, rng):
        return ucb_select(self.N, self.mu, t + 1, self.config.ucb_c)

    def update(self, s, a, r, s_next, t, rng):
        self.N[a] += 1
        self.mu[a] += (r - self.mu[a]) / self.N[a]

    def snapshot(self):
        return np.array(self.mu)


class ThompsonLearner(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.a0 = [1.0] * n_actions
        self.b0 = [1.0] * n_actions

    def select(self, s, t, rng):
        return thompson_select(self.a0, self.b0, rng)

    def update(self, s, a, r, s_next, t, rng):
        thompson_update(self.a0, self.b0, a, r)

    def snapshot(self):
        return np.array([x / (x + y) for x, y in zip(self.a0, self.b0)])


class ActorCritic(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.theta = [[0.0] * n_actions for _ in range(n_states)]
        self.V = [0.0] * n_states

    def select(self, s, t, rng):
        z, total = softmax_weights(self.theta[s], self.config.ac_tau)
        return sample_weights(z, total, rng.random())

    def update(self, s, a, r, s_next, t, rng):
        actor_critic_update(self.theta, self.V, s, a, r, s_next, self.config)

    def policy(self, s):
        z, total = softmax_weights(self.theta[s], self.config.ac_tau)
        return [x / total for x in z]

    def snapshot(self):
        return np.array(self.theta).ravel()


class Reinforce(ActorCritic):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.episode = []

    def select(self, s, t, rng):
        z, total = softmax_weights(self.theta[s])
        return sample_weights(z, total, rng.random())

    def update(self, s, a, r, s_next, t, rng):
        self.episode.append((s, a, r))
        if len(self.episode) >= self.config.reinforce_episode:
            reinforce_episode_update(self.theta, self.episode, self.config)

    def finish(self):
        reinforce_episode_update(self.theta, self.episode, self.config)

    def policy(self, s):
        z, total = softmax_weights(self.theta[s])
        return [x / total for x in z]


class Exp3Learner(Learner):
    def __init__(self, n_states, n_actions, config, rng=None):
        super().__init__(n_states, n_actions, config)
        self.w = [[1.0] * n_actions for _ in range(n_states)]

    def select(self, s, t, rng):
        pi = exp3_policy(self.w[s], self.config.exp3_gamma)
        return sample_weights(pi, 1.0, rng.random())

    def update(self, s, a, r, s_next, t, rng):
        exp3_update(self.w, s, a, r, self.config)

    def policy(self, s):
        return exp3_policy(self.w[s], self.config.exp3_gamma)

    def snapshot(self):
        return np.array([exp3_policy(row, self.config.exp3_gamma) for row in self.w]).ravel()


LEARNERS = {
    "qlearning": QLearner,
    "sarsa": SarsaLearner,
    "gradient_bandit": GradientBandit,
    "ucb": UCBLearner,
    "thompson": ThompsonLearner,
    "actor_critic": ActorCritic,
    "reinforce": Reinforce,
    "exp3": Exp3Learner,
}


def make_learner(n_actions: int, config: LearnerConfig, codec: StateCodec, rng=None) -> Learner:
    """Build a learner; state-free algorithms get a single-state table."""
    n_states = codec.n_states if config.algorithm in STATEFUL else 1
    return LEARNERS[config.algorithm](n_states, n_actions, config, rng)
