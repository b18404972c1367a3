import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusim import learners as L
from collusim.errors import ConfigurationError, InputDomainError, NumericInputError
from collusim.learners import LearnerConfig, StateCodec

CFG = LearnerConfig()


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def zeros(s=1, a=3):
    return [[0.0] * a for _ in range(s)]


@pytest.mark.parametrize("m,b,state", [(0, 0, 0), (2.4, 1.2, 14), (0.75, 0.5, 5), (3.0, 2.0, 15), (9.0, 9.0, 15)])
def test_state_index_examples(m, b, state):
    assert L.state_index(m, b) == state


def test_state_index_negative():
    with pytest.raises(InputDomainError):
        L.state_index(-0.1, 0)


@given(st.floats(0, 3), st.floats(0, 2), st.sampled_from([1, 2, 4, 8]))
def test_state_index_range(m, b, bins):
    codec = StateCodec(bins_m=bins, bins_b=bins)
    assert 0 <= L.state_index(m, b, codec) < codec.n_states


def test_epsilon_schedule():
    assert L.epsilon_at(0) == 0.25
    assert L.epsilon_at(1000) == pytest.approx(0.25 * 0.9995**1000)
    assert L.epsilon_at(1000) == pytest.approx(0.1516, abs=1e-4)
    assert L.epsilon_at(20000) == 0.02


def test_eps_greedy():
    g = rng(1)
    assert L.select_eps_greedy([0, 5, 1], 0.0, g) == 1
    assert L.select_eps_greedy([2, 2, 2], 0.0, g) == 0
    counts = np.bincount([L.select_eps_greedy([0, 5, 1], 1.0, g) for _ in range(12_000)], minlength=3)
    sigma = math.sqrt(12_000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 4000) <= 3 * sigma)


def test_qlearning_examples():
    Q = L.qlearning_update(zeros(), 0, 1, 1.0, 0)
    assert Q[0][1] == pytest.approx(0.12)
    assert L.qlearning_update(zeros(), 0, 1, 0.0, 0) == zeros()
    Q = zeros(1, 1)
    for _ in range(2000):
        L.qlearning_update(Q, 0, 0, 1.0, 0)
    assert Q[0][0] == pytest.approx(10.0, abs=1e-3)
    with pytest.raises(NumericInputError):
        L.qlearning_update(zeros(), 0, 0, math.nan, 0)


def test_sarsa_examples():
    Q = [[0.3, 0.9, 0.1], [0.5, 0.2, 0.7]]
    a = [row[:] for row in Q]
    b = [row[:] for row in Q]
    L.qlearning_update(a, 0, 0, 0.4, 1)
    L.sarsa_update(b, 0, 0, 0.4, 1, L.argmax(Q[1]))
    assert a == b
    for a_next in range(3):
        assert L.sarsa_update(zeros(), 0, 2, 1.0, 0, a_next)[0][2] == pytest.approx(0.12)


def test_gradient_bandit_examples():
    H, r_bar = L.gradient_bandit_update([0.0] * 3, 0.5, 4, 1, 0.5)
    assert H == [0.0] * 3 and r_bar == 0.5
    H, r_bar = L.gradient_bandit_update([0.0] * 3, 0.0, 0, 0, 1.0)
    assert H[0] == pytest.approx(0.08) and H[1] == pytest.approx(-0.04) and H[2] == pytest.approx(-0.04)
    assert r_bar == 1.0


def test_ucb_examples():
    assert L.ucb_select([0, 0, 0], [0, 0, 0], 1) == 0
    assert L.ucb_select([10, 10], [0.5, 0.4], 100) == 0
    assert L.ucb_select([100, 1], [0.5, 0.0], 101) == 1
    with pytest.raises(InputDomainError):
        L.ucb_select([1], [0.0], 0)


@pytest.mark.parametrize("r,a,b", [(1.0, 2.0, 1.0), (-1.0, 1.0, 2.0), (0.0, 1.5, 1.5)])
def test_thompson_examples(r, a, b):
    a0, b0 = L.thompson_update([1.0], [1.0], 0, r)
    assert (a0[0], b0[0]) == (a, b)


def test_actor_critic_examples():
    theta, V = L.actor_critic_update(zeros(2), [0.0, 0.0], 0, 1, 0.0, 1)
    assert theta == zeros(2) and V == [0.0, 0.0]
    theta, V = L.actor_critic_update(zeros(2), [0.0, 0.0], 0, 1, 1.0, 1)
    assert V[0] == pytest.approx(0.15) and theta[0][1] == pytest.approx(0.10)


def test_reinforce_examples():
    theta = L.reinforce_episode_update(zeros(), [(0, 0, 0.0), (0, 1, 0.0)])
    assert theta == zeros()
    theta = L.reinforce_episode_update(zeros(), [(0, 2, 1.0)])
    assert theta[0][2] == pytest.approx(0.05)
    theta = L.reinforce_episode_update(zeros(), [(0, 0, 0.0), (0, 1, 1.0)])
    assert theta[0][0] == pytest.approx(0.045) and theta[0][1] == pytest.approx(0.05)
    assert L.reinforce_episode_update(zeros(), []) == zeros()


def test_reinforce_flushes_partial_episode():
    agent = L.Reinforce(1, 3, CFG)
    agent.update(0, 1, 1.0, 0, 0, rng())
    assert agent.theta[0][1] == 0.0
    agent.finish()
    assert agent.theta[0][1] == pytest.approx(0.05)


def test_exp3_examples():
    w = [[1.0] * 12]
    L.exp3_update(w, 0, 3, -1.0)          # r_norm = 0
    assert w == [[1.0] * 12]
    L.exp3_update(w, 0, 3, 2.0)           # r_norm = 1
    assert w[0][3] == pytest.approx(math.exp(0.1))
    assert L.exp3_policy([1.0] * 12, 0.1) == pytest.approx([1 / 12] * 12)


def test_exp3_rescales_large_weights():
    w = [[1e149, 1.0]]
    for _ in range(100):
        L.exp3_update(w, 0, 0, 2.0)
    assert max(w[0]) <= L.EXP3_RESCALE and all(math.isfinite(x) for x in w[0])
    assert sum(L.exp3_policy(w[0], 0.1)) == pytest.approx(1.0)


def test_argmax_and_sampling():
    assert L.argmax([1, 3, 3, 2]) == 1
    assert L.sample_weights([0.0, 2.0, 0.0], 2.0, 0.999999) == 1
    assert L.uniform_index(0.9999999999, 6) == 5


def test_config_validation():
    with pytest.raises(ConfigurationError):
        LearnerConfig(algorithm="dqn")
    with pytest.raises(ConfigurationError):
        LearnerConfig(alpha=0.0)
    with pytest.raises(ConfigurationError):
        StateCodec(bins_m=0)


# -- policy validity invariants over all algorithms ----------------------------------


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(L.ALGORITHMS), st.integers(0, 2**32 - 1),
       st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=60))
def test_learner_policy_validity(alg, seed, rewards):
    cfg = LearnerConfig(algorithm=alg)
    codec = StateCodec()
    g = rng(seed)
    agent = L.make_learner(12, cfg, codec, g)
    s = 0
    for t, r in enumerate(rewards):
        a = agent.select(s, t, g)
        assert 0 <= a < 12
        s_next = int(g.integers(agent.n_states))
        agent.update(s, a, r, s_next, t, g)
        s = s_next
    agent.finish()
    snap = agent.snapshot()
    assert np.all(np.isfinite(snap))
    if alg not in ("ucb", "thompson"):
        for state in range(agent.n_states):
            pi = agent.policy(state)
            assert len(pi) == 12 and min(pi) >= 0 and sum(pi) == pytest.approx(1.0, abs=1e-9)


def test_stateless_algorithms_use_one_state():
    for alg in L.ALGORITHMS:
        agent = L.make_learner(12, LearnerConfig(algorithm=alg), StateCodec())
        assert agent.n_states == (16 if alg in L.STATEFUL else 1)


def test_sarsa_carries_next_action():
    agent = L.make_learner(12, LearnerConfig(algorithm="sarsa"), StateCodec(), rng(4))
    g = rng(5)
    agent.update(0, 0, 1.0, 3, 0, g)
    carried = agent.pending
    assert 0 <= carried < 12
    assert agent.select(3, 1, g) == carried
    assert agent.pending == -1
