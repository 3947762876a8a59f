from collections import deque

import numpy as np
import pytest

from derlab import mdp as M
from derlab.distributions import CategoricalDist
from derlab.errors import InvalidStateAction
from derlab.operators import value_iteration


def test_chain_construction():
    c = M.make_chain(2, 0.0)
    assert c.n_states == 2 and c.n_actions == 2
    rng = np.random.default_rng(0)
    r, s2, done = M.sample_transition(c, 0, M.RIGHT, rng)
    assert (r, s2, done) == (1.0, 1, True)
    c5 = M.make_chain(5, 0.1)
    np.testing.assert_allclose(c5.transition.sum(axis=2), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        M.make_chain(1)
    with pytest.raises(ValueError):
        M.make_chain(4, 0.7)


def test_chain_value():
    Q = value_iteration(M.make_chain(5, 0.0, gamma=0.9), tol=1e-12)
    assert Q[0].max() == pytest.approx(0.9 ** 3, abs=1e-10)


def test_two_state_slip_chain_has_random_reward():
    c = M.make_chain(2, 0.2, gamma=0.9)
    d = c.reward_dists[(0, M.RIGHT)]
    np.testing.assert_allclose(d.atoms, [0.01, 1.0])
    np.testing.assert_allclose(d.probs, [0.2, 0.8])


def bfs_length(mdp, start, goal):
    seen, queue = {start: 0}, deque([start])
    while queue:
        s = queue.popleft()
        if s == goal:
            return seen[s]
        for a in range(mdp.n_actions):
            for s2 in np.flatnonzero(mdp.transition[s, a]):
                if s2 not in seen and mdp.reward[s, a, s2] >= 0:
                    seen[s2] = seen[s] + 1
                    queue.append(s2)
    return None


def test_cliff_grid():
    g = M.make_cliff_grid(4, 3, -1.0, gamma=0.9)
    assert g.n_states == 12
    assert np.all(np.isin(g.transition, [0.0, 1.0]))
    L = bfs_length(g, g.start_state, 3)
    assert L == 5
    Q = value_iteration(g, tol=1e-12)
    assert Q[g.start_state].max() == pytest.approx(0.9 ** (L - 1), abs=1e-10)
    # walking east from the start falls into the cliff and comes back with the penalty
    r, s2, done = M.sample_transition(g, 0, M.EAST, np.random.default_rng(0))
    assert (r, s2, done) == (-1.0, 0, False)


def test_risky_bandit():
    b = M.make_risky_bandit(1.0, 1.0)
    np.testing.assert_allclose(b.expected_reward[0], [1.0, 1.0])
    d = b.reward_dists[(0, M.RISKY)]
    assert d == CategoricalDist([0.0, 2.0], [0.5, 0.5])
    assert np.dot(d.probs, (d.atoms - 1.0) ** 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        M.make_risky_bandit(spread=0.0)


def test_invariants_rejected():
    P = np.array([[[0.5, 0.6]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        M.TabularMDP(P, np.zeros((2, 1)), 0.9, [False, True])
    P = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    with pytest.raises(ValueError):
        M.TabularMDP(P, np.zeros((2, 1)), 0.9, [False, True])  # terminal does not self-loop
    with pytest.raises(ValueError):
        M.TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1)), 1.0, [False])


def test_sample_transition_contract():
    c = M.make_chain(5, 0.0)
    assert M.sample_transition(c, 4, 0, np.random.default_rng(0)) == (0.0, 4, True)
    a = [M.sample_transition(c, 2, 1, np.random.default_rng(s)) for s in range(5)]
    assert len(set(a)) == 1
    with pytest.raises(InvalidStateAction):
        M.sample_transition(c, 9, 0, np.random.default_rng(0))


def test_sample_transition_frequencies():
    rng = np.random.default_rng(7)
    mdp = M.random_mdp(rng, 4, 2, 0.9)
    n = 100_000
    draws = np.array([M.sample_transition(mdp, 1, 1, rng)[1] for _ in range(n)])
    p = mdp.transition[1, 1]
    freq = np.bincount(draws, minlength=4) / n
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-12)


def test_sampling_reproducible():
    mdp = M.make_risky_bandit()
    a = [M.sample_transition(mdp, 0, M.RISKY, np.random.default_rng(3)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_text_round_trip():
    for mdp in (M.make_chain(4, 0.1), M.make_risky_bandit(), M.make_cliff_grid(),
                M.random_mdp(np.random.default_rng(1), 3, 2, 0.8, deterministic_rewards=False)):
        back = M.from_text(M.to_text(mdp))
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        np.testing.assert_array_equal(back.terminal, mdp.terminal)
        assert back.gamma == mdp.gamma and back.start_state == mdp.start_state
        assert back.reward_dists.keys() == mdp.reward_dists.keys()
        for k, d in mdp.reward_dists.items():
            assert back.reward_dists[k] == d
