import math

import numpy as np
import pytest

from derlab import distributions as D
from derlab import operators as O
from derlab.distributions import CategoricalDist
from derlab.errors import EntropyUnbounded, NegativeEntropy, ShapeMismatch
from derlab.mdp import RISKY, SAFE, TabularMDP, make_chain, make_cliff_grid, make_risky_bandit, random_mdp


def one_state(r=1.0, gamma=0.5):
    return TabularMDP(np.ones((1, 1, 1)), np.full((1, 1), r), gamma, [False])


def linear_solve_q(mdp, pi, reward=None):
    S, A = mdp.n_states, mdp.n_actions
    reward = mdp.expected_reward if reward is None else reward
    M = (mdp.transition[:, :, :, None] * pi[None, None]).reshape(S * A, S * A)
    return np.linalg.solve(np.eye(S * A) - mdp.gamma * M, reward.ravel()).reshape(S, A)


def rand_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


# classical backups --------------------------------------------------------------


def test_bellman_backup_examples():
    mdp = one_state()
    pi = np.ones((1, 1))
    assert O.bellman_backup(mdp, np.zeros((1, 1)), pi)[0, 0] == 1.0
    assert O.policy_evaluation(mdp, pi, tol=1e-12)[0, 0] == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        O.bellman_backup(mdp, np.zeros((2, 1)), pi)


def test_bellman_iteration_matches_linear_solve():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 4, 2, 0.9)
    pi = rand_policy(rng, 4, 2)
    Q = np.zeros((4, 2))
    for _ in range(200):
        Q = O.bellman_backup(mdp, Q, pi)
    np.testing.assert_allclose(Q, linear_solve_q(mdp, pi), atol=1e-8)
    tol = 1e-10
    np.testing.assert_allclose(O.policy_evaluation(mdp, pi, tol=tol), linear_solve_q(mdp, pi), atol=10 * tol)


def test_optimality_backup():
    mdp = one_state()
    Q = np.array([[0.3]])
    assert O.bellman_optimality_backup(mdp, Q) == O.bellman_backup(mdp, Q, np.ones((1, 1)))
    assert O.value_iteration(make_chain(5, 0.0, 0.9), tol=1e-12)[0].max() == pytest.approx(0.729, abs=1e-10)
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 4, 3, 0.8)
    for _ in range(50):
        Q1 = rng.normal(size=(4, 3))
        Q2 = Q1 + rng.random((4, 3))
        assert np.all(O.bellman_optimality_backup(mdp, Q1) <= O.bellman_optimality_backup(mdp, Q2))


def test_value_iteration_self_consistent():
    mdp = random_mdp(np.random.default_rng(2), 5, 3, 0.9)
    tol = 1e-10
    Q = O.value_iteration(mdp, tol)
    assert np.max(np.abs(O.bellman_optimality_backup(mdp, Q) - Q)) < tol


def test_policy_improvement():
    np.testing.assert_array_equal(O.policy_improvement([[0.0, 1.0]]), [[0, 1]])
    np.testing.assert_array_equal(O.policy_improvement([[1.0, 1.0]]), [[1, 0]])
    rng = np.random.default_rng(3)
    for _ in range(20):
        mdp = random_mdp(rng, 4, 3, 0.9)
        pi = rand_policy(rng, 4, 3)
        q_old = linear_solve_q(mdp, pi)
        q_new = linear_solve_q(mdp, O.policy_improvement(q_old))
        assert np.all(q_new >= q_old - 1e-10)


# distributional backup ----------------------------------------------------------


def test_distributional_backup_examples():
    mdp = one_state(1.0, 0.5)
    Z = O.DistTable([0.0, 1.0, 2.0], [[[1.0, 0.0, 0.0]]])
    out = O.distributional_backup(mdp, Z, np.ones((1, 1)))
    np.testing.assert_allclose(out.probs[0, 0], [0, 1, 0])
    exact = O.distributional_backup(mdp, Z, np.ones((1, 1)), project=False)
    d = exact[0, 0]
    assert D.expectation(d) == 1.0 and d.probs[d.atoms == 1.0] == 1.0

    bandit = make_risky_bandit(1.0, 1.0)
    Z0 = O.DistTable.constant([0.0, 1.0, 2.0], [1.0, 0.0, 0.0], 2, 2)
    risky = O.distributional_backup(bandit, Z0, O.uniform_policy(2, 2), project=False)[0, RISKY]
    np.testing.assert_allclose(risky.atoms[risky.probs > 0], [0.0, 2.0])
    np.testing.assert_allclose(risky.probs[risky.probs > 0], [0.5, 0.5])


def test_distributional_backup_expectations():
    rng = np.random.default_rng(4)
    for det in (True, False):
        mdp = random_mdp(rng, 3, 2, 0.8, deterministic_rewards=det)
        grid = mdp.value_grid(41)
        Z = O.DistTable(grid, rng.dirichlet(np.ones(41), size=(3, 2)))
        pi = rand_policy(rng, 3, 2)
        expect = O.bellman_backup(mdp, Z.expectations(), pi)
        exact = O.distributional_backup(mdp, Z, pi, project=False)
        np.testing.assert_allclose(exact.expectations(), expect, atol=1e-12)
        projected = O.distributional_backup(mdp, Z, pi)
        assert np.max(np.abs(projected.expectations() - expect)) <= grid[1] - grid[0]


def test_distributional_value_iteration_matches_value_iteration():
    for mdp in (make_chain(5, 0.0, 0.9), make_chain(6, 0.2, 0.9), make_cliff_grid(4, 3, -1.0, 0.9)):
        grid = mdp.value_grid(201)
        Z = O.distributional_value_iteration(mdp, grid, tol=1e-10)
        Q = O.value_iteration(mdp, tol=1e-10)
        assert np.max(np.abs(Z.expectations() - Q)) <= grid[1] - grid[0]


def test_distributional_value_iteration_point_masses():
    mdp = make_chain(4, 0.0, 0.9)
    grid = np.linspace(0.0, 1.0, 101)
    Z = O.distributional_value_iteration(mdp, grid, tol=1e-12)
    Q = O.value_iteration(mdp, tol=1e-12)
    spacing = grid[1] - grid[0]
    for s in range(4):
        for a in range(2):
            d = Z[s, a]
            # all mass within one atom of the deterministic return
            assert d.probs[np.abs(d.atoms - Q[s, a]) <= spacing + 1e-12].sum() == pytest.approx(1.0)


# regularized operator -------------------------------------------------------------


def test_f_transform():
    assert O.f_transform(3.0, 0.0, 0.9) == 0.0
    assert O.f_transform(1.0, 0.25, 0.5) == pytest.approx(1.0)
    assert O.f_transform(0.0, 0.7, 0.3) == 0.0
    H = np.linspace(0, 5, 50)
    assert np.all(np.diff(O.f_transform(H, 0.5, 0.9)) >= 0)
    with pytest.raises(NegativeEntropy):
        O.f_transform(-0.1, 0.5, 0.9)


def _h_one_tables(S, A):
    """Z with q_0 = e^-1 and mu = delta_0, so H(mu, q) = 1 everywhere."""
    grid = np.array([0.0, 1.0])
    q = np.array([math.exp(-1.0), 1.0 - math.exp(-1.0)])
    return O.DistTable.constant(grid, q, S, A), O.DistTable.constant(grid, [1.0, 0.0], S, A)


def test_der_backup_examples():
    rng = np.random.default_rng(5)
    P = rng.dirichlet(np.ones(2), size=(2, 2))
    mdp = TabularMDP(P, rng.uniform(-1, 1, (2, 2)), 0.5, [False, False])
    Z, mu = _h_one_tables(2, 2)
    pi = rand_policy(rng, 2, 2)
    Q = rng.normal(size=(2, 2))
    base = O.bellman_backup(mdp, Q, pi)
    np.testing.assert_array_equal(O.der_bellman_backup(mdp, Q, pi, Z, mu, 0.0), base)
    np.testing.assert_allclose(O.der_bellman_backup(mdp, Q, pi, Z, mu, 0.25) - base, 0.5, atol=1e-15)
    # mu = q: the correction is gamma * f(entropy(q)), the same for every pair
    corr = O.der_bellman_backup(mdp, Q, pi, Z, Z, 0.6) - base
    ent = D.entropy(Z[0, 0])
    np.testing.assert_allclose(corr, mdp.gamma * O.f_transform(ent, 0.6, mdp.gamma), atol=1e-14)


def test_der_backup_bound_guard():
    mdp = one_state()
    Z, mu = _h_one_tables(1, 1)
    with pytest.raises(EntropyUnbounded):
        O.der_bellman_backup(mdp, np.zeros((1, 1)), np.ones((1, 1)), Z, mu, 0.5, bound=0.5)


def test_der_evaluation_reductions():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, 3, 2, 0.8)
    pi = rand_policy(rng, 3, 2)
    Z = O.distributional_policy_evaluation(O.ProjectedBellman(mdp, mdp.value_grid(31)), pi)
    mu, _ = O.mu_table_from(Z, 0.5)
    plain = O.policy_evaluation(mdp, pi, "plain", 1e-10)
    np.testing.assert_array_equal(O.policy_evaluation(mdp, pi, "der", 1e-10, Z=Z, mu_table=mu, lam=0.0), plain)
    lam = 0.4
    H = O.risk_entropy_table(Z, mu)
    oracle = linear_solve_q(mdp, pi, mdp.expected_reward + mdp.gamma * O.f_transform(H, lam, mdp.gamma))
    der = O.policy_evaluation(mdp, pi, "der", 1e-10, Z=Z, mu_table=mu, lam=lam)
    np.testing.assert_allclose(der, oracle, atol=1e-9)


# policy iteration variants ---------------------------------------------------------


def test_derpi_risky_bandit():
    bandit = make_risky_bandit(1.0, 1.0, gamma=0.9)
    for lam in (0.1, 0.5, 1.0):
        res = O.derpi(bandit, lam, n_atoms=21)  # grid 0, 1, ..., 20 contains the mean
        q = res.q[0]
        assert q[RISKY] == pytest.approx(1.0 + math.sqrt(lam * math.log(2.0)), abs=1e-9)
        assert q[SAFE] == pytest.approx(1.0, abs=1e-9)
        assert q[RISKY] > q[SAFE]
        assert res.policy[0, RISKY] == 1.0
    res0 = O.derpi(bandit, 0.0, n_atoms=21)
    assert res0.q[0, RISKY] == pytest.approx(res0.q[0, SAFE], abs=1e-9)


def test_derpi_trace_and_optimality():
    rng = np.random.default_rng(7)
    for _ in range(10):
        mdp = random_mdp(rng, 4, 3, 0.9)
        pi_star, _ = O.policy_iteration(mdp)
        res = O.derpi(mdp, 0.0)
        np.testing.assert_array_equal(res.policy, pi_star)
        for lam in (0.3, 0.7):
            trace = O.derpi(mdp, lam).trace
            for a, b in zip(trace, trace[1:]):
                assert np.all(b >= a - 1e-9)


def test_derpi_single_pair():
    res = O.derpi(one_state(), 0.5)
    assert res.iterations == 1
    np.testing.assert_array_equal(res.policy, [[1.0]])


def test_derpi_refresh_option_and_errors():
    bandit = make_risky_bandit()
    a = O.derpi(bandit, 0.5, n_atoms=21, regularizer="refresh")
    b = O.derpi(bandit, 0.5, n_atoms=21, regularizer="frozen")
    np.testing.assert_allclose(a.q, b.q)
    with pytest.raises(ValueError):
        O.derpi(bandit, 1.5)
    with pytest.raises(ValueError):
        O.derpi(bandit, 0.5, regularizer="sometimes")


def test_soft_policy_iteration():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, 4, 2, 0.9)
    pi_soft, q_soft = O.soft_policy_iteration(mdp, 0.0)
    pi_pi, q_pi = O.policy_iteration(mdp)
    np.testing.assert_array_equal(pi_soft, pi_pi)
    np.testing.assert_array_equal(q_soft, q_pi)

    # one decision, rewards [0, 1], then an absorbing terminal
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0
    R = np.zeros((2, 2))
    R[0, 1] = 1.0
    bandit = TabularMDP(P, R, 0.9, [False, True])
    pi, _ = O.soft_policy_iteration(bandit, 1.0, tol=1e-12)
    np.testing.assert_allclose(pi[0], np.exp([0, 1]) / np.exp([0, 1]).sum(), atol=1e-6)
    np.testing.assert_allclose(pi[0], [0.2689, 0.7311], atol=1e-4)
    pi_hot, _ = O.soft_policy_iteration(bandit, 1e4)
    np.testing.assert_allclose(pi_hot[0], [0.5, 0.5], atol=1e-3)


# dumps ------------------------------------------------------------------------------


def test_dumps():
    Q = np.array([[1.5, -2.0]])
    assert O.dump_qtable(Q).splitlines() == ["states 1 actions 2", "Q 0 0 : 1.5", "Q 0 1 : -2"]
    Z = O.DistTable([0.0, 1.0], [[[0.25, 0.75]]])
    assert O.dump_disttable(Z).splitlines()[1] == "Z 0 0 : 0 1 | 0.25 0.75"
    csv_text = O.trace_to_csv([Q, Q + 1])
    lines = csv_text.splitlines()
    assert lines[0] == "iter,s,a,q" and len(lines) == 5 and lines[-1] == "1,0,1,-1"


def test_disttable_ragged():
    t = O.DistTable.from_entries([[CategoricalDist([0.0], [1.0]), CategoricalDist([0.0, 1.0], [0.5, 0.5])]])
    assert not t.shared
    np.testing.assert_allclose(t.expectations(), [[0.0, 0.5]])
    with pytest.raises(ShapeMismatch):
        t.probs
