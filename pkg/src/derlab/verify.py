"""Executable certificates for the theory behind the regularized operators.

Each ``check_*`` draws random instances from its own seeded generator,
evaluates an inequality or identity on each one, and returns a
`PropertyReport`.  A margin is ``allowed - observed``: for an inequality
``lhs <= rhs`` it is ``rhs - lhs``, for an identity it is ``-|error|``.
A trial fails when its margin drops below minus the check's tolerance,
and the smallest margin seen is kept even when everything passes.
"""

from __future__ import annotations

import csv
import io
import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import distributions as D
from . import operators as O
from .distributions import CategoricalDist
from .mdp import TabularMDP, random_mdp

__all__ = [
    "PropertyReport",
    "prop1_terms",
    "enumerate_optimal_policies",
    "check_prop1",
    "check_kl_nonexpansion",
    "check_pinsker_and_w1",
    "check_expectation_contraction",
    "check_prop3_identity",
    "check_derpi",
    "run_suite",
    "format_table",
    "reports_to_csv",
]


@dataclass(frozen=True)
class PropertyReport:
    name: str
    trials: int
    failures: int
    worst_margin: float
    seed: int
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0


class _Tally:
    def __init__(self, name, seed):
        self.name, self.seed = name, seed
        self.trials = self.failures = 0
        self.worst = np.inf
        self.start = time.perf_counter()

    def add(self, margin: float, tol: float, count_trial: bool = True):
        margin = float(margin)
        self.worst = min(self.worst, margin)
        if not margin >= -tol:  # NaN counts as a failure
            self.failures += 1
        self.trials += count_trial

    def fail(self):
        self.failures += 1

    def report(self) -> PropertyReport:
        worst = 0.0 if self.worst == np.inf else self.worst + 0.0  # no -0.0
        return PropertyReport(self.name, self.trials, self.failures, worst, self.seed,
                              time.perf_counter() - self.start)


def _random_grid(rng, n_min=3, n_max=9):
    n = int(rng.integers(n_min, n_max + 1))
    c = rng.uniform(0.5, 5.0)
    return np.linspace(-c, c, n)


def _positive_probs(rng, size, concentration=1.0):
    p = rng.dirichlet(np.full(size[-1], concentration), size=size[:-1])
    p = np.maximum(p, 1e-6)
    return p / p.sum(axis=-1, keepdims=True)


def _random_instance(rng, deterministic_rewards=True) -> TabularMDP:
    S = int(rng.integers(1, 5))
    A = int(rng.integers(1, 4))
    return random_mdp(rng, S, A, rng.uniform(0.5, 0.95), deterministic_rewards)


def _random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


# --------------------------------------------------------------------------
# expectation decomposition


def prop1_terms(p: CategoricalDist, epsilon: float):
    """(sup distance, closed form, variance bound) for F_mu := F.

    The sup of |F - ((1 - eps) 1{x >= E} + eps F)| is taken over every real
    x: both step functions only jump at the atoms and at E, so the values
    at those points and their left limits cover it.  The closed form is
    (1 - eps) max{F(E-), 1 - F(E-)}; the variance bound uses the radius
    c = max |x - E| over the support.
    """
    E = D.expectation(p)
    points = np.append(p.atoms, E)
    right = np.abs(p.cdf(points) - (points >= E))
    left = np.abs(p.cdf_left(points) - (points > E))
    sup = (1.0 - epsilon) * max(right.max(), left.max())
    f_left = float(p.cdf_left(np.array([E]))[0])
    closed = (1.0 - epsilon) * max(f_left, 1.0 - f_left)
    support = p.atoms[p.probs > 0]
    c = np.max(np.abs(support - E))
    var = D.variance(p)
    bound = (1.0 - epsilon) * (1.0 - var / (2.0 * c * c)) if c > 0 else 1.0 - epsilon
    return sup, closed, bound


def check_prop1(trials: int = 1000, seed: int = 0) -> PropertyReport:
    """Sup-norm gap of the decomposition against its closed form and variance bound.

    Equality with the closed form is asserted whenever no probability mass
    sits exactly at E; if it does, F(E) > F(E-) and only the inequality
    survives, so that case is checked as ``sup <= closed``.
    """
    rng = np.random.default_rng(seed)
    t = _Tally("prop1_decomposition_bound", seed)
    for _ in range(trials):
        n = int(rng.integers(2, 12))
        c = rng.uniform(0.1, 10.0)
        atoms = np.sort(rng.uniform(-c, c, size=n))
        if rng.random() < 0.2:
            atoms = np.linspace(-c, c, n)
        probs = rng.dirichlet(np.full(n, rng.choice([0.2, 1.0, 5.0])))
        p = CategoricalDist(np.unique(atoms), _merge(atoms, probs))
        eps = rng.uniform(0.0, 0.999)
        sup, closed, bound = prop1_terms(p, eps)
        E = D.expectation(p)
        at_mean = np.any((np.abs(p.atoms - E) <= 1e-12 * max(1.0, abs(E))) & (p.probs > 0))
        t.add(closed - sup if at_mean else -abs(sup - closed), 1e-12, count_trial=False)
        t.add(bound - closed, 1e-9)
    return t.report()


def _merge(atoms, probs):
    _, inv = np.unique(atoms, return_inverse=True)
    return np.bincount(inv, weights=probs)


# --------------------------------------------------------------------------
# KL properties of the distributional operator


def check_kl_nonexpansion(trials: int = 500, seed: int = 0) -> PropertyReport:
    """sup KL(T Z1 || T Z2) <= sup KL(Z1 || Z2) with the exact (unprojected) backup.

    Deterministic rewards and a shared grid keep both backed-up tables on
    identical induced supports, so the KL on the left is finite and exact.
    """
    rng = np.random.default_rng(seed)
    t = _Tally("kl_nonexpansion", seed)
    for _ in range(trials):
        mdp = _random_instance(rng)
        S, A = mdp.n_states, mdp.n_actions
        grid = _random_grid(rng)
        Z1 = O.DistTable(grid, _positive_probs(rng, (S, A, grid.size)))
        Z2 = O.DistTable(grid, _positive_probs(rng, (S, A, grid.size)))
        pi = _random_policy(rng, S, A)
        before = max(D.kl_divergence(Z1[s, a], Z2[s, a]) for s in range(S) for a in range(A))
        T1 = O.distributional_backup(mdp, Z1, pi, project=False)
        T2 = O.distributional_backup(mdp, Z2, pi, project=False)
        after = max(D.kl_divergence(T1[s, a], T2[s, a]) for s in range(S) for a in range(A))
        t.add(before - after, 1e-10)
    return t.report()


def check_pinsker_and_w1(trials: int = 1000, seed: int = 0) -> PropertyReport:
    """TV <= sqrt(KL / 2) and W1 <= diameter * TV on random shared-grid pairs."""
    rng = np.random.default_rng(seed)
    t = _Tally("pinsker_and_w1", seed)
    for _ in range(trials):
        grid = np.sort(rng.uniform(-5.0, 5.0, size=int(rng.integers(2, 12))))
        grid = np.unique(grid)
        p = CategoricalDist(grid, rng.dirichlet(np.ones(grid.size)))
        q = CategoricalDist(grid, _positive_probs(rng, (grid.size,), rng.choice([0.3, 1.0, 3.0])))
        tv = D.total_variation(p, q)
        kl = D.kl_divergence(p, q)
        w1 = D.wasserstein(p, q, 1)
        t.add(np.sqrt(kl / 2.0) - tv, 1e-10, count_trial=False)
        t.add((grid[-1] - grid[0]) * tv - w1, 1e-10)
    return t.report()


def check_expectation_contraction(trials: int = 500, seed: int = 0) -> PropertyReport:
    """||E T Z1 - E T Z2||_inf <= gamma ||E Z1 - E Z2||_inf, rewards possibly random."""
    rng = np.random.default_rng(seed)
    t = _Tally("expectation_contraction", seed)
    for i in range(trials):
        mdp = _random_instance(rng, deterministic_rewards=bool(i % 2))
        S, A = mdp.n_states, mdp.n_actions
        grid = _random_grid(rng)
        Z1 = O.DistTable(grid, rng.dirichlet(np.ones(grid.size), size=(S, A)))
        Z2 = O.DistTable(grid, rng.dirichlet(np.ones(grid.size), size=(S, A)))
        pi = _random_policy(rng, S, A)
        gap = np.max(np.abs(Z1.expectations() - Z2.expectations()))
        T1 = O.distributional_backup(mdp, Z1, pi, project=False)
        T2 = O.distributional_backup(mdp, Z2, pi, project=False)
        t.add(mdp.gamma * gap - np.max(np.abs(T1.expectations() - T2.expectations())), 1e-10)
    return t.report()


# --------------------------------------------------------------------------
# decomposed cross-entropy


def _unclipped_triple(rng):
    n = int(rng.integers(2, 12))
    grid = np.linspace(-1.0, 1.0, n) * rng.uniform(0.5, 10.0)
    p = CategoricalDist(grid, rng.dirichlet(np.full(n, rng.choice([0.3, 1.0, 3.0]))))
    m = D.expectation_bin(p)
    # any eps with 1 - eps <= p_m leaves a nonnegative remainder
    eps = 1.0 - p.probs[m] * rng.uniform(0.0, 1.0)
    eps = min(max(eps, 1e-6), 1.0 - 1e-9)
    q = CategoricalDist(grid, _positive_probs(rng, (n,), rng.choice([0.3, 1.0, 3.0])))
    return p, q, eps


def _simplex_grid(k: int = 200):
    i, j = np.meshgrid(np.arange(1, k), np.arange(1, k), indexing="ij")
    keep = i + j < k
    a, b = i[keep] / k, j[keep] / k
    return np.stack([a, b, 1.0 - a - b], axis=1)


def check_prop3_identity(trials: int = 1000, seed: int = 0, argmin_cases: int = 5) -> PropertyReport:
    """(1 - eps)(-ln q_m) + eps H(mu, q) = H(p, q) on unclipped triples.

    Also scans a 200-step simplex grid on 3 atoms and asserts that the
    decomposed objective and the plain cross-entropy pick the same q.
    """
    rng = np.random.default_rng(seed)
    t = _Tally("prop3_identity", seed)
    done = 0
    while done < trials:
        p, q, eps = _unclipped_triple(rng)
        dec = D.decompose_exact(p, eps)
        if dec.clipped:
            continue
        lhs = (1.0 - eps) * -np.log(q.probs[dec.bin]) + eps * D.cross_entropy(dec.mu, q)
        rhs = D.cross_entropy(p, q)
        t.add(-abs(lhs - rhs) / max(1.0, abs(rhs)), 1e-12)
        done += 1
    Q = _simplex_grid(200)
    grid = np.array([-1.0, 0.0, 1.0])
    cases = [(np.array([0.1, 0.6, 0.3]), 0.5)]
    while len(cases) < argmin_cases:
        p = rng.dirichlet(np.ones(3))
        m = D._nearest_index(grid, p @ grid)
        cases.append((p, 1.0 - p[m] * rng.uniform(0.05, 0.95)))
    logQ = np.log(Q)
    for p, eps in cases:
        dec = D.decompose_exact(CategoricalDist(grid, p), eps)
        plain = -(logQ @ p)
        decomposed = -logQ[:, dec.bin] + eps / (1.0 - eps) * -(logQ @ dec.mu.probs)
        i, j = int(np.argmin(plain)), int(np.argmin(decomposed))
        # distinct argmins are only acceptable as an exact numerical tie
        t.add(0.0 if i == j else -abs(plain[i] - plain[j]), 1e-12)
    return t.report()


# --------------------------------------------------------------------------
# regularized policy iteration


def _policy_values(mdp: TabularMDP, actions) -> np.ndarray:
    S = mdp.n_states
    P = mdp.transition[np.arange(S), actions]
    r = mdp.expected_reward[np.arange(S), actions]
    return np.linalg.solve(np.eye(S) - mdp.gamma * P, r)


def enumerate_optimal_policies(mdp: TabularMDP, tol: float = 1e-9):
    """Brute force over all |A|^|S| deterministic policies.

    Returns ``(optimal action tuples, V*)`` where a policy is optimal when
    its value is within ``tol`` of the elementwise best at every state.
    """
    S, A = mdp.n_states, mdp.n_actions
    policies = list(itertools.product(range(A), repeat=S))
    values = np.array([_policy_values(mdp, np.array(pol)) for pol in policies])
    best = values.max(axis=0)
    optimal = [pol for pol, v in zip(policies, values) if np.all(v >= best - tol)]
    return optimal, best


def _corrected_q_oracle(mdp: TabularMDP, pi, reward) -> np.ndarray:
    """Q for ``pi`` under the (S, A) ``reward`` by one linear solve."""
    S, A = mdp.n_states, mdp.n_actions
    # Q[s,a] = R[s,a] + gamma * sum_{s',a'} P[s,a,s'] pi[s',a'] Q[s',a']
    M = (mdp.transition[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)
    return np.linalg.solve(np.eye(S * A) - mdp.gamma * M, reward.ravel()).reshape(S, A)


def check_derpi(trials: int = 100, seed: int = 0, lams=(0.0, 0.3, 0.7), n_atoms: int = 51,
                tol: float = 1e-10) -> PropertyReport:
    """Three certificates per random MDP (|S| <= 6, |A| <= 3).

    (a) DERPI with lam = 0 returns a brute-force optimal policy; (b) every
    DERPI trace is (s, a)-wise nondecreasing for each lam; (c) the der
    evaluation of a random policy matches a linear solve on the
    corrected reward r + gamma f(H) within 10 * tol.
    """
    rng = np.random.default_rng(seed)
    t = _Tally("derpi_certificates", seed)
    for _ in range(trials):
        S = int(rng.integers(1, 7))
        A = int(rng.integers(1, 4))
        mdp = random_mdp(rng, S, A, rng.uniform(0.5, 0.95))
        optimal, best = enumerate_optimal_policies(mdp)
        for lam in lams:
            res = O.derpi(mdp, lam, tol, n_atoms=n_atoms)
            if lam == 0.0:
                chosen = tuple(int(a) for a in np.argmax(res.policy, axis=1))
                if chosen not in optimal:
                    t.fail()
                t.add(float(np.min(_policy_values(mdp, np.array(chosen)) - best)), 1e-9, count_trial=False)
            for before, after in zip(res.trace, res.trace[1:]):
                t.add(float(np.min(after - before)), 1e-9, count_trial=False)
        lam = rng.uniform(0.05, 1.0)
        pi = _random_policy(rng, S, A)
        Z = O.distributional_policy_evaluation(O.ProjectedBellman(mdp, mdp.value_grid(n_atoms)), pi, 1e-8)
        mu, _ = O.mu_table_from(Z, 0.5)
        H = O.risk_entropy_table(Z, mu)
        q_der = O.policy_evaluation(mdp, pi, "der", tol, Z=Z, mu_table=mu, lam=lam)
        oracle = _corrected_q_oracle(mdp, pi, mdp.expected_reward + mdp.gamma * O.f_transform(H, lam, mdp.gamma))
        t.add(10 * tol - float(np.max(np.abs(q_der - oracle))), 0.0)
    return t.report()


# --------------------------------------------------------------------------
# suite


DEFAULT_TRIALS = {
    "prop1": 1000,
    "kl": 500,
    "pinsker": 1000,
    "contraction": 500,
    "prop3": 1000,
    "derpi": 100,
}


def run_suite(seed: int = 0, scale: float = 1.0) -> list[PropertyReport]:
    """Every check at its default trial count (times ``scale``)."""
    n = {k: max(1, int(round(v * scale))) for k, v in DEFAULT_TRIALS.items()}
    return [
        check_prop1(n["prop1"], seed),
        check_kl_nonexpansion(n["kl"], seed),
        check_pinsker_and_w1(n["pinsker"], seed),
        check_expectation_contraction(n["contraction"], seed),
        check_prop3_identity(n["prop3"], seed),
        check_derpi(n["derpi"], seed),
    ]


def format_table(reports) -> str:
    head = f"{'property':<28} {'trials':>7} {'failures':>8} {'worst_margin':>14} {'seed':>6}  status"
    lines = [head, "-" * len(head)]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<28} {r.trials:>7d} {r.failures:>8d} {r.worst_margin:>14.3e} {r.seed:>6d}  {status}")
    return "\n".join(lines) + "\n"


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["property", "trials", "failures", "worst_margin", "seed"])
    for r in reports:
        w.writerow([r.name, r.trials, r.failures, format(r.worst_margin, ".17g"), r.seed])
    return buf.getvalue()
