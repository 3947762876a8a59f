"""Exact tabular dynamic programming.

Q tables and policies are plain ``(S, A)`` arrays.  Return distributions
live in a `DistTable`; on a shared grid it is backed by an ``(S, A, N)``
probability array, otherwise by per-entry `CategoricalDist` objects (the
form produced by unprojected distributional backups).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from .distributions import CategoricalDist
from .errors import EntropyUnbounded, NegativeEntropy, NonConvergence, ShapeMismatch
from .mdp import TabularMDP

__all__ = [
    "DistTable",
    "ProjectedBellman",
    "uniform_policy",
    "greedy_policy",
    "bellman_backup",
    "bellman_optimality_backup",
    "distributional_backup",
    "f_transform",
    "entropy_bound",
    "risk_entropy_table",
    "mu_table_from",
    "der_bellman_backup",
    "policy_evaluation",
    "distributional_policy_evaluation",
    "policy_improvement",
    "policy_iteration",
    "derpi",
    "DERPIResult",
    "soft_policy_iteration",
    "value_iteration",
    "distributional_value_iteration",
    "dump_qtable",
    "dump_disttable",
    "trace_to_csv",
]


class DistTable:
    """Return distribution Z[s, a] for every state-action pair."""

    def __init__(self, atoms, probs):
        atoms = np.asarray(atoms, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 3 or probs.shape[2] != atoms.size:
            raise ShapeMismatch(f"probs must have shape (S, A, {atoms.size}), got {probs.shape}")
        self._atoms = atoms
        self._probs = probs
        self._entries = None

    @classmethod
    def from_entries(cls, entries) -> "DistTable":
        entries = [list(row) for row in entries]
        first = entries[0][0].atoms
        if all(d.same_grid(entries[0][0]) for row in entries for d in row):
            return cls(first, np.array([[d.probs for d in row] for row in entries]))
        table = cls.__new__(cls)
        table._atoms = None
        table._probs = None
        table._entries = entries
        return table

    @classmethod
    def constant(cls, atoms, dist_probs, n_states: int, n_actions: int) -> "DistTable":
        probs = np.broadcast_to(np.asarray(dist_probs, dtype=float), (n_states, n_actions, len(atoms)))
        return cls(atoms, probs.copy())

    @property
    def shared(self) -> bool:
        return self._entries is None

    @property
    def shape(self) -> tuple[int, int]:
        if self.shared:
            return self._probs.shape[:2]
        return len(self._entries), len(self._entries[0])

    @property
    def atoms(self) -> np.ndarray:
        if not self.shared:
            raise ShapeMismatch("table entries do not share an atom grid")
        return self._atoms

    @property
    def probs(self) -> np.ndarray:
        if not self.shared:
            raise ShapeMismatch("table entries do not share an atom grid")
        return self._probs

    def __getitem__(self, sa) -> CategoricalDist:
        s, a = sa
        if self.shared:
            return CategoricalDist(self._atoms, self._probs[s, a])
        return self._entries[s][a]

    def expectations(self) -> np.ndarray:
        if self.shared:
            return self._probs @ self._atoms
        return np.array([[D.expectation(d) for d in row] for row in self._entries])

    def entries(self):
        S, A = self.shape
        return [[self[s, a] for a in range(A)] for s in range(S)]


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(Q, dtype=float)
    pi[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return pi


def _check_q(mdp: TabularMDP, Q, name="Q"):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(f"{name} has shape {Q.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    return Q


def _check_policy(mdp: TabularMDP, pi):
    pi = _check_q(mdp, pi, "policy")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("every policy row must be a probability vector")
    return pi


def bellman_backup(mdp: TabularMDP, Q, pi) -> np.ndarray:
    """(T^pi Q)[s, a] = E[R(s, a)] + gamma * sum_s' P(s'|s, a) sum_a' pi(a'|s') Q[s', a']."""
    Q = _check_q(mdp, Q)
    pi = _check_policy(mdp, pi)
    v = np.sum(pi * Q, axis=1)
    return mdp.expected_reward + mdp.gamma * (mdp.transition @ v)


def bellman_optimality_backup(mdp: TabularMDP, Q) -> np.ndarray:
    Q = _check_q(mdp, Q)
    return mdp.expected_reward + mdp.gamma * (mdp.transition @ Q.max(axis=1))


class ProjectedBellman:
    """The projected distributional Bellman operator of one MDP on a fixed grid.

    Precomputes, for every ``(s, a, s')``, the linear map taking a
    next-state distribution on the grid to the projected distribution of
    ``R + gamma * Z`` (reward outcomes folded in).  Applying the operator
    is then a single contraction over ``(s', atom)``.
    """

    def __init__(self, mdp: TabularMDP, grid):
        self.mdp = mdp
        self.grid = np.asarray(grid, dtype=float)
        S, A, N = mdp.n_states, mdp.n_actions, self.grid.size
        ops = np.zeros((S, A, S, N, N))
        for s, a, s2 in zip(*np.nonzero(mdp.transition)):
            vals, probs = mdp.reward_outcomes(s, a, s2)
            shifted = vals[:, None] + mdp.gamma * self.grid[None, :]  # (K, N)
            # row i of each (N, N) block: projection of unit mass at shifted[k, i]
            proj = D.project_probs(shifted[:, :, None], np.ones_like(shifted)[:, :, None], self.grid)
            ops[s, a, s2] = mdp.transition[s, a, s2] * np.tensordot(probs, proj, axes=1)
        # terminals return exactly zero: every input maps to the projection of 0
        zero = D.project_probs(np.zeros((1, 1)), np.ones((1, 1)), self.grid)[0]
        for s in np.flatnonzero(mdp.terminal):
            ops[s, :, :, :, :] = 0.0
            ops[s, :, s, :, :] = zero
        self._ops = ops

    def __call__(self, probs: np.ndarray, pi: np.ndarray) -> np.ndarray:
        nxt = np.einsum("ta,tai->ti", pi, probs)
        return np.einsum("ti,satij->saj", nxt, self._ops, optimize=True)


def _unprojected_entry(mdp: TabularMDP, Z: DistTable, pi, s, a) -> CategoricalDist:
    atoms, weights = [], []
    g = mdp.gamma
    for s2 in np.flatnonzero(mdp.transition[s, a]):
        vals, rprobs = mdp.reward_outcomes(s, a, s2)
        for a2 in np.flatnonzero(pi[s2]):
            z = Z[s2, a2]
            w = mdp.transition[s, a, s2] * pi[s2, a2]
            for r, rp in zip(vals, rprobs):
                atoms.append(r + g * z.atoms)
                weights.append(w * rp * z.probs)
    atoms = np.concatenate(atoms)
    weights = np.concatenate(weights)
    support, inv = np.unique(atoms, return_inverse=True)
    probs = np.bincount(inv.ravel(), weights=weights, minlength=support.size)
    return CategoricalDist(support, probs / probs.sum())


def distributional_backup(mdp: TabularMDP, Z: DistTable, pi, project: bool = True) -> DistTable:
    """Distributional Bellman operator T^pi applied to every entry of Z.

    With ``project`` the mixture of ``r + gamma * z`` is projected back onto
    Z's shared grid.  Without it the exact mixture is returned on its
    induced atom set (zero-mass atoms kept, coincident atoms merged).
    """
    pi = _check_policy(mdp, pi)
    if Z.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(f"Z has shape {Z.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    if project:
        op = ProjectedBellman(mdp, Z.atoms)
        probs = op(Z.probs, pi)
        return DistTable(Z.atoms, probs / probs.sum(axis=2, keepdims=True))
    S, A = Z.shape
    return DistTable.from_entries(
        [[_unprojected_entry(mdp, Z, pi, s, a) for a in range(A)] for s in range(S)]
    )


def f_transform(H, lam: float, gamma: float):
    """sqrt(lam * H) / gamma, the increasing map applied to the risk entropy."""
    H = np.asarray(H, dtype=float)
    if np.any(H < 0):
        raise NegativeEntropy("cross-entropy must be nonnegative")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    out = np.sqrt(lam * H) / gamma
    return float(out) if out.ndim == 0 else out


def entropy_bound(n_atoms: int) -> float:
    """Default M: ln(number of atoms) + 10."""
    return float(np.log(n_atoms) + 10.0)


def risk_entropy_table(Z: DistTable, mu_table: DistTable, bound: float | None = None) -> np.ndarray:
    """H(mu[s, a], Z[s, a]) for every pair, guarded by the bound M."""
    S, A = Z.shape
    H = np.array([[D.cross_entropy(mu_table[s, a], Z[s, a]) for a in range(A)] for s in range(S)]) + 0.0  # no -0.0
    if bound is None:
        bound = entropy_bound(len(Z[0, 0]))
    if np.any(H > bound):
        s, a = np.unravel_index(np.argmax(H), H.shape)
        raise EntropyUnbounded(f"H(mu, q) = {H[s, a]:.6g} at {(s, a)} exceeds the bound {bound:.6g}")
    return H


def mu_table_from(targets: DistTable, epsilon: float, mode: str = "decompose"):
    """Remainder distributions mu for every entry of ``targets``.

    ``mode="decompose"`` solves the exact expectation decomposition (with
    clipping where it is ill-posed); ``mode="whole"`` uses the target itself.
    Returns ``(mu_table, clipped_count)``.
    """
    if mode == "whole":
        return targets, 0
    if mode != "decompose":
        raise ValueError(f"unknown mu mode {mode!r}")
    S, A = targets.shape
    clipped = 0
    rows = []
    for s in range(S):
        row = []
        for a in range(A):
            dec = D.decompose_exact(targets[s, a], epsilon)
            clipped += dec.clipped
            row.append(dec.mu)
        rows.append(row)
    return DistTable.from_entries(rows), clipped


def der_bellman_backup(mdp: TabularMDP, Q, pi, Z: DistTable, mu_table: DistTable, lam: float,
                       bound: float | None = None) -> np.ndarray:
    """Bellman backup with the reward corrected by gamma * f(H(mu, q))."""
    base = bellman_backup(mdp, Q, pi)
    H = risk_entropy_table(Z, mu_table, bound)
    if lam == 0:
        return base
    return base + _correction(mdp, H, lam)


def _correction(mdp: TabularMDP, H: np.ndarray, lam: float) -> np.ndarray:
    # the return after termination is exactly zero, so terminals get no bonus
    corr = mdp.gamma * f_transform(H, lam, mdp.gamma)
    corr[mdp.terminal] = 0.0
    return corr


def policy_evaluation(mdp: TabularMDP, pi, backup: str = "plain", tol: float = 1e-10, *,
                      Z: DistTable | None = None, mu_table: DistTable | None = None, lam: float = 0.0,
                      bound: float | None = None, max_iters: int = 100_000) -> np.ndarray:
    """Iterate the chosen backup from Q = 0 until the result is guaranteed to be
    within ``tol`` of the fixed point (sup-norm change times gamma / (1 - gamma))."""
    pi = _check_policy(mdp, pi)
    reward = mdp.expected_reward
    if backup == "der":
        H = risk_entropy_table(Z, mu_table, bound)
        if lam > 0:
            reward = reward + _correction(mdp, H, lam)
    elif backup != "plain":
        raise ValueError(f"unknown backup {backup!r}")
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    factor = mdp.gamma / (1.0 - mdp.gamma)
    for _ in range(max_iters):
        Q_new = reward + mdp.gamma * (mdp.transition @ np.sum(pi * Q, axis=1))
        if factor * np.max(np.abs(Q_new - Q)) < tol:
            return Q_new
        Q = Q_new
    raise NonConvergence(f"policy evaluation did not reach tol={tol} in {max_iters} sweeps")


def policy_improvement(Q) -> np.ndarray:
    """Deterministic greedy policy; ties go to the lowest action index."""
    Q = np.asarray(Q, dtype=float)
    if not np.all(np.isfinite(Q)):
        raise ValueError("Q must be finite")
    return greedy_policy(Q)


def policy_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iters: int = 1000):
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    for _ in range(max_iters):
        Q = policy_evaluation(mdp, pi, "plain", tol)
        new = policy_improvement(Q)
        if np.array_equal(new, pi):
            return pi, Q
        pi = new
    raise NonConvergence(f"policy iteration did not stabilize in {max_iters} iterations")


def distributional_policy_evaluation(op: ProjectedBellman, pi, tol: float = 1e-8, init: np.ndarray | None = None,
                                     max_iters: int = 100_000) -> DistTable:
    """Iterate the projected distributional backup of ``pi`` to a fixed point."""
    S, A, N = op.mdp.n_states, op.mdp.n_actions, op.grid.size
    probs = np.full((S, A, N), 1.0 / N) if init is None else init
    for _ in range(max_iters):
        new = op(probs, pi)
        if np.max(np.abs(new - probs)) < tol:
            return DistTable(op.grid, new / new.sum(axis=2, keepdims=True))
        probs = new
    raise NonConvergence(f"distributional evaluation did not reach tol={tol} in {max_iters} sweeps")


@dataclass
class DERPIResult:
    policy: np.ndarray
    q: np.ndarray
    dist: DistTable
    mu: DistTable
    trace: list = field(default_factory=list)  # corrected Q after each evaluation
    policies: list = field(default_factory=list)
    entropies: list = field(default_factory=list)
    clipped: int = 0

    @property
    def iterations(self) -> int:
        return len(self.trace)


def derpi(mdp: TabularMDP, lam: float, tol: float = 1e-10, max_iters: int = 200, *,
          epsilon: float = 0.5, n_atoms: int = 51, mu_mode: str = "decompose", dist_tol: float = 1e-8,
          bound: float | None = None, regularizer: str = "frozen") -> DERPIResult:
    """Distribution-entropy-regularized policy iteration.

    Each round refreshes the return distributions of the current policy
    to ``dist_tol``, builds mu from them, evaluates the corrected Q with
    the der backup, and improves greedily.  Stops when the greedy policy
    repeats.  With ``regularizer="frozen"`` the distributions and mu are
    computed once, for the initial uniform policy, and then held fixed.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if regularizer not in ("refresh", "frozen"):
        raise ValueError(f"unknown regularizer mode {regularizer!r}")
    op = ProjectedBellman(mdp, mdp.value_grid(n_atoms))
    bound = entropy_bound(n_atoms) if bound is None else bound
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    result = DERPIResult(pi, None, None, None)
    Z = mu = None
    for _ in range(max_iters):
        if Z is None or regularizer == "refresh":
            Z = distributional_policy_evaluation(op, pi, dist_tol, None if Z is None else Z.probs)
            mu, clipped = mu_table_from(Z, epsilon, mu_mode)
            result.clipped += clipped
        Q = policy_evaluation(mdp, pi, "der", tol, Z=Z, mu_table=mu, lam=lam, bound=bound)
        result.trace.append(Q)
        result.policies.append(pi)
        result.entropies.append(risk_entropy_table(Z, mu, bound))
        new = policy_improvement(Q)
        if np.array_equal(new, pi):
            result.policy, result.q, result.dist, result.mu = pi, Q, Z, mu
            return result
        pi = new
    raise NonConvergence(f"DERPI did not stabilize in {max_iters} iterations")


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _policy_entropy(pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(pi), 0.0)
    return -terms.sum(axis=1)


def soft_policy_iteration(mdp: TabularMDP, beta: float, tol: float = 1e-10, max_iters: int = 10_000):
    """Policy iteration on the reward r(s, a) + beta * H(pi(.|s)).

    Improvement sets pi(.|s) proportional to exp(Q[s] / beta), or greedy
    when beta is 0.  Stops once the policy moves by less than ``tol``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0:
        return policy_iteration(mdp, tol, max_iters)
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    P, g = mdp.transition, mdp.gamma
    for _ in range(max_iters):
        reward = mdp.expected_reward + beta * _policy_entropy(pi)[:, None]
        Q = np.zeros_like(reward)
        while True:
            Q_new = reward + g * (P @ np.sum(pi * Q, axis=1))
            done = np.max(np.abs(Q_new - Q)) < tol
            Q = Q_new
            if done:
                break
        new = _softmax_rows(Q / beta)
        if np.max(np.abs(new - pi)) < tol:
            return new, Q
        pi = new
    raise NonConvergence(f"soft policy iteration did not stabilize in {max_iters} iterations")


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iters):
        Q_new = bellman_optimality_backup(mdp, Q)
        if np.max(np.abs(Q_new - Q)) < tol:
            return Q_new
        Q = Q_new
    raise NonConvergence(f"value iteration did not reach tol={tol} in {max_iters} sweeps")


def distributional_value_iteration(mdp: TabularMDP, grid=None, tol: float = 1e-10, n_atoms: int = 51,
                                   max_iters: int = 100_000) -> DistTable:
    """Projected distributional backups under the greedy-by-expectation policy."""
    grid = mdp.value_grid(n_atoms) if grid is None else np.asarray(grid, dtype=float)
    op = ProjectedBellman(mdp, grid)
    S, A, N = mdp.n_states, mdp.n_actions, grid.size
    probs = np.zeros((S, A, N))
    probs[:, :, D._nearest_index(grid, 0.0)] = 1.0
    for _ in range(max_iters):
        pi = greedy_policy(probs @ grid)
        new = op(probs, pi)
        if np.max(np.abs(new - probs)) < tol:
            return DistTable(grid, new / new.sum(axis=2, keepdims=True))
        probs = new
    raise NonConvergence(f"distributional value iteration did not reach tol={tol} in {max_iters} sweeps")


def dump_qtable(Q) -> str:
    Q = np.asarray(Q)
    lines = [f"states {Q.shape[0]} actions {Q.shape[1]}"]
    for s in range(Q.shape[0]):
        for a in range(Q.shape[1]):
            lines.append(f"Q {s} {a} : {float(Q[s, a]):.17g}")
    return "\n".join(lines) + "\n"


def dump_disttable(Z: DistTable) -> str:
    S, A = Z.shape
    lines = [f"states {S} actions {A}"]
    for s in range(S):
        for a in range(A):
            d = Z[s, a]
            atoms = " ".join(format(float(x), ".17g") for x in d.atoms)
            probs = " ".join(format(float(x), ".17g") for x in d.probs)
            lines.append(f"Z {s} {a} : {atoms} | {probs}")
    return "\n".join(lines) + "\n"


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "s", "a", "q"])
    for i, Q in enumerate(trace):
        for s in range(Q.shape[0]):
            for a in range(Q.shape[1]):
                w.writerow([i, s, a, format(float(Q[s, a]), ".17g")])
    return buf.getvalue()
