"""Loss functions and targets shared by the learning agents.

Batched helpers return both a value and the gradient with respect to the
quantity the network produces, so update code can hand the gradient
straight to `derlab.nn.backward`.
"""

from __future__ import annotations

import numpy as np

from .. import distributions as D
from ..distributions import CategoricalDist, QuantileDist
from ..errors import AbsoluteContinuity, AtomMismatch, ClippedDecomposition

_TINY = 1e-300


def categorical_targets(target_probs_next, rewards, dones, grid, gamma, next_policy=None):
    """Projected targets r + gamma * Z(s', a') for a batch.

    ``target_probs_next`` has shape (B, A, N).  The next action is greedy
    by expectation unless ``next_policy`` (B, A) is given, in which case
    the target is the policy-weighted mixture.  Terminal transitions give
    a point mass at r.
    """
    grid = np.asarray(grid, dtype=float)
    B = target_probs_next.shape[0]
    if next_policy is None:
        greedy = np.argmax(target_probs_next @ grid, axis=1)
        nxt = target_probs_next[np.arange(B), greedy]
    else:
        nxt = np.einsum("ba,ban->bn", next_policy, target_probs_next)
    nxt = np.where(np.asarray(dones)[:, None], 0.0, nxt)
    # a terminal sample keeps its mass on a single atom at r
    nxt[np.asarray(dones), 0] = 1.0
    scale = np.where(dones, 0.0, gamma)
    atoms = rewards[:, None] + scale[:, None] * grid[None, :]
    out = D.project_probs(atoms, nxt, grid)
    return out / out.sum(axis=1, keepdims=True)


def fzi_categorical_target(target_probs_next, reward, done, grid, gamma) -> CategoricalDist:
    """Single-transition version of `categorical_targets` (greedy next action)."""
    probs = categorical_targets(
        np.asarray(target_probs_next, dtype=float)[None], np.array([float(reward)]), np.array([bool(done)]),
        grid, gamma,
    )[0]
    return CategoricalDist(grid, probs)


def decomposed_ce_loss(target: CategoricalDist, predicted: CategoricalDist, epsilon: float) -> float:
    """-log q_m + alpha * H(mu, q) with alpha = eps / (1 - eps).

    Raises `ClippedDecomposition` when mu cannot be recovered exactly from
    the target; callers fall back to plain cross-entropy for that sample.
    """
    if not target.same_grid(predicted):
        raise AtomMismatch("target and prediction live on different grids")
    dec = D.decompose_exact(target, epsilon)
    if dec.clipped:
        raise ClippedDecomposition(f"decomposition of the target at eps={epsilon} needs clipping")
    q_m = predicted.probs[dec.bin]
    if q_m <= 0:
        raise AbsoluteContinuity("prediction has zero mass at the expectation bin")
    alpha = epsilon / (1.0 - epsilon)
    return float(-np.log(q_m) + alpha * D.cross_entropy(dec.mu, predicted))


def nearest_bins(grid, xs) -> np.ndarray:
    """Vectorized nearest-atom index (ties to the lower atom)."""
    grid = np.asarray(grid, dtype=float)
    xs = np.asarray(xs, dtype=float)
    i = np.clip(np.searchsorted(grid, xs, side="left"), 1, grid.size - 1)
    lower = xs - grid[i - 1] <= grid[i] - xs
    out = np.where(lower, i - 1, i)
    out = np.where(xs <= grid[0], 0, out)
    return np.where(xs >= grid[-1], grid.size - 1, out)


def decompose_batch(target_probs, grid, epsilon):
    """Row-wise `decompose_exact`: returns ``(mu, bins, clipped_mask)``.

    Clipped rows have their negative remainder mass zeroed and are
    renormalized, exactly as the single-distribution version does.
    """
    if not 0.0 < epsilon < 1.0:
        raise D.EpsilonOutOfRange(f"epsilon must lie in (0, 1), got {epsilon!r}")
    B = len(target_probs)
    bins = nearest_bins(grid, target_probs @ np.asarray(grid, dtype=float))
    raw = np.array(target_probs, dtype=float, copy=True)
    raw[np.arange(B), bins] -= 1.0 - epsilon
    raw /= epsilon
    negative = np.any(raw < 0.0, axis=1)
    raw = np.where(negative[:, None], np.maximum(raw, 0.0), raw)
    total = raw.sum(axis=1)
    clipped = negative | (np.abs(total - 1.0) > D.PROB_TOL)
    return raw / total[:, None], bins, clipped


def decomposed_weights(target_probs, grid, epsilon):
    """Per-sample weights w with loss = -sum_i w_i log q_i for the decomposed form.

    Returns ``(weights, clipped_mask)``; clipped samples get the plain
    target (ordinary cross-entropy) as their weights.
    """
    alpha = epsilon / (1.0 - epsilon)
    mu, bins, clipped = decompose_batch(target_probs, grid, epsilon)
    weights = alpha * mu
    weights[np.arange(len(bins)), bins] += 1.0
    weights[clipped] = np.asarray(target_probs, dtype=float)[clipped]
    return weights, clipped


def cross_entropy_batch(weights, q):
    """Mean over the batch of -sum_i w_i log q_i, and its gradient in q."""
    B = q.shape[0]
    qs = np.maximum(q, _TINY)
    support = weights > 0
    if np.any(q[support] <= 0):
        raise AbsoluteContinuity("prediction has zero mass where the target is positive")
    loss = -np.sum(np.where(support, weights * np.log(qs), 0.0)) / B
    return float(loss), -weights / qs / B


def sample_quantile_fractions(n: int, rng: np.random.Generator) -> np.ndarray:
    """Ascending fractions ending at 1: cumulative sums of n uniform draws,
    normalized by their total."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return fractions_from_draws(rng.random(n))


def fractions_from_draws(draws) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    c = np.cumsum(draws)
    tau = c / c[-1]
    tau[-1] = 1.0
    return tau


def huber(u, kappa: float):
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u * u, kappa * (a - 0.5 * kappa))


def quantile_huber_batch(pred, fractions, targets, kappa: float):
    """Quantile Huber loss for a batch.

    ``pred`` (B, N) are quantile values at ``fractions`` (B, N); ``targets``
    (B, M) are target samples.  Returns the mean over batch and pairs
    (i, j) of |tau_i - 1{u < 0}| * Huber(u) / kappa with u = target_j - pred_i,
    and the gradient with respect to ``pred``.
    """
    u = targets[:, None, :] - pred[:, :, None]  # (B, N, M)
    weight = np.abs(fractions[:, :, None] - (u < 0))
    B, N, M = u.shape
    loss = np.sum(weight * huber(u, kappa) / kappa) / (B * N * M)
    dhuber = np.clip(u, -kappa, kappa)
    grad = -np.sum(weight * dhuber / kappa, axis=2) / (B * N * M)
    return float(loss), grad


def quantile_huber_loss(predicted: QuantileDist, targets, kappa: float = 1.0) -> float:
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    targets = np.asarray(targets, dtype=float).reshape(1, -1)
    loss, _ = quantile_huber_batch(predicted.values[None], predicted.fractions[None], targets, kappa)
    return loss


def expected_td_loss(pred_means, targets):
    """Mean squared TD error between predicted expectations and targets."""
    diff = targets - pred_means
    return float(np.mean(diff * diff)), -2.0 * diff / diff.size
