"""Critics, policies and their one-step updates.

A batch is a dict with feature arrays ``x`` and ``x2`` (B, d), integer
actions ``a``, rewards ``r`` and terminal flags ``done``.  Every update
applies exactly one Adam step and returns the loss (or objective) value
computed before that step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import MLP, AdamState, adam_step, backward, forward
from . import losses as L
from .config import AgentConfig
from .replay import TargetNetworkPair


@dataclass
class RunStats:
    clipped_decompositions: int = 0
    updates: int = 0


def _optimizer(config: AgentConfig, lr: float) -> AdamState:
    return AdamState(lr=lr, eps=config.adam_eps)


def _scatter_action(grad_block, actions, n_actions, group=1):
    """Place per-sample gradients for the taken action into a full output gradient."""
    B = grad_block.shape[0]
    full = np.zeros((B, n_actions, group))
    full[np.arange(B), actions] = grad_block.reshape(B, group)
    return full.reshape(B, n_actions * group)


def fqi_update(net: MLP, target_net: MLP, batch, config: AgentConfig, opt: AdamState) -> float:
    """One regression step toward y = r + gamma * max_a Q_target(s', a)."""
    q_next = target_net(batch["x2"])
    y = batch["r"] + np.where(batch["done"], 0.0, config.gamma * q_next.max(axis=1))
    out, cache = forward(net, batch["x"])
    B, A = out.shape
    pred = out[np.arange(B), batch["a"]]
    loss, g = L.expected_td_loss(pred, y)
    adam_step(net.params, backward(net, cache, _scatter_action(g, batch["a"], A)), opt)
    return loss


def fzi_categorical_update(net: MLP, target_net: MLP, batch, config: AgentConfig, opt: AdamState, grid,
                           mode: str | None = None, epsilon: float | None = None,
                           stats: RunStats | None = None) -> float:
    """Categorical fitted-Z step.

    ``vanilla_ce`` fits the projected target by cross-entropy,
    ``decomposed`` uses -log q_m + alpha * H(mu, q) (clipped samples fall
    back to cross-entropy and are counted), ``ablation_mix`` fits
    (1 - eps) * delta_m + eps * target.
    """
    mode = config.fzi_mode if mode is None else mode
    epsilon = config.epsilon if epsilon is None else epsilon
    grid = np.asarray(grid, dtype=float)
    N = grid.size
    B = len(batch["a"])
    tp = target_net(batch["x2"]).reshape(B, -1, N)
    target = L.categorical_targets(tp, batch["r"], batch["done"], grid, config.gamma)
    if mode == "vanilla_ce":
        weights = target
    elif mode == "ablation_mix":
        weights = epsilon * target
        m = L.nearest_bins(grid, target @ grid)
        weights[np.arange(B), m] += 1.0 - epsilon
    elif mode == "decomposed":
        weights, clipped = L.decomposed_weights(target, grid, epsilon)
        if stats is not None:
            stats.clipped_decompositions += int(clipped.sum())
    else:
        raise ValueError(f"unknown FZI mode {mode!r}")
    out, cache = forward(net, batch["x"])
    A = out.shape[1] // N
    q = out.reshape(B, A, N)[np.arange(B), batch["a"]]
    loss, g = L.cross_entropy_batch(weights, q)
    adam_step(net.params, backward(net, cache, _scatter_action(g, batch["a"], A, N)), opt)
    if stats is not None:
        stats.updates += 1
    return loss


def derac_critic_loss(net: MLP, target_net: MLP, batch, config: AgentConfig, opt: AdamState | None, grid,
                      next_policy, stats: RunStats | None = None, parts: dict | None = None) -> float:
    """(1 - lam) * (expected TD error)^2 + lam * H(mu, q_theta), then one step.

    The TD target is r + gamma * E_{a'~pi}[E q_target(s', a')].  mu comes
    from the projected target distribution, decomposed or whole according
    to ``config.mu_mode``.  Pass ``opt=None`` to evaluate without stepping;
    ``parts`` (if given) receives the two term values.
    """
    grid = np.asarray(grid, dtype=float)
    N = grid.size
    B = len(batch["a"])
    lam = config.lam
    tp = target_net(batch["x2"]).reshape(B, -1, N)
    next_means = np.einsum("ba,ba->b", next_policy, tp @ grid)
    y = batch["r"] + np.where(batch["done"], 0.0, config.gamma * next_means)
    target = L.categorical_targets(tp, batch["r"], batch["done"], grid, config.gamma, next_policy)
    if config.mu_mode == "whole":
        mu = target
    else:
        mu, _, clipped = L.decompose_batch(target, grid, config.epsilon)
        if stats is not None:
            stats.clipped_decompositions += int(clipped.sum())
    out, cache = forward(net, batch["x"])
    A = out.shape[1] // N
    q = out.reshape(B, A, N)[np.arange(B), batch["a"]]
    td, g_td = L.expected_td_loss(q @ grid, y)
    ce, g_ce = L.cross_entropy_batch(mu, q)
    if parts is not None:
        parts.update(td=td, ce=ce)
    if lam == 0.0:
        loss, g = td, g_td[:, None] * grid[None, :]
    elif lam == 1.0:
        loss, g = ce, g_ce
    else:
        loss = (1.0 - lam) * td + lam * ce
        g = (1.0 - lam) * g_td[:, None] * grid[None, :] + lam * g_ce
    if opt is not None:
        adam_step(net.params, backward(net, cache, _scatter_action(g, batch["a"], A, N)), opt)
    return loss


def derac_actor_step(policy_net: MLP, critic, batch, config: AgentConfig, opt: AdamState) -> float:
    """Ascend E_{a~pi(.|s)}[Q(s, a)] (plus beta * H(pi) with the VE switch).

    The expectation over actions is exact; only the policy parameters move.
    """
    x = batch["x"]
    Q = critic.q_values(x)
    pi, cache = forward(policy_net, x)
    B = x.shape[0]
    objective = np.sum(pi * Q) / B
    g = Q.copy()
    if config.entropy_bonus and config.beta > 0:
        logp = np.log(np.maximum(pi, 1e-300))
        objective += config.beta * float(-np.sum(pi * logp)) / B
        g += config.beta * (-logp - 1.0)
    adam_step(policy_net.params, backward(policy_net, cache, -g / B), opt)
    return float(objective)


def expected_sarsa_update(critic: "ScalarCritic", batch, next_policy, config: AgentConfig) -> float:
    q_next = critic.pair.target(batch["x2"])
    y = batch["r"] + np.where(batch["done"], 0.0, config.gamma * np.sum(next_policy * q_next, axis=1))
    out, cache = forward(critic.net, batch["x"])
    B, A = out.shape
    loss, g = L.expected_td_loss(out[np.arange(B), batch["a"]], y)
    adam_step(critic.net.params, backward(critic.net, cache, _scatter_action(g, batch["a"], A)), critic.opt)
    return loss


class ScalarCritic:
    def __init__(self, n_in: int, n_actions: int, config: AgentConfig, rng):
        self.net = MLP([n_in, *config.hidden, n_actions], config.activation, rng=rng)
        self.pair = TargetNetworkPair(self.net, config.target_period, config.polyak_tau)
        self.opt = _optimizer(config, config.lr_critic)
        self.config = config

    def q_values(self, x, target: bool = False):
        return (self.pair.target if target else self.net)(x)

    def update(self, batch, next_policy, stats, rng) -> float:
        return expected_sarsa_update(self, batch, next_policy, self.config)


class CategoricalCritic:
    """Softmax head with one group of atom probabilities per action."""

    def __init__(self, n_in: int, n_actions: int, config: AgentConfig, rng, grid):
        self.grid = np.asarray(grid, dtype=float)
        N = self.grid.size
        self.net = MLP([n_in, *config.hidden, n_actions * N], config.activation, softmax_group=N, rng=rng)
        self.pair = TargetNetworkPair(self.net, config.target_period, config.polyak_tau)
        self.opt = _optimizer(config, config.lr_critic)
        self.config = config
        self.n_actions = n_actions

    def probs(self, x, target: bool = False):
        out = (self.pair.target if target else self.net)(x)
        return out.reshape(out.shape[0], self.n_actions, self.grid.size)

    def q_values(self, x, target: bool = False):
        return self.probs(x, target) @ self.grid

    def update(self, batch, next_policy, stats, rng) -> float:
        return derac_critic_loss(self.net, self.pair.target, batch, self.config, self.opt, self.grid,
                                 next_policy, stats)


def tau_embedding(taus, size: int):
    """cos(pi * k * tau) for k = 0 .. size-1."""
    return np.cos(np.pi * np.asarray(taus)[..., None] * np.arange(size))


class QuantileCritic:
    """Implicit-quantile critic: Z(s, a) at fraction tau from [x, cos-embedding(tau)]."""

    def __init__(self, n_in: int, n_actions: int, config: AgentConfig, rng):
        k = config.quantile_embedding
        self.net = MLP([n_in + k, *config.hidden, n_actions], config.activation, rng=rng)
        self.pair = TargetNetworkPair(self.net, config.target_period, config.polyak_tau)
        self.opt = _optimizer(config, config.lr_critic)
        self.config = config
        n = config.n_quantiles
        self.mean_taus = (2 * np.arange(1, n + 1) - 1) / (2 * n)

    def _inputs(self, x, taus):
        B, N = taus.shape
        xs = np.repeat(x, N, axis=0)
        return np.concatenate([xs, tau_embedding(taus.ravel(), self.config.quantile_embedding)], axis=1)

    def quantiles(self, x, taus, target: bool = False):
        """Values (B, N, A) at per-sample fractions ``taus`` (B, N)."""
        out = (self.pair.target if target else self.net)(self._inputs(x, taus))
        return out.reshape(taus.shape[0], taus.shape[1], -1)

    def q_values(self, x, target: bool = False):
        taus = np.broadcast_to(self.mean_taus, (x.shape[0], self.mean_taus.size))
        return self.quantiles(x, taus, target).mean(axis=1)

    def update(self, batch, next_policy, stats, rng) -> float:
        cfg = self.config
        x, x2 = batch["x"], batch["x2"]
        B, N = x.shape[0], cfg.n_quantiles
        cum = np.stack([L.sample_quantile_fractions(N, rng) for _ in range(B)])
        # regress at the midpoints of the sampled fraction intervals
        taus = 0.5 * (cum + np.concatenate([np.zeros((B, 1)), cum[:, :-1]], axis=1))
        next_taus = rng.random((B, N))
        cdf = np.cumsum(next_policy, axis=1)
        a2 = np.minimum((rng.random((B, 1)) > cdf).sum(axis=1), next_policy.shape[1] - 1)
        z_next = self.quantiles(x2, next_taus, target=True)[np.arange(B), :, a2]
        y = batch["r"][:, None] + np.where(batch["done"], 0.0, cfg.gamma)[:, None] * z_next
        out, cache = forward(self.net, self._inputs(x, taus))
        A = out.shape[1]
        pred = out.reshape(B, N, A)[np.arange(B), :, batch["a"]]
        loss, g = L.quantile_huber_batch(pred, taus, y, cfg.huber_kappa)
        full = np.zeros((B, N, A))
        full[np.arange(B), :, batch["a"]] = g
        adam_step(self.net.params, backward(self.net, cache, full.reshape(B * N, A)), self.opt)
        return loss


class SoftmaxPolicy:
    def __init__(self, n_in: int, n_actions: int, config: AgentConfig, rng):
        self.net = MLP([n_in, *config.hidden, n_actions], config.activation, softmax_group=n_actions, rng=rng)
        self.opt = _optimizer(config, config.lr_actor)

    def probs(self, x):
        return self.net(x)
