"""Agents that interact with a `TabularMDP`, and the seeded run loop."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..mdp import TabularMDP, sample_transition
from ..nn import MLP
from .config import AgentConfig
from .learners import (
    CategoricalCritic,
    QuantileCritic,
    RunStats,
    ScalarCritic,
    SoftmaxPolicy,
    _optimizer,
    derac_actor_step,
    fqi_update,
    fzi_categorical_update,
)
from .replay import ReplayBuffer, TargetNetworkPair

AC_VARIANTS = ("AC", "AC+VE", "AC+RE", "AC+RE+VE")
VARIANTS = ("fqi", "fzi", "derac") + AC_VARIANTS


def variant_config(variant: str, config: AgentConfig) -> AgentConfig:
    """Pin the fields that define a variant.

    AC is an actor-critic with a scalar critic and no entropy term; VE
    turns on the actor's entropy bonus; RE swaps in the quantile critic.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant in AC_VARIANTS:
        return config.replace(
            critic="quantile" if "RE" in variant else "scalar",
            entropy_bonus="VE" in variant,
        )
    if variant == "derac":
        return config.replace(critic="categorical", entropy_bonus=False)
    if variant == "fzi":
        return config.replace(critic="categorical")
    return config.replace(critic="scalar")


def support_grid(mdp: TabularMDP, config: AgentConfig) -> np.ndarray:
    lo, hi = mdp.value_bounds()
    lo = lo if config.v_min is None else config.v_min
    hi = hi if config.v_max is None else config.v_max
    return np.linspace(lo, hi, config.n_atoms)


class ValueAgent:
    """Neural FQI (scalar Q) or categorical Neural FZI with epsilon-greedy acting."""

    def __init__(self, mdp: TabularMDP, kind: str, config: AgentConfig, rng):
        self.mdp, self.kind, self.config = mdp, kind, config
        S, A = mdp.n_states, mdp.n_actions
        if kind == "fqi":
            net = MLP([S, *config.hidden, A], config.activation, rng=rng)
        else:
            self.grid = support_grid(mdp, config)
            N = self.grid.size
            net = MLP([S, *config.hidden, A * N], config.activation, softmax_group=N, rng=rng)
        self.pair = TargetNetworkPair(net, config.target_period, config.polyak_tau)
        self.opt = _optimizer(config, config.lr_critic)

    def q_values(self, x):
        out = self.pair.online(x)
        if self.kind == "fqi":
            return out
        return out.reshape(out.shape[0], self.mdp.n_actions, -1) @ self.grid

    def greedy(self, s: int) -> int:
        return int(np.argmax(self.q_values(self.mdp.features(s))[0]))

    def act(self, s: int, rng) -> int:
        if rng.random() < self.config.explore:
            return int(rng.integers(self.mdp.n_actions))
        return self.greedy(s)

    def learn(self, batch, stats: RunStats, rng) -> float:
        net, target = self.pair.online, self.pair.target
        if self.kind == "fqi":
            stats.updates += 1
            return fqi_update(net, target, batch, self.config, self.opt)
        return fzi_categorical_update(net, target, batch, self.config, self.opt, self.grid, stats=stats)


class ActorCriticAgent:
    def __init__(self, mdp: TabularMDP, config: AgentConfig, rng):
        self.mdp, self.config = mdp, config
        S, A = mdp.n_states, mdp.n_actions
        if config.critic == "scalar":
            self.critic = ScalarCritic(S, A, config, rng)
        elif config.critic == "categorical":
            self.critic = CategoricalCritic(S, A, config, rng, support_grid(mdp, config))
        else:
            self.critic = QuantileCritic(S, A, config, rng)
        self.policy = SoftmaxPolicy(S, A, config, rng)
        self.pair = self.critic.pair

    def greedy(self, s: int) -> int:
        return int(np.argmax(self.policy.probs(self.mdp.features(s))[0]))

    def act(self, s: int, rng) -> int:
        p = self.policy.probs(self.mdp.features(s))[0]
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))

    def learn(self, batch, stats: RunStats, rng) -> float:
        next_policy = self.policy.probs(batch["x2"])
        loss = self.critic.update(batch, next_policy, stats, rng)
        derac_actor_step(self.policy.net, self.critic, batch, self.config, self.policy.opt)
        stats.updates += 1
        return loss


def make_agent(mdp: TabularMDP, variant: str, config: AgentConfig, rng):
    config = variant_config(variant, config)
    if variant in ("fqi", "fzi"):
        return ValueAgent(mdp, variant, config, rng)
    return ActorCriticAgent(mdp, config, rng)


@dataclass
class RunRecord:
    variant: str
    seed: int
    curve: list = field(default_factory=list)  # (step, return_mean, return_std)
    episodes: list = field(default_factory=list)  # (step, episode, return)
    final_policy: list = field(default_factory=list)  # greedy action per state
    stats: RunStats = field(default_factory=RunStats)
    sync_events: int = 0
    config: AgentConfig | None = None

    def episodes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "episode", "return", "seed", "variant"])
        for step, ep, ret in self.episodes:
            w.writerow([step, ep, format(ret, ".17g"), self.seed, self.variant])
        return buf.getvalue()

    def metadata_text(self) -> str:
        lines = [f"variant = {self.variant}", f"seed = {self.seed}"]
        lines += [f"clipped_decompositions = {self.stats.clipped_decompositions}",
                  f"updates = {self.stats.updates}", f"sync_events = {self.sync_events}"]
        if self.config is not None:
            lines += [f"config.{k} = {v}" for k, v in self.config.as_dict().items()]
        return "\n".join(lines) + "\n"


def evaluate(mdp: TabularMDP, agent, episodes: int, rng, max_len: int) -> np.ndarray:
    """Undiscounted returns of the greedy policy."""
    returns = np.zeros(episodes)
    for e in range(episodes):
        s, total = mdp.start_state, 0.0
        for _ in range(max_len):
            r, s, done = sample_transition(mdp, s, agent.greedy(s), rng)
            total += r
            if done:
                break
        returns[e] = total
    return returns


def run_agent(mdp: TabularMDP, variant: str, config: AgentConfig, seed: int, total_steps: int,
              eval_every: int = 500, eval_episodes: int = 10) -> RunRecord:
    """Train one agent for ``total_steps`` environment steps; bit-reproducible per seed."""
    init_rng, env_rng, learn_rng, eval_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    agent = make_agent(mdp, variant, config, init_rng)
    config = variant_config(variant, config)
    buffer = ReplayBuffer(config.buffer_capacity, learn_rng)
    record = RunRecord(variant, seed, config=config)
    eye = np.eye(mdp.n_states)
    s, ep_return, ep_len, episode = mdp.start_state, 0.0, 0, 0
    for step in range(1, total_steps + 1):
        a = agent.act(s, env_rng)
        r, s2, done = sample_transition(mdp, s, a, env_rng)
        buffer.push(s, a, r, s2, done)
        ep_return += r
        ep_len += 1
        s = s2
        if done or ep_len >= config.max_episode_len:
            record.episodes.append((step, episode, ep_return))
            episode += 1
            s, ep_return, ep_len = mdp.start_state, 0.0, 0
        if step >= config.learning_starts:
            idx = buffer.sample_indices(config.batch_size)
            batch = {
                "x": eye[buffer.states[idx]],
                "a": buffer.actions[idx],
                "r": buffer.rewards[idx],
                "x2": eye[buffer.next_states[idx]],
                "done": buffer.dones[idx],
            }
            agent.learn(batch, record.stats, learn_rng)
            agent.pair.sync(step)
        if eval_every and step % eval_every == 0:
            rets = evaluate(mdp, agent, eval_episodes, eval_rng, config.max_episode_len)
            record.curve.append((step, float(rets.mean()), float(rets.std())))
    record.final_policy = [agent.greedy(s) for s in range(mdp.n_states)]
    record.sync_events = agent.pair.sync_events
    return record


def ac_variant_run(env: TabularMDP, variant: str, config: AgentConfig, seed: int, total_steps: int = 3000,
                   eval_every: int = 500, eval_episodes: int = 10) -> list:
    """Per-episode training returns of one AC-family run."""
    if variant not in AC_VARIANTS:
        raise ValueError(f"{variant!r} is not an AC variant")
    record = run_agent(env, variant, config, seed, total_steps, eval_every, eval_episodes)
    return [ret for _, _, ret in record.episodes]
