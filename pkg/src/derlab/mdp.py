"""Finite MDPs: constructors for desk-scale environments, sampling, and a
plain-text serialization.

Rewards are deterministic per transition ``(s, a, s')`` by default.  A
pair ``(s, a)`` may instead carry a `CategoricalDist` reward drawn
independently of the next state; that is how non-degenerate one-step
return distributions are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import CategoricalDist, uniform_grid
from .errors import InvalidStateAction

__all__ = [
    "TabularMDP",
    "Transition",
    "make_chain",
    "make_cliff_grid",
    "make_risky_bandit",
    "sample_transition",
    "random_mdp",
    "to_text",
    "from_text",
    "LEFT",
    "RIGHT",
    "SAFE",
    "RISKY",
]

LEFT, RIGHT = 0, 1
SAFE, RISKY = 0, 1
UP, EAST, DOWN, WEST = 0, 1, 2, 3


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # r[s, a, s']
    gamma: float
    terminal: np.ndarray
    reward_dists: dict = field(default_factory=dict)  # (s, a) -> CategoricalDist
    start_state: int = 0
    name: str = "mdp"

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        S, A = P.shape[:2]
        if P.shape != (S, A, S):
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        R = np.array(self.reward, dtype=float)
        if R.shape == (S, A):
            R = np.repeat(R[:, :, None], S, axis=2)
        if R.shape != (S, A, S):
            raise ValueError(f"reward must have shape (S, A) or (S, A, S), got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("each P[s, a] must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        term = np.zeros(S, dtype=bool) if self.terminal is None else np.array(self.terminal, dtype=bool)
        for s in np.flatnonzero(term):
            if not np.all(P[s, :, s] == 1.0) or np.any(R[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
            if any(k[0] == s for k in self.reward_dists):
                raise ValueError(f"terminal state {s} cannot carry a reward distribution")
        for (s, a), d in self.reward_dists.items():
            if not isinstance(d, CategoricalDist):
                raise TypeError(f"reward distribution for {(s, a)} must be a CategoricalDist")
        for arr in (P, R, term):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "reward_dists", dict(self.reward_dists))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def expected_reward(self) -> np.ndarray:
        """E[R(s, a)] as an (S, A) table."""
        r = np.einsum("ijk,ijk->ij", self.transition, self.reward)
        for (s, a), d in self.reward_dists.items():
            r[s, a] = float(np.dot(d.atoms, d.probs))
        return r

    def reward_outcomes(self, s: int, a: int, s_next: int):
        """(values, probs) of the reward on the transition ``s, a -> s_next``."""
        d = self.reward_dists.get((s, a))
        if d is None:
            return np.array([self.reward[s, a, s_next]]), np.array([1.0])
        return d.atoms, d.probs

    def reward_bounds(self) -> tuple[float, float]:
        lo, hi = float(self.reward.min()), float(self.reward.max())
        for d in self.reward_dists.values():
            lo, hi = min(lo, d.atoms[0]), max(hi, d.atoms[-1])
        return lo, hi

    def value_bounds(self) -> tuple[float, float]:
        """Return range [min(Rmin, 0), max(Rmax, 0)] / (1 - gamma)."""
        lo, hi = self.reward_bounds()
        scale = 1.0 / (1.0 - self.gamma)
        return min(lo, 0.0) * scale, max(hi, 0.0) * scale

    def value_grid(self, n_atoms: int) -> np.ndarray:
        lo, hi = self.value_bounds()
        if hi == lo:
            hi = lo + 1.0
        return uniform_grid(lo, hi, n_atoms)

    def features(self, s) -> np.ndarray:
        """One-hot state encoding (works on an int or an int array)."""
        return np.eye(self.n_states)[s]


Transition = tuple  # (state, action, reward, next_state, done)


def make_chain(n: int, slip: float = 0.0, gamma: float = 0.9) -> TabularMDP:
    """Chain of ``n`` states; state ``n-1`` is the absorbing terminal.

    From state 0, LEFT exits into the terminal with reward 0.01; RIGHT
    from state ``n-2`` enters it with reward 1.  Every intended move
    happens with probability ``1 - slip`` and reverses otherwise.
    """
    if n < 2:
        raise ValueError("a chain needs at least 2 states")
    if not 0.0 <= slip <= 0.5:
        raise ValueError("slip must lie in [0, 0.5]")
    term = n - 1
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2, n))

    def dest(s, move):
        if move == LEFT:
            return (term, 0.01) if s == 0 else (s - 1, 0.0)
        return (term, 1.0) if s == n - 2 else (s + 1, 0.0)

    dists = {}
    for s in range(n - 1):
        for a in (LEFT, RIGHT):
            outcomes = [(*dest(s, move), prob) for move, prob in ((a, 1.0 - slip), (1 - a, slip)) if prob > 0]
            for s2, r, prob in outcomes:
                P[s, a, s2] += prob
                R[s, a, s2] = r
            if len(outcomes) == 2 and outcomes[0][0] == outcomes[1][0]:
                # n == 2: both moves end in the terminal, so the reward is
                # random given (s, a) and independent of the next state
                (_, r0, p0), (_, r1, p1) = sorted(outcomes, key=lambda o: o[1])
                dists[(s, a)] = CategoricalDist([r0, r1], [p0, p1])
                R[s, a] = 0.0
    P[term, :, term] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[term] = True
    return TabularMDP(P, R, gamma, terminal, dists, name=f"chain{n}-slip{slip:g}")


def make_cliff_grid(width: int = 4, height: int = 3, fall_penalty: float = -1.0, gamma: float = 0.9) -> TabularMDP:
    """Cliff-walking grid.

    State ``y * width + x``; the start is (0, 0), the goal (width-1, 0)
    and the cells between them on row 0 are cliff.  Walking into the cliff
    pays ``fall_penalty`` and teleports back to the start; entering the
    goal pays 1 and ends the episode.  Moves off the grid stay put.
    """
    if width < 3 or height < 2:
        raise ValueError("cliff grid needs width >= 3 and height >= 2")
    S = width * height
    start, goal = 0, width - 1
    cliff = set(range(1, width - 1))
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4, S))
    terminal = np.zeros(S, dtype=bool)
    moves = {UP: (0, 1), EAST: (1, 0), DOWN: (0, -1), WEST: (-1, 0)}
    for s in range(S):
        if s == goal or s in cliff:
            # cliff cells are unreachable; keep them absorbing
            P[s, :, s] = 1.0
            terminal[s] = True
            continue
        x, y = s % width, s // width
        for a, (dx, dy) in moves.items():
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height):
                nx, ny = x, y
            s2 = ny * width + nx
            if s2 in cliff:
                P[s, a, start] = 1.0
                R[s, a, start] = fall_penalty
            else:
                P[s, a, s2] = 1.0
                R[s, a, s2] = 1.0 if s2 == goal else 0.0
    return TabularMDP(P, R, gamma, terminal, start_state=start, name=f"cliff{width}x{height}")


def make_risky_bandit(mean: float = 1.0, spread: float = 1.0, gamma: float = 0.9) -> TabularMDP:
    """One decision, two arms with equal means.

    SAFE pays ``mean``; RISKY pays ``mean - spread`` or ``mean + spread``
    with probability 1/2 each.  State 1 is the terminal.
    """
    if spread <= 0:
        raise ValueError("spread must be positive")
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.zeros((2, 2, 2))
    R[0, SAFE, 1] = mean  # RISKY is paid entirely by its reward distribution
    risky = CategoricalDist([mean - spread, mean + spread], [0.5, 0.5])
    return TabularMDP(P, R, gamma, [False, True], {(0, RISKY): risky}, name="risky-bandit")


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               deterministic_rewards: bool = True, sparsity: float = 0.0) -> TabularMDP:
    """Random MDP with rewards in [-1, 1] and no terminal states."""
    P = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        P = P * (rng.random(P.shape) >= sparsity)
        empty = P.sum(axis=2) == 0
        idx = rng.integers(n_states, size=empty.sum())
        P[empty] = np.eye(n_states)[idx]
    P /= P.sum(axis=2, keepdims=True)
    # make rows sum to exactly 1 so the 1e-12 row check never trips on rounding
    P[..., -1] = 1.0 - P[..., :-1].sum(axis=2)
    P = np.maximum(P, 0.0)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    dists = {}
    if not deterministic_rewards:
        for s in range(n_states):
            for a in range(n_actions):
                vals = np.sort(rng.uniform(-1.0, 1.0, size=2))
                w = rng.uniform(0.1, 0.9)
                dists[(s, a)] = CategoricalDist(vals, [w, 1.0 - w])
        R[:] = 0.0  # the distributions carry the whole reward
    return TabularMDP(P, R, gamma, np.zeros(n_states, dtype=bool), dists, name="random")


def sample_transition(mdp: TabularMDP, s: int, a: int, rng: np.random.Generator):
    """Draw ``(reward, next_state, done)``; terminals return ``(0, s, True)``."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise InvalidStateAction(f"invalid state/action pair {(s, a)}")
    if mdp.terminal[s]:
        return 0.0, int(s), True
    cdf = np.cumsum(mdp.transition[s, a])
    s2 = int(min(np.searchsorted(cdf, rng.random(), side="right"), mdp.n_states - 1))
    d = mdp.reward_dists.get((s, a))
    if d is None:
        r = float(mdp.reward[s, a, s2])
    else:
        k = int(min(np.searchsorted(np.cumsum(d.probs), rng.random(), side="right"), d.atoms.size - 1))
        r = float(d.atoms[k])
    return r, s2, bool(mdp.terminal[s2])


def _fmt(xs) -> str:
    return " ".join(format(float(x), ".17g") for x in xs)


def to_text(mdp: TabularMDP) -> str:
    """Serialize to the line-oriented MDP text format.

    ``R s a : v`` is used when the reward does not depend on the next
    state, ``R s a s' : v`` otherwise, and ``R s a : dist atoms | probs``
    for a reward distribution.
    """
    S, A = mdp.n_states, mdp.n_actions
    lines = [f"states {S} actions {A} gamma {mdp.gamma!r}"]
    lines.append("start " + str(mdp.start_state))
    lines.append("terminal " + " ".join(str(s) for s in np.flatnonzero(mdp.terminal)))
    for s in range(S):
        for a in range(A):
            lines.append(f"P {s} {a} : {_fmt(mdp.transition[s, a])}")
    for s in range(S):
        for a in range(A):
            d = mdp.reward_dists.get((s, a))
            row = mdp.reward[s, a]
            if d is not None:
                lines.append(f"R {s} {a} : dist {_fmt(d.atoms)} | {_fmt(d.probs)}")
            elif np.all(row == row[0]):
                lines.append(f"R {s} {a} : {_fmt([row[0]])}")
            else:
                for s2 in range(S):
                    if row[s2] != 0.0:
                        lines.append(f"R {s} {a} {s2} : {_fmt([row[s2]])}")
    return "\n".join(lines) + "\n"


def from_text(text: str, name: str = "mdp") -> TabularMDP:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    head = lines[0].split()
    if len(head) != 6 or head[0::2] != ["states", "actions", "gamma"]:
        raise ValueError("header must read 'states S actions A gamma G'")
    S, A, gamma = int(head[1]), int(head[3]), float(head[5])
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    terminal = np.zeros(S, dtype=bool)
    dists = {}
    start = 0
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        if key == "start":
            start = int(rest)
        elif key == "terminal":
            terminal[[int(t) for t in rest.split()]] = True
        elif key in ("P", "R"):
            lhs, _, rhs = rest.partition(":")
            idx = [int(t) for t in lhs.split()]
            if key == "P":
                P[idx[0], idx[1]] = [float(v) for v in rhs.split()]
            elif rhs.split()[0] == "dist":
                atoms, _, probs = rhs.split(None, 1)[1].partition("|")
                dists[(idx[0], idx[1])] = CategoricalDist(
                    [float(v) for v in atoms.split()], [float(v) for v in probs.split()]
                )
            elif len(idx) == 3:
                R[idx[0], idx[1], idx[2]] = float(rhs)
            else:
                R[idx[0], idx[1], :] = float(rhs)
        else:
            raise ValueError(f"unrecognized line: {ln!r}")
    return TabularMDP(P, R, gamma, terminal, dists, start_state=start, name=name)
